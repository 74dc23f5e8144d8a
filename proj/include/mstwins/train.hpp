#pragma once

#include "mstwins/config.hpp"

namespace mstwins {

struct OptimState {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;
  bool poly_schedule = true;
  int64_t step = 0;
  int64_t max_steps = 0;  // 0 disables the schedule
  std::vector<Tensor> velocity;  // aligned with the parameter registry order

  double current_lr() const;
};

OptimState make_optim(const ParamRegistry& params, const TrainConfig& cfg, int64_t max_steps);

// v <- m*v + g + wd*p; p <- p - lr*v; then the step counter and schedule
// advance. Every registered parameter must carry a gradient.
void sgd_step(ParamRegistry& params, OptimState& st);

struct MetricLog {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
  std::vector<double> dice_epochs;             // epoch index per Dice row
  std::vector<std::vector<double>> dice_rows;  // per-class then foreground mean
};

// Serialized as: "MST1", u32 version, u32-length-prefixed UTF-8 config dump,
// u32 record count, then (u32 name length, name, .tns tensor blob) records,
// all little-endian. Parameters, optimizer velocities, run counters, the rng
// seed and the metric history all travel as named tensor records.
struct Checkpoint {
  uint32_t version = 1;
  FullConfig config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
  double scalar_or(const std::string& name, double fallback) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct ImportReport {
  int64_t loaded = 0;
  std::vector<std::string> skipped;  // name + reason per rejected record
};

// copies every record whose name and shape match a model parameter
ImportReport load_parameters(const Checkpoint& ckpt, Model& model);
// same matching from a donor file; an empty file loads nothing
ImportReport import_weights(const std::string& path, Model& model);

struct EvalResult {
  std::vector<double> per_class;  // index 0 = background
  double mean_foreground = 0.0;
};

EvalResult evaluate(const Model& model, const std::vector<LabeledSample>& samples);
std::string format_eval(const EvalResult& r, bool csv);

struct TrainRun {
  Checkpoint checkpoint;
  MetricLog log;
};

// fresh run over cfg.train.epochs epochs; deterministic in (seed, config,
// dataset, thread count)
TrainRun train(const FullConfig& cfg, const std::vector<LabeledSample>& dataset);
// fresh run that checkpoints after `stop_epoch` epochs while keeping the
// full cfg.train.epochs learning-rate plan
TrainRun train_until(const FullConfig& cfg, const std::vector<LabeledSample>& dataset,
                     int64_t stop_epoch);
// continues a checkpointed run up to its configured epoch count
TrainRun resume(const Checkpoint& ckpt, const std::vector<LabeledSample>& dataset);

// builds a model with parameters initialized from the config's train seed
std::unique_ptr<Model> build_model(const FullConfig& cfg);

}  // namespace mstwins
