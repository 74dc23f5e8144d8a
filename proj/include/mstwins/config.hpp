#pragma once

#include "mstwins/data.hpp"
#include "mstwins/loss.hpp"
#include "mstwins/model.hpp"

namespace mstwins {

struct TrainConfig {
  int64_t batch_size = 4;
  int64_t epochs = 100;
  uint64_t seed = 42;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;
  bool poly_schedule = true;  // lr * (1 - step/max_steps)^power, else constant
  double val_fraction = 0.0;
  double target_spacing = 0.0;  // 0 keeps the native grid
  int64_t eval_every = 1;       // Dice logging cadence in epochs (0 = final only)
  bool augment_enabled = true;
};

struct FullConfig {
  ModelConfig model;
  LossConfig loss;
  AugmentConfig augment;
  TrainConfig train;
};

// flat `key = value` text; '#' starts a comment; unknown keys are an error
FullConfig parse_config_text(const std::string& text);
FullConfig load_config(const std::string& path);
std::string dump_config(const FullConfig& cfg);

}  // namespace mstwins
