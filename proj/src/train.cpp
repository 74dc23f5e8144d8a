#include "mstwins/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mstwins {

namespace {
constexpr uint64_t kInitStream = 0x1B17;
constexpr uint64_t kShuffleStream = 0x5AFE;
constexpr uint64_t kSplitStream = 0xD1CE;
}  // namespace

double OptimState::current_lr() const {
  if (!poly_schedule || max_steps <= 0) return lr0;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(max_steps));
  return lr0 * std::pow(1.0 - frac, poly_power);
}

OptimState make_optim(const ParamRegistry& params, const TrainConfig& cfg, int64_t max_steps) {
  OptimState st;
  st.lr0 = cfg.lr;
  st.momentum = cfg.momentum;
  st.weight_decay = cfg.weight_decay;
  st.poly_power = cfg.poly_power;
  st.poly_schedule = cfg.poly_schedule;
  st.max_steps = max_steps;
  st.velocity.reserve(params.entries().size());
  for (const auto& [name, p] : params.entries()) {
    st.velocity.push_back(Tensor::zeros(p.shape()));
  }
  return st;
}

void sgd_step(ParamRegistry& params, OptimState& st) {
  MST_CHECK(st.velocity.size() == params.entries().size(), "sgd_step: optimizer/model mismatch");
  const double lr = st.current_lr();
  const double m = st.momentum;
  const double wd = st.weight_decay;
  const auto& entries = params.entries();
  const int64_t count = static_cast<int64_t>(entries.size());
  for (const auto& [name, p] : entries) {
    if (!p.has_grad()) throw Error("sgd_step: parameter " + name + " has no gradient");
  }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < count; ++i) {
    Tensor p = entries[static_cast<size_t>(i)].second;  // shares storage
    const std::vector<double>& g = p.grad();
    double* v = st.velocity[static_cast<size_t>(i)].data();
    double* w = p.data();
    const int64_t n = p.numel();
    for (int64_t j = 0; j < n; ++j) {
      v[j] = m * v[j] + g[static_cast<size_t>(j)] + wd * w[j];
      w[j] -= lr * v[j];
    }
  }
  ++st.step;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

double Checkpoint::scalar_or(const std::string& name, double fallback) const {
  const Tensor* t = find(name);
  return t && t->numel() == 1 ? t->data()[0] : fallback;
}

namespace {

void write_u32(std::ofstream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& in, const std::string& path) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  MST_CHECK(in.good(), "checkpoint: truncated file " + path);
  return v;
}

void write_tensor_blob(std::ofstream& out, const Tensor& t) {
  out.write("TNS1", 4);
  const uint8_t tag = 0;  // f64
  out.write(reinterpret_cast<const char*>(&tag), 1);
  const uint8_t rank = static_cast<uint8_t>(t.dim());
  out.write(reinterpret_cast<const char*>(&rank), 1);
  for (int64_t e : t.shape()) {
    const uint32_t v = static_cast<uint32_t>(e);
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  out.write(reinterpret_cast<const char*>(t.data()), t.numel() * 8);
}

Tensor read_tensor_blob(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  MST_CHECK(in.good() && std::memcmp(magic, "TNS1", 4) == 0,
            "checkpoint: malformed tensor record in " + path);
  uint8_t tag = 0, rank = 0;
  in.read(reinterpret_cast<char*>(&tag), 1);
  in.read(reinterpret_cast<char*>(&rank), 1);
  MST_CHECK(in.good() && tag == 0, "checkpoint: unexpected tensor dtype in " + path);
  Shape shape(rank);
  for (auto& e : shape) e = read_u32(in, path);
  Tensor t = make_tensor(shape);
  in.read(reinterpret_cast<char*>(t.data()), t.numel() * 8);
  MST_CHECK(in.good(), "checkpoint: truncated tensor payload in " + path);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  MST_CHECK(out.good(), "checkpoint: cannot open " + path + " for writing");
  out.write("MST1", 4);
  write_u32(out, ckpt.version);
  const std::string cfg = dump_config(ckpt.config);
  write_u32(out, static_cast<uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor_blob(out, t);
  }
  MST_CHECK(out.good(), "checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  MST_CHECK(in.good(), "checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  MST_CHECK(in.good() && std::memcmp(magic, "MST1", 4) == 0,
            "checkpoint: bad magic in " + path);
  Checkpoint ckpt;
  ckpt.version = read_u32(in, path);
  MST_CHECK(ckpt.version == 1, "checkpoint: unsupported version in " + path);
  const uint32_t cfg_len = read_u32(in, path);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), cfg_len);
  MST_CHECK(in.good(), "checkpoint: truncated config in " + path);
  ckpt.config = parse_config_text(cfg_text);
  const uint32_t count = read_u32(in, path);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    MST_CHECK(in.good(), "checkpoint: truncated record name in " + path);
    ckpt.tensors.emplace_back(std::move(name), read_tensor_blob(in, path));
  }
  return ckpt;
}

ImportReport load_parameters(const Checkpoint& ckpt, Model& model) {
  ImportReport rep;
  for (const auto& [name, t] : ckpt.tensors) {
    Tensor* dst = model.params().find(name);
    if (!dst) {
      rep.skipped.push_back(name + " (no matching parameter)");
      continue;
    }
    if (dst->shape() != t.shape()) {
      rep.skipped.push_back(name + " (shape " + shape_str(t.shape()) + " vs model " +
                            shape_str(dst->shape()) + ")");
      continue;
    }
    std::copy(t.data(), t.data() + t.numel(), dst->data());
    ++rep.loaded;
  }
  return rep;
}

ImportReport import_weights(const std::string& path, Model& model) {
  MST_CHECK(std::filesystem::exists(path), "import_weights: no such file " + path);
  if (std::filesystem::file_size(path) == 0) return ImportReport{};  // vacuous donor
  return load_parameters(load_checkpoint(path), model);
}

EvalResult evaluate(const Model& model, const std::vector<LabeledSample>& samples) {
  const int64_t k = model.config().num_classes;
  EvalResult r;
  r.per_class.assign(static_cast<size_t>(k), 0.0);
  MST_CHECK(!samples.empty(), "evaluate: empty dataset");
  for (const LabeledSample& s : samples) {
    MST_CHECK(s.mask.numel() > 0, "evaluate: empty mask");
    double max_label = 0;
    for (int64_t i = 0; i < s.mask.numel(); ++i) max_label = std::max(max_label, s.mask.data()[i]);
    MST_CHECK(max_label < static_cast<double>(k), "evaluate: mask class exceeds model classes");
    Tensor batch = reshape(s.image, {1, s.image.size(0), s.image.size(1), s.image.size(2)});
    CascadeOutput out = model.forward(batch);
    Tensor pred = argmax_axis(out.final_logits, 1);  // (1,H,W)
    Tensor pred2d = reshape(pred, {s.mask.size(0), s.mask.size(1)});
    for (int64_t c = 0; c < k; ++c) {
      r.per_class[static_cast<size_t>(c)] += dice_score(pred2d, s.mask, c);
    }
  }
  for (auto& v : r.per_class) v /= static_cast<double>(samples.size());
  double fg = 0.0;
  for (int64_t c = 1; c < k; ++c) fg += r.per_class[static_cast<size_t>(c)];
  r.mean_foreground = fg / static_cast<double>(k - 1);
  return r;
}

std::string format_eval(const EvalResult& r, bool csv) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  const size_t k = r.per_class.size();
  if (csv) {
    os << "average";
    for (size_t c = 1; c < k; ++c) os << ",class" << c;
    os << "\n" << r.mean_foreground;
    for (size_t c = 1; c < k; ++c) os << "," << r.per_class[c];
    os << "\n";
  } else {
    os << "average  ";
    for (size_t c = 1; c < k; ++c) os << "class" << c << "  ";
    os << "\n" << r.mean_foreground << "   ";
    for (size_t c = 1; c < k; ++c) os << r.per_class[c] << "  ";
    os << "\n";
  }
  return os.str();
}

namespace {

int64_t thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

struct Split {
  std::vector<int64_t> train_idx, holdout_idx;
};

Split make_split(int64_t n, double val_fraction, uint64_t seed) {
  Split sp;
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  if (val_fraction > 0.0 && n > 1) {
    Rng rng(Rng::mix(seed, kSplitStream));
    for (int64_t i = n - 1; i > 0; --i) {
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.index(i + 1))]);
    }
    int64_t holdout = std::min<int64_t>(n - 1, std::max<int64_t>(1, static_cast<int64_t>(
                                                   std::llround(val_fraction * static_cast<double>(n)))));
    sp.holdout_idx.assign(idx.begin(), idx.begin() + holdout);
    sp.train_idx.assign(idx.begin() + holdout, idx.end());
    std::sort(sp.holdout_idx.begin(), sp.holdout_idx.end());
    std::sort(sp.train_idx.begin(), sp.train_idx.end());
  } else {
    sp.train_idx = idx;
  }
  return sp;
}

MetricLog log_from_checkpoint(const Checkpoint& ckpt) {
  MetricLog log;
  if (const Tensor* t = ckpt.find("metrics.step_loss")) {
    log.step_loss.assign(t->data(), t->data() + t->numel());
  }
  if (const Tensor* t = ckpt.find("metrics.epoch_loss")) {
    log.epoch_loss.assign(t->data(), t->data() + t->numel());
  }
  if (const Tensor* t = ckpt.find("metrics.dice_epochs")) {
    log.dice_epochs.assign(t->data(), t->data() + t->numel());
  }
  if (const Tensor* t = ckpt.find("metrics.dice_rows")) {
    for (int64_t r = 0; r < t->size(0); ++r) {
      log.dice_rows.emplace_back(t->data() + r * t->size(1), t->data() + (r + 1) * t->size(1));
    }
  }
  return log;
}

Checkpoint snapshot(const Model& model, const OptimState& optim, const MetricLog& log,
                    const FullConfig& cfg, int64_t epoch_next) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  for (const auto& [name, p] : model.params().entries()) {
    ckpt.tensors.emplace_back(name, p.detached_copy());
  }
  const auto& entries = model.params().entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    ckpt.tensors.emplace_back("optim.velocity." + entries[i].first,
                              optim.velocity[i].detached_copy());
  }
  ckpt.tensors.emplace_back("optim.step", Tensor::scalar(static_cast<double>(optim.step)));
  ckpt.tensors.emplace_back("optim.max_steps",
                            Tensor::scalar(static_cast<double>(optim.max_steps)));
  ckpt.tensors.emplace_back("train.epoch_next", Tensor::scalar(static_cast<double>(epoch_next)));
  ckpt.tensors.emplace_back("rng.seed", Tensor::scalar(static_cast<double>(cfg.train.seed)));
  ckpt.tensors.emplace_back("run.threads", Tensor::scalar(static_cast<double>(thread_count())));
  if (!log.step_loss.empty()) {
    ckpt.tensors.emplace_back("metrics.step_loss",
                              Tensor::from_data({static_cast<int64_t>(log.step_loss.size())},
                                                log.step_loss));
  }
  if (!log.epoch_loss.empty()) {
    ckpt.tensors.emplace_back("metrics.epoch_loss",
                              Tensor::from_data({static_cast<int64_t>(log.epoch_loss.size())},
                                                log.epoch_loss));
  }
  if (!log.dice_rows.empty()) {
    ckpt.tensors.emplace_back("metrics.dice_epochs",
                              Tensor::from_data({static_cast<int64_t>(log.dice_epochs.size())},
                                                log.dice_epochs));
    const int64_t rows = static_cast<int64_t>(log.dice_rows.size());
    const int64_t cols = static_cast<int64_t>(log.dice_rows.front().size());
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(rows * cols));
    for (const auto& row : log.dice_rows) {
      MST_CHECK(static_cast<int64_t>(row.size()) == cols, "metric log: ragged dice rows");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    ckpt.tensors.emplace_back("metrics.dice_rows", Tensor::from_data({rows, cols}, std::move(flat)));
  }
  return ckpt;
}

TrainRun run_training(std::unique_ptr<Model> model, OptimState optim, MetricLog log,
                      const FullConfig& cfg, const std::vector<LabeledSample>& dataset,
                      int64_t start_epoch, int64_t stop_epoch) {
  MST_CHECK(!dataset.empty(), "train: dataset is empty");
  MST_CHECK(cfg.train.batch_size >= 1, "train: batch_size must be positive");
  cfg.loss.validate();

  const int64_t h = dataset.front().image.size(1);
  const int64_t w = dataset.front().image.size(2);
  const int64_t c = dataset.front().image.size(0);
  for (const auto& s : dataset) {
    MST_CHECK(s.image.size(0) == c && s.image.size(1) == h && s.image.size(2) == w,
              "train: all samples must share one extent");
  }

  Split split = make_split(static_cast<int64_t>(dataset.size()), cfg.train.val_fraction,
                           cfg.train.seed);
  const auto& train_idx = split.train_idx;
  const std::vector<int64_t>& eval_idx =
      split.holdout_idx.empty() ? split.train_idx : split.holdout_idx;

  auto eval_on = [&](std::vector<double>& row) {
    std::vector<LabeledSample> subset;
    subset.reserve(eval_idx.size());
    for (int64_t i : eval_idx) subset.push_back(dataset[static_cast<size_t>(i)]);
    EvalResult r = evaluate(*model, subset);
    row = r.per_class;
    row.push_back(r.mean_foreground);
  };

  const int64_t end_epoch = std::min(stop_epoch, cfg.train.epochs);
  for (int64_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
    // seeded shuffle; sample order depends only on (seed, epoch)
    std::vector<int64_t> order = train_idx;
    Rng shuffle_rng(Rng::mix(Rng::mix(cfg.train.seed, kShuffleStream), static_cast<uint64_t>(epoch)));
    for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuffle_rng.index(i + 1))]);
    }

    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.train.batch_size)) {
      const size_t take = std::min(static_cast<size_t>(cfg.train.batch_size), order.size() - pos);
      Tensor images = make_tensor({static_cast<int64_t>(take), c, h, w});
      Tensor masks = make_tensor({static_cast<int64_t>(take), h, w});
      for (size_t bi = 0; bi < take; ++bi) {
        const int64_t idx = order[pos + bi];
        LabeledSample s = dataset[static_cast<size_t>(idx)];
        if (cfg.train.augment_enabled) {
          const uint64_t stream =
              Rng::mix(Rng::mix(cfg.train.seed, static_cast<uint64_t>(epoch)),
                       static_cast<uint64_t>(idx));
          s = augment(s, cfg.augment, stream);
        }
        std::copy(s.image.data(), s.image.data() + s.image.numel(),
                  images.data() + static_cast<int64_t>(bi) * c * h * w);
        std::copy(s.mask.data(), s.mask.data() + s.mask.numel(),
                  masks.data() + static_cast<int64_t>(bi) * h * w);
      }

      Tape tape;
      double loss_value = 0.0;
      {
        TapeScope scope(tape);
        CascadeOutput out = model->forward(images);
        LevelPredictions preds = build_level_predictions(out, masks, cfg.model.num_classes);
        Tensor loss = combined_loss(preds, cfg.loss);
        loss_value = loss.item();
        tape.backward(loss);
      }
      sgd_step(model->params(), optim);
      model->params().zero_grads();

      log.step_loss.push_back(loss_value);
      epoch_loss += loss_value;
      ++batches;
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(std::max<int64_t>(1, batches)));

    const bool last_epoch = epoch + 1 == end_epoch;
    const bool cadence_hit = cfg.train.eval_every > 0 && (epoch + 1) % cfg.train.eval_every == 0;
    if (cadence_hit || last_epoch) {
      std::vector<double> row;
      eval_on(row);
      log.dice_epochs.push_back(static_cast<double>(epoch));
      log.dice_rows.push_back(std::move(row));
    }
  }

  TrainRun run;
  run.log = log;
  run.checkpoint = snapshot(*model, optim, log, cfg, end_epoch);
  return run;
}

}  // namespace

std::unique_ptr<Model> build_model(const FullConfig& cfg) {
  ModelConfig mc = cfg.model;
  mc.init_seed = Rng::mix(cfg.train.seed, kInitStream);
  return std::make_unique<Model>(mc);
}

TrainRun train(const FullConfig& cfg, const std::vector<LabeledSample>& dataset) {
  return train_until(cfg, dataset, cfg.train.epochs);
}

TrainRun train_until(const FullConfig& cfg, const std::vector<LabeledSample>& dataset,
                     int64_t stop_epoch) {
  auto model = build_model(cfg);
  if (cfg.model.use_pretrained && !cfg.model.pretrained_path.empty()) {
    import_weights(cfg.model.pretrained_path, *model);
  }
  const int64_t n_train =
      static_cast<int64_t>(make_split(static_cast<int64_t>(dataset.size()),
                                      cfg.train.val_fraction, cfg.train.seed)
                               .train_idx.size());
  const int64_t steps_per_epoch = (n_train + cfg.train.batch_size - 1) / cfg.train.batch_size;
  OptimState optim = make_optim(model->params(), cfg.train, cfg.train.epochs * steps_per_epoch);
  return run_training(std::move(model), std::move(optim), MetricLog{}, cfg, dataset, 0, stop_epoch);
}

TrainRun resume(const Checkpoint& ckpt, const std::vector<LabeledSample>& dataset) {
  const FullConfig& cfg = ckpt.config;
  auto model = build_model(cfg);
  for (const auto& [name, param] : model->params().entries()) {
    Tensor p = param;  // shares storage
    const Tensor* src = ckpt.find(name);
    MST_CHECK(src != nullptr && src->shape() == p.shape(),
              "resume: checkpoint is missing parameter " + name);
    std::copy(src->data(), src->data() + src->numel(), p.data());
  }
  const int64_t max_steps = static_cast<int64_t>(ckpt.scalar_or("optim.max_steps", 0));
  OptimState optim = make_optim(model->params(), cfg.train, max_steps);
  optim.step = static_cast<int64_t>(ckpt.scalar_or("optim.step", 0));
  const auto& entries = model->params().entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    const Tensor* v = ckpt.find("optim.velocity." + entries[i].first);
    MST_CHECK(v != nullptr && v->shape() == entries[i].second.shape(),
              "resume: checkpoint is missing velocity for " + entries[i].first);
    std::copy(v->data(), v->data() + v->numel(), optim.velocity[i].data());
  }
  const int64_t epoch_next = static_cast<int64_t>(ckpt.scalar_or("train.epoch_next", 0));
  return run_training(std::move(model), std::move(optim), log_from_checkpoint(ckpt), cfg, dataset,
                      epoch_next, cfg.train.epochs);
}

}  // namespace mstwins
