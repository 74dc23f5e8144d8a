#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mstwins/gradcheck.hpp"
#include "mstwins/train.hpp"

using namespace mstwins;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("train");

namespace {

FullConfig micro_config() {
  FullConfig cfg;
  cfg.model.base_channels = 8;
  cfg.model.head_channels = 4;
  cfg.model.depths = {1, 1, 1, 1};
  cfg.model.num_classes = 3;
  cfg.train.batch_size = 2;
  cfg.train.epochs = 2;
  cfg.train.eval_every = 0;
  cfg.train.augment_enabled = false;
  cfg.train.seed = 7;
  return cfg;
}

std::string temp_path(const std::string& leaf) {
  static int counter = 0;
  return (fs::temp_directory_path() /
          ("mstwins_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + leaf))
      .string();
}

ParamRegistry single_param_registry(double value) {
  ParamRegistry reg;
  reg.add("p", Tensor::full({1}, value));
  return reg;
}

void set_grad(ParamRegistry& reg, const std::string& name, double g) {
  Tensor* p = reg.find(name);
  auto& buf = p->grad_buffer();
  std::fill(buf.begin(), buf.end(), g);
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("plain gradient descent: momentum 0, wd 0, lr 1 moves p=1 to 0.5") {
  ParamRegistry reg = single_param_registry(1.0);
  TrainConfig tc;
  tc.lr = 1.0;
  tc.momentum = 0.0;
  tc.weight_decay = 0.0;
  tc.poly_schedule = false;
  OptimState st = make_optim(reg, tc, 0);
  set_grad(reg, "p", 0.5);
  sgd_step(reg, st);
  CHECK(reg.find("p")->data()[0] == 0.5);
  CHECK(st.step == 1);
}

TEST_CASE("zero gradient and zero weight decay is a fixed point") {
  ParamRegistry reg = single_param_registry(0.75);
  TrainConfig tc;
  tc.weight_decay = 0.0;
  OptimState st = make_optim(reg, tc, 0);
  for (int i = 0; i < 5; ++i) {
    set_grad(reg, "p", 0.0);
    sgd_step(reg, st);
    CHECK(reg.find("p")->data()[0] == 0.75);
  }
}

TEST_CASE("two momentum steps match the hand-unrolled recurrence") {
  ParamRegistry reg = single_param_registry(2.0);
  TrainConfig tc;
  tc.lr = 0.1;
  tc.momentum = 0.9;
  tc.weight_decay = 0.0;
  tc.poly_schedule = false;
  OptimState st = make_optim(reg, tc, 0);
  const double g = 0.4;
  // v1 = g; p1 = p0 - lr*v1; v2 = 0.9*g + g; p2 = p1 - lr*v2
  set_grad(reg, "p", g);
  sgd_step(reg, st);
  CHECK(reg.find("p")->data()[0] == doctest::Approx(2.0 - 0.1 * g).epsilon(1e-15));
  set_grad(reg, "p", g);
  sgd_step(reg, st);
  const double want = 2.0 - 0.1 * g - 0.1 * (0.9 * g + g);
  CHECK(reg.find("p")->data()[0] == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("with zero gradients weight decay shrinks every parameter monotonically") {
  ParamRegistry reg;
  reg.add("a", Tensor::full({3}, 2.0));
  reg.add("b", Tensor::full({2}, -1.5));
  TrainConfig tc;
  tc.lr = 0.05;
  tc.weight_decay = 0.1;
  tc.poly_schedule = false;
  OptimState st = make_optim(reg, tc, 0);
  double prev_a = 2.0, prev_b = 1.5;
  for (int i = 0; i < 10; ++i) {
    set_grad(reg, "a", 0.0);
    set_grad(reg, "b", 0.0);
    sgd_step(reg, st);
    const double cur_a = std::abs(reg.find("a")->data()[0]);
    const double cur_b = std::abs(reg.find("b")->data()[0]);
    CHECK(cur_a < prev_a);
    CHECK(cur_b < prev_b);
    prev_a = cur_a;
    prev_b = cur_b;
  }
}

TEST_CASE("sgd_step fails loudly on a parameter without a gradient") {
  ParamRegistry reg = single_param_registry(1.0);
  TrainConfig tc;
  OptimState st = make_optim(reg, tc, 0);
  CHECK_THROWS_WITH_AS(sgd_step(reg, st), doctest::Contains("no gradient"), Error);
}

TEST_CASE("polynomial schedule decays from lr0 and hits 0 at max_steps") {
  ParamRegistry reg = single_param_registry(1.0);
  TrainConfig tc;
  tc.lr = 0.01;
  tc.poly_power = 0.9;
  OptimState st = make_optim(reg, tc, 100);
  CHECK(st.current_lr() == 0.01);
  st.step = 50;
  CHECK(st.current_lr() == doctest::Approx(0.01 * std::pow(0.5, 0.9)).epsilon(1e-12));
  st.step = 100;
  CHECK(st.current_lr() == 0.0);
}

TEST_CASE("training with lr 0 leaves parameters unchanged and still logs loss") {
  FullConfig cfg = micro_config();
  cfg.train.lr = 0.0;
  cfg.train.weight_decay = 0.0;
  cfg.train.epochs = 1;
  auto data = synth_dataset(SynthKind::circles, 2, 32, 3, 5);

  auto reference = build_model(cfg);
  TrainRun run = train(cfg, data);
  REQUIRE(run.log.step_loss.size() == 1);
  CHECK(std::isfinite(run.log.step_loss[0]));
  for (const auto& [name, p] : reference->params().entries()) {
    const Tensor* got = run.checkpoint.find(name);
    REQUIRE(got != nullptr);
    CHECK(tensors_equal(*got, p));
  }
}

TEST_CASE("same seed and config give bitwise-identical checkpoint files") {
  FullConfig cfg = micro_config();
  auto data = synth_dataset(SynthKind::circles, 4, 32, 3, 21);
  TrainRun a = train(cfg, data);
  TrainRun b = train(cfg, data);
  const std::string pa = temp_path("_a.ckpt"), pb = temp_path("_b.ckpt");
  save_checkpoint(pa, a.checkpoint);
  save_checkpoint(pb, b.checkpoint);
  std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);
  CHECK(!ba.empty());
  fs::remove(pa);
  fs::remove(pb);
}

TEST_CASE("save/resume reproduces the uninterrupted run bitwise for 10+ further steps") {
  FullConfig cfg = micro_config();
  cfg.train.epochs = 10;  // 2 steps per epoch, 4 samples, batch 2
  auto data = synth_dataset(SynthKind::circles, 4, 32, 3, 33);

  TrainRun full_run = train(cfg, data);

  TrainRun half = train_until(cfg, data, 4);
  const std::string mid = temp_path("_mid.ckpt");
  save_checkpoint(mid, half.checkpoint);
  Checkpoint reloaded = load_checkpoint(mid);
  TrainRun resumed = resume(reloaded, data);
  fs::remove(mid);

  CHECK(full_run.checkpoint.scalar_or("optim.step", -1) ==
        resumed.checkpoint.scalar_or("optim.step", -2));
  for (const auto& [name, t] : full_run.checkpoint.tensors) {
    if (name.rfind("metrics.", 0) == 0) continue;  // histories differ at the split point
    const Tensor* other = resumed.checkpoint.find(name);
    REQUIRE(other != nullptr);
    INFO(name);
    CHECK(tensors_equal(t, *other));
  }
}

TEST_CASE("loss decreases over the first steps of a small overfit run") {
  FullConfig cfg = micro_config();
  cfg.train.epochs = 10;
  cfg.train.batch_size = 4;
  cfg.train.lr = 0.02;
  auto data = synth_dataset(SynthKind::circles, 4, 32, 3, 55);
  TrainRun run = train(cfg, data);
  REQUIRE(run.log.step_loss.size() >= 10);
  const double first = run.log.step_loss[0];
  const double last = run.log.step_loss.back();
  CHECK(last < first);
}

TEST_CASE("training aborts with the offending op named when the loss blows up") {
  FullConfig cfg = micro_config();
  cfg.train.lr = 1e12;  // guaranteed numerical explosion
  cfg.train.epochs = 4;
  auto data = synth_dataset(SynthKind::circles, 2, 32, 3, 66);
  CHECK_THROWS_WITH_AS(train(cfg, data), doctest::Contains("non-finite"), Error);
}

TEST_CASE("empty datasets are rejected") {
  FullConfig cfg = micro_config();
  CHECK_THROWS_AS(train(cfg, {}), Error);
}

TEST_CASE("evaluate scores perfect predictions at Dice 1 and misses at 0") {
  FullConfig cfg = micro_config();
  auto model = build_model(cfg);
  auto data = synth_dataset(SynthKind::circles, 2, 32, 3, 77);

  // whatever the untrained model predicts, evaluating against those
  // predictions as ground truth must give Dice 1 everywhere
  std::vector<LabeledSample> echo;
  for (const auto& s : data) {
    Tensor batch = reshape(s.image, {1, 1, 32, 32});
    Tensor pred = argmax_axis(model->forward(batch).final_logits, 1);
    echo.push_back(LabeledSample{s.image, reshape(pred, {32, 32})});
  }
  EvalResult perfect = evaluate(*model, echo);
  for (double d : perfect.per_class) CHECK(d == 1.0);
  CHECK(perfect.mean_foreground == 1.0);

  // a constant-background predictor scores 0 on every foreground class
  for (const char* name : {"head1.w", "head2.w", "head3.w", "head4.w", "head1.b", "head2.b",
                           "head3.b", "head4.b"}) {
    Tensor* t = model->params().find(name);
    REQUIRE(t != nullptr);
    std::fill(t->vec().begin(), t->vec().end(), 0.0);
  }
  model->params().find("head4.b")->vec()[0] = 50.0;  // class-0 logit dominates
  EvalResult constant = evaluate(*model, data);
  for (size_t c = 1; c < constant.per_class.size(); ++c) CHECK(constant.per_class[c] == 0.0);
  CHECK(constant.mean_foreground == 0.0);

  // class-count mismatch is an error
  auto wide = synth_dataset(SynthKind::stripes, 1, 32, 5, 78);
  CHECK_THROWS_AS(evaluate(*model, wide), Error);
}

TEST_CASE("import_weights: empty file, self checkpoint, and shape mismatches") {
  FullConfig cfg = micro_config();
  auto model = build_model(cfg);

  const std::string empty = temp_path("_empty.ckpt");
  std::ofstream(empty, std::ios::binary).close();
  ImportReport none = import_weights(empty, *model);
  CHECK(none.loaded == 0);
  fs::remove(empty);

  auto data = synth_dataset(SynthKind::circles, 2, 32, 3, 88);
  cfg.train.epochs = 1;
  TrainRun run = train(cfg, data);
  const std::string self = temp_path("_self.ckpt");
  save_checkpoint(self, run.checkpoint);
  ImportReport full = import_weights(self, *model);
  CHECK(full.loaded == static_cast<int64_t>(model->params().count()));
  for (const auto& [name, t] : run.checkpoint.tensors) {
    if (name.rfind("optim.", 0) == 0 || name.rfind("metrics.", 0) == 0 ||
        name.rfind("train.", 0) == 0 || name.rfind("rng.", 0) == 0 || name.rfind("run.", 0) == 0) {
      continue;
    }
    CHECK(tensors_equal(*model->params().find(name), t));
  }
  fs::remove(self);

  // donor with one deliberately mis-shaped tensor: skipped and named
  Checkpoint donor;
  donor.config = cfg;
  donor.tensors.emplace_back("head4.w", Tensor::zeros({1, 2, 3}));
  const std::string bad = temp_path("_bad.ckpt");
  save_checkpoint(bad, donor);
  ImportReport rep = import_weights(bad, *model);
  CHECK(rep.loaded == 0);
  REQUIRE(rep.skipped.size() == 1);
  CHECK(rep.skipped[0].find("head4.w") != std::string::npos);
  fs::remove(bad);
}

TEST_CASE("config files round-trip and unknown keys fail") {
  FullConfig cfg = micro_config();
  cfg.loss.alpha = 0.25;
  cfg.loss.q = {1.0, 2.0, 3.0};
  cfg.augment.mirror_prob = 0.75;
  cfg.model.cascade = ModelConfig::Cascade::single_downsample;
  FullConfig back = parse_config_text(dump_config(cfg));
  CHECK(back.model.base_channels == cfg.model.base_channels);
  CHECK(back.model.depths == cfg.model.depths);
  CHECK(back.model.cascade == cfg.model.cascade);
  CHECK(back.loss.alpha == cfg.loss.alpha);
  CHECK(back.loss.q == cfg.loss.q);
  CHECK(back.augment.mirror_prob == cfg.augment.mirror_prob);
  CHECK(back.train.seed == cfg.train.seed);
  CHECK(back.train.batch_size == cfg.train.batch_size);

  CHECK_THROWS_WITH_AS(parse_config_text("model.bogus_knob = 3\n"),
                       doctest::Contains("unknown key"), Error);
  CHECK_THROWS_AS(parse_config_text("model.depths = 1,2\n"), Error);
}

TEST_SUITE_END();
