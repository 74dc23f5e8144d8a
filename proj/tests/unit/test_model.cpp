#include <doctest.h>

#include <cmath>

#include "mstwins/gradcheck.hpp"
#include "mstwins/loss.hpp"
#include "mstwins/train.hpp"

using namespace mstwins;

TEST_SUITE_BEGIN("model");

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.base_channels = 8;
  cfg.head_channels = 4;
  cfg.depths = {1, 1, 1, 1};
  cfg.num_classes = 3;
  cfg.init_seed = 99;
  return cfg;
}

bool any_nonzero(const std::vector<double>& v) {
  for (double x : v) {
    if (x != 0.0) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("encode reproduces the stage shape schedule at 64 and 224") {
  ModelConfig cfg;  // default channel schedule 96/192/384/768
  Model model(cfg);
  Rng rng(1);

  Tensor x64 = Tensor::randn({1, 1, 64, 64}, rng);
  StagePyramid p = model.encode(x64);
  CHECK(p[0].shape() == Shape{1, 96, 16, 16});
  CHECK(p[1].shape() == Shape{1, 192, 8, 8});
  CHECK(p[2].shape() == Shape{1, 384, 4, 4});
  CHECK(p[3].shape() == Shape{1, 768, 2, 2});

  Tensor x224 = Tensor::randn({1, 1, 224, 224}, rng);
  StagePyramid q = model.encode(x224);
  CHECK(q[0].shape() == Shape{1, 96, 56, 56});
  CHECK(q[1].shape() == Shape{1, 192, 28, 28});
  CHECK(q[2].shape() == Shape{1, 384, 14, 14});
  CHECK(q[3].shape() == Shape{1, 768, 7, 7});
}

TEST_CASE("encode rejects inputs below the total stride") {
  Model model(small_config());
  CHECK_THROWS_AS(model.encode(Tensor::zeros({1, 1, 16, 16})), Error);
}

TEST_CASE("encode is deterministic: two calls agree bitwise") {
  Model model(small_config());
  Rng rng(2);
  Tensor x = Tensor::randn({1, 1, 64, 64}, rng);
  StagePyramid a = model.encode(x);
  StagePyramid b = model.encode(x);
  for (size_t i = 0; i < 4; ++i) {
    REQUIRE(a[i].shape() == b[i].shape());
    for (int64_t j = 0; j < a[i].numel(); ++j) CHECK(a[i].data()[j] == b[i].data()[j]);
  }
}

TEST_CASE("fuse_pyramid preserves level shapes and ablates to the identity") {
  ModelConfig cfg = small_config();
  Model model(cfg);
  Rng rng(3);
  Tensor x = Tensor::randn({1, 1, 64, 64}, rng);
  StagePyramid p = model.encode(x);
  StagePyramid g = model.fuse_pyramid(p);
  for (size_t i = 0; i < 4; ++i) CHECK(g[i].shape() == p[i].shape());

  Model plain(ablate(cfg, AblationSwitch::no_msfif));
  StagePyramid p2 = plain.encode(x);
  StagePyramid g2 = plain.fuse_pyramid(p2);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(g2[i].same_storage(p2[i]));  // routed through unchanged, bit-for-bit
  }
}

TEST_CASE("gradient flows from a fused level to exactly the stages it consumes") {
  Model model(small_config());
  Rng rng(4);
  Tensor x = Tensor::randn({1, 1, 64, 64}, rng).set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    StagePyramid p = model.encode(x);
    StagePyramid g = model.fuse_pyramid(p);
    backward(sum(g[0]));  // fused level 1 consumes encoder stages 1 and 2
  }
  CHECK(model.params().find("enc1.embed.proj.w")->has_grad());
  CHECK(any_nonzero(model.params().find("enc1.embed.proj.w")->grad()));
  CHECK(any_nonzero(model.params().find("enc2.embed.proj.w")->grad()));
  CHECK_FALSE(model.params().find("enc3.embed.proj.w")->has_grad());
  CHECK_FALSE(model.params().find("enc4.embed.proj.w")->has_grad());
}

TEST_CASE("decode emits four logit levels at 1/32..1/4 plus full-resolution logits") {
  ModelConfig cfg = small_config();
  Model model(cfg);
  Rng rng(5);
  Tensor x = Tensor::randn({2, 1, 64, 64}, rng);
  CascadeOutput out = model.forward(x);
  REQUIRE(out.residual_logits.size() == 4);
  CHECK(out.residual_logits[0].shape() == Shape{2, 3, 16, 16});
  CHECK(out.residual_logits[1].shape() == Shape{2, 3, 8, 8});
  CHECK(out.residual_logits[2].shape() == Shape{2, 3, 4, 4});
  CHECK(out.residual_logits[3].shape() == Shape{2, 3, 2, 2});
  CHECK(out.final_logits.shape() == Shape{2, 3, 64, 64});
}

TEST_CASE("with zeroed residual heads every level repeats the deepest prediction") {
  ModelConfig cfg = small_config();
  Model model(cfg);
  for (const char* name : {"head1.w", "head1.b", "head2.w", "head2.b", "head3.w", "head3.b"}) {
    Tensor* t = model.params().find(name);
    REQUIRE(t != nullptr);
    std::fill(t->vec().begin(), t->vec().end(), 0.0);
  }
  Rng rng(6);
  Tensor x = Tensor::randn({1, 1, 64, 64}, rng);
  CascadeOutput out = model.forward(x);
  for (size_t level = 0; level < 3; ++level) {
    const Tensor& eff = out.effective_logits[level];
    const Tensor& deep = out.effective_logits[3];
    const int64_t scale = 1ll << (3 - level);
    for (int64_t c = 0; c < 3; ++c) {
      for (int64_t h = 0; h < eff.size(2); ++h) {
        for (int64_t w = 0; w < eff.size(3); ++w) {
          CHECK(eff.at({0, c, h, w}) ==
                doctest::Approx(deep.at({0, c, h / scale, w / scale})).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("effective predictions telescope: finest = upsample chain + residuals") {
  Model model(small_config());
  Rng rng(7);
  Tensor x = Tensor::randn({1, 1, 64, 64}, rng);
  CascadeOutput out = model.forward(x);

  // rebuild level-1 effective logits from the residual maps alone
  Tensor acc = out.residual_logits[3].detached_copy();
  for (int64_t j = 2; j >= 0; --j) {
    acc = add(upsample_nearest(acc, 2), out.residual_logits[static_cast<size_t>(j)].detached_copy());
  }
  const Tensor& eff = out.effective_logits[0];
  REQUIRE(acc.shape() == eff.shape());
  for (int64_t i = 0; i < acc.numel(); ++i) {
    CHECK(std::abs(acc.data()[i] - eff.data()[i]) < 1e-10);
  }
}

TEST_CASE("single_downsample ablation emits exactly one logits map") {
  ModelConfig cfg = ablate(small_config(), AblationSwitch::plain_downsample_cascade);
  Model model(cfg);
  Rng rng(8);
  Tensor x = Tensor::randn({1, 1, 64, 64}, rng);
  CascadeOutput out = model.forward(x);
  CHECK(out.residual_logits.size() == 1);
  CHECK(out.residual_logits[0].shape() == Shape{1, 3, 2, 2});
  CHECK(out.final_logits.shape() == Shape{1, 3, 64, 64});
}

TEST_CASE("ablations keep the encoder parameter set identical") {
  ModelConfig cfg = small_config();
  Model full(cfg);
  Model no_fif(ablate(cfg, AblationSwitch::no_msfif));
  Model down(ablate(cfg, AblationSwitch::plain_downsample_cascade));

  auto encoder_elems = [](const Model& m) {
    int64_t n = 0;
    for (const auto& [name, p] : m.params().entries()) {
      if (name.rfind("enc", 0) == 0) n += p.numel();
    }
    return n;
  };
  const int64_t want = encoder_elems(full);
  CHECK(encoder_elems(no_fif) == want);
  CHECK(encoder_elems(down) == want);
  CHECK(ablate(cfg, AblationSwitch::no_pretrain).use_pretrained == false);
  CHECK_THROWS_AS(ablation_from_string("bogus"), Error);
}

TEST_CASE("identical configs build identical parameter tables") {
  ModelConfig cfg = small_config();
  Model a(cfg);
  Model b(cfg);
  REQUIRE(a.params().count() == b.params().count());
  for (size_t i = 0; i < a.params().count(); ++i) {
    CHECK(a.params().entries()[i].first == b.params().entries()[i].first);
    CHECK(a.params().entries()[i].second.shape() == b.params().entries()[i].second.shape());
  }
  CHECK(a.params().total_elements() == b.params().total_elements());
}

TEST_CASE("every encoder parameter gets a nonzero gradient from the combined loss") {
  ModelConfig cfg = small_config();
  Model model(cfg);
  Rng rng(9);
  Tensor x = Tensor::randn({2, 1, 64, 64}, rng);
  Tensor mask = make_tensor({2, 64, 64});
  for (int64_t i = 0; i < mask.numel(); ++i) mask.vec()[static_cast<size_t>(i)] = rng.index(3);
  LossConfig lc;
  Tape tape;
  {
    TapeScope scope(tape);
    CascadeOutput out = model.forward(x);
    LevelPredictions preds = build_level_predictions(out, mask, 3);
    backward(combined_loss(preds, lc));
  }
  for (const auto& [name, p] : model.params().entries()) {
    if (name.rfind("enc", 0) != 0) continue;
    INFO(name);
    REQUIRE(p.has_grad());
    CHECK(any_nonzero(p.grad()));
  }
}

TEST_CASE("full-network gradient passes the finite-difference oracle at 32x32, 3 classes") {
  ModelConfig cfg = small_config();
  Model model(cfg);
  Rng rng(10);
  Tensor x = Tensor::randn({1, 1, 32, 32}, rng);
  Tensor mask = make_tensor({1, 32, 32});
  for (int64_t i = 0; i < mask.numel(); ++i) mask.vec()[static_cast<size_t>(i)] = rng.index(3);
  LossConfig lc;
  auto fn = [&](const std::vector<Tensor>& in) {
    CascadeOutput out = model.forward(in[0]);
    LevelPredictions preds = build_level_predictions(out, mask, 3);
    return combined_loss(preds, lc);
  };
  Rng probes(55);
  GradCheckReport rep = check_gradients(fn, {x}, 6, &probes);
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_SUITE_END();
