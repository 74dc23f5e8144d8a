#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mstwins/gradcheck.hpp"
#include "mstwins/loss.hpp"

using namespace mstwins;

TEST_SUITE_BEGIN("losses");

namespace {

LevelPredictions single_level(Tensor probs, Tensor mask, Tensor error_mask) {
  LevelPredictions lp;
  lp.probs = {std::move(probs)};
  lp.masks = {std::move(mask)};
  lp.error_masks = {std::move(error_mask)};
  return lp;
}

// plain-loop soft Dice used as the independent enumeration oracle
double oracle_pair_dice(const std::vector<double>& a, const std::vector<double>& b, double eps) {
  double inter = 0, sa = 0, sb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += a[i] * b[i];
    sa += a[i];
    sb += b[i];
  }
  return 2.0 * inter / (sa + sb + eps);
}

}  // namespace

TEST_CASE("dice_score hand cases: identical, disjoint, half overlap") {
  Tensor a = Tensor::from_data({2, 2}, {1, 1, 0, 0});
  Tensor b = Tensor::from_data({2, 2}, {1, 1, 0, 0});
  CHECK(dice_score(a, b, 1) == 1.0);

  Tensor c = Tensor::from_data({2, 2}, {0, 0, 1, 1});
  Tensor d = Tensor::from_data({2, 2}, {1, 1, 0, 0});
  CHECK(dice_score(c, d, 1) == 0.0);

  // |X| = 2, |Y| = 2, |X n Y| = 1 -> 2*1/(2+2) = 0.5
  Tensor e = Tensor::from_data({2, 2}, {1, 1, 0, 0});
  Tensor f = Tensor::from_data({2, 2}, {0, 1, 1, 0});
  CHECK(dice_score(e, f, 1) == 0.5);

  // class absent from both maps scores 1.0
  CHECK(dice_score(c, d, 7) == 1.0);
  CHECK_THROWS_AS(dice_score(Tensor::zeros({2, 2}), Tensor::zeros({2, 3}), 0), Error);
}

TEST_CASE("dice_score is symmetric and permutation invariant") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t n = 12;
    Tensor a = make_tensor({n});
    Tensor b = make_tensor({n});
    for (int64_t i = 0; i < n; ++i) {
      a.vec()[static_cast<size_t>(i)] = static_cast<double>(rng.index(3));
      b.vec()[static_cast<size_t>(i)] = static_cast<double>(rng.index(3));
    }
    const double d1 = dice_score(a, b, 1);
    CHECK(dice_score(b, a, 1) == d1);

    // apply one shared pixel permutation to both maps
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i) {
      std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.index(i + 1))]);
    }
    Tensor ap = make_tensor({n});
    Tensor bp = make_tensor({n});
    for (int64_t i = 0; i < n; ++i) {
      ap.vec()[static_cast<size_t>(i)] = a.vec()[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      bp.vec()[static_cast<size_t>(i)] = b.vec()[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    CHECK(dice_score(ap, bp, 1) == d1);
  }
}

TEST_CASE("contrastive loss: identical binary maps score ~1, separated maps ~0") {
  LossConfig cfg;
  // level 1: the two class maps coincide exactly (worst-case overlap)
  Tensor shared = Tensor::from_data({1, 2, 2, 2}, {1, 1, 0, 0, 1, 1, 0, 0});
  // level 2: perfectly separated one-hot maps
  Tensor split = Tensor::from_data({1, 2, 2, 2}, {1, 1, 0, 0, 0, 0, 1, 1});

  LevelPredictions both;
  both.probs = {shared, split};
  both.masks = {Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 2})};
  both.error_masks = {Tensor::ones({1, 2, 2}), Tensor::ones({1, 2, 2})};

  const double value = contrastive_loss(both, cfg).item();
  CHECK(value == doctest::Approx(1.0).epsilon(1e-5));  // 1.0 + O(eps) from the overlapped level

  LevelPredictions separated = single_level(split, Tensor::zeros({1, 2, 2}), Tensor::ones({1, 2, 2}));
  CHECK(contrastive_loss(separated, cfg).item() < 1e-5);
}

TEST_CASE("contrastive loss matches the exhaustive pair-enumeration oracle on a 2x2 toy") {
  LossConfig cfg;
  // hand-fixed 3-class probabilities on a 2x2 grid (each pixel sums to 1)
  std::vector<double> c0{0.7, 0.2, 0.1, 0.3};
  std::vector<double> c1{0.2, 0.5, 0.3, 0.3};
  std::vector<double> c2{0.1, 0.3, 0.6, 0.4};
  std::vector<double> flat;
  for (const auto* v : {&c0, &c1, &c2}) flat.insert(flat.end(), v->begin(), v->end());
  Tensor probs = Tensor::from_data({1, 3, 2, 2}, flat);

  double best = 1e300;
  const std::vector<const std::vector<double>*> maps{&c0, &c1, &c2};
  for (size_t i = 0; i < 3; ++i) {
    for (size_t j = i + 1; j < 3; ++j) {
      best = std::min(best, oracle_pair_dice(*maps[i], *maps[j], cfg.epsilon));
    }
  }
  LevelPredictions lp = single_level(probs, Tensor::zeros({1, 2, 2}), Tensor::ones({1, 2, 2}));
  CHECK(contrastive_loss(lp, cfg).item() == doctest::Approx(best).epsilon(1e-14));

  LossConfig max_cfg;
  max_cfg.pair_mode = LossConfig::PairMode::max_pair;
  double worst = -1e300;
  for (size_t i = 0; i < 3; ++i) {
    for (size_t j = i + 1; j < 3; ++j) {
      worst = std::max(worst, oracle_pair_dice(*maps[i], *maps[j], max_cfg.epsilon));
    }
  }
  CHECK(contrastive_loss(lp, max_cfg).item() == doctest::Approx(worst).epsilon(1e-14));
  CHECK(worst >= best);

  LossConfig sq_cfg;
  sq_cfg.squared_sizes = true;
  // squared-size variant: identical maps now score exactly ~1 regardless of values
  LevelPredictions same = single_level(
      Tensor::from_data({1, 2, 1, 2}, {0.5, 0.5, 0.5, 0.5}), Tensor::zeros({1, 1, 2}),
      Tensor::ones({1, 1, 2}));
  CHECK(contrastive_loss(same, sq_cfg).item() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("contrastive loss needs at least two classes") {
  LossConfig cfg;
  LevelPredictions lp = single_level(Tensor::full({1, 1, 2, 2}, 1.0), Tensor::zeros({1, 2, 2}),
                                     Tensor::ones({1, 2, 2}));
  CHECK_THROWS_AS(contrastive_loss(lp, cfg), Error);
}

TEST_CASE("contrastive loss stays within [0, levels + O(eps)]") {
  Rng rng(41);
  LossConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    LevelPredictions lp;
    for (int level = 0; level < 4; ++level) {
      Tensor logits = Tensor::randn({1, 3, 4, 4}, rng, 2.0);
      lp.probs.push_back(softmax(logits, 1));
      lp.masks.push_back(Tensor::zeros({1, 4, 4}));
      lp.error_masks.push_back(Tensor::ones({1, 4, 4}));
    }
    const double v = contrastive_loss(lp, cfg).item();
    CHECK(v >= 0.0);
    CHECK(v <= 4.0 + 1e-6);
  }
}

TEST_CASE("balance loss single-pixel hand value: q=0, p=0.5 -> ln 2") {
  LossConfig cfg;
  cfg.q = {0.0};
  Tensor probs = Tensor::from_data({1, 2, 1, 1}, {0.5, 0.5});
  LevelPredictions lp = single_level(probs, Tensor::zeros({1, 1, 1}), Tensor::ones({1, 1, 1}));
  CHECK(balance_loss(lp, cfg).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("balance loss vanishes on perfect predictions for any q") {
  for (double q : {0.0, 1.0, 2.0, 5.0}) {
    LossConfig cfg;
    cfg.q = {q};
    Tensor probs = Tensor::from_data({1, 2, 1, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor mask = Tensor::from_data({1, 1, 2}, {0, 1});
    LevelPredictions lp = single_level(probs, mask, Tensor::ones({1, 1, 2}));
    CHECK(balance_loss(lp, cfg).item() == doctest::Approx(0.0).epsilon(1e-20));
  }
}

TEST_CASE("q=2 down-weights easy pixels relative to q=0") {
  Rng rng(43);
  Tensor logits = Tensor::randn({1, 3, 4, 4}, rng);
  Tensor probs = softmax(logits, 1);
  Tensor mask = make_tensor({1, 4, 4});
  for (int64_t i = 0; i < mask.numel(); ++i) mask.vec()[static_cast<size_t>(i)] = rng.index(3);
  LossConfig q0;
  q0.q = {0.0};
  LossConfig q2;
  q2.q = {2.0};
  LevelPredictions lp = single_level(probs, mask, Tensor::ones({1, 4, 4}));
  const double v0 = balance_loss(lp, q0).item();
  const double v2 = balance_loss(lp, q2).item();
  CHECK(v2 < v0);
  CHECK(v2 >= 0.0);
}

TEST_CASE("balance loss with q=0 and full masks equals directly-coded cross-entropy within 1e-12") {
  Rng rng(47);
  LossConfig cfg;
  cfg.q = {0.0};
  LevelPredictions lp;
  std::vector<Tensor> logit_levels;
  for (int64_t h : {8, 4, 2}) {
    Tensor logits = Tensor::randn({2, 3, h, h}, rng);
    lp.probs.push_back(softmax(logits, 1));
    Tensor mask = make_tensor({2, h, h});
    for (int64_t i = 0; i < mask.numel(); ++i) mask.vec()[static_cast<size_t>(i)] = rng.index(3);
    lp.masks.push_back(mask);
    lp.error_masks.push_back(Tensor::ones({2, h, h}));
  }
  // independently coded mean cross-entropy, plain loops over the prob arrays
  double want = 0.0;
  for (size_t level = 0; level < lp.probs.size(); ++level) {
    const Tensor& p = lp.probs[level];
    const Tensor& m = lp.masks[level];
    const int64_t bsz = p.size(0), k = p.size(1), hw = p.size(2) * p.size(3);
    double acc = 0.0;
    for (int64_t b = 0; b < bsz; ++b) {
      for (int64_t i = 0; i < hw; ++i) {
        const int64_t label = static_cast<int64_t>(m.data()[b * hw + i]);
        acc += -std::log(p.data()[(b * k + label) * hw + i]);
      }
    }
    want += acc / static_cast<double>(bsz * hw);
  }
  CHECK(std::abs(balance_loss(lp, cfg).item() - want) < 1e-12);
}

TEST_CASE("an empty error mask contributes exactly zero") {
  Rng rng(53);
  Tensor logits = Tensor::randn({1, 2, 2, 2}, rng);
  Tensor probs = softmax(logits, 1);
  Tensor mask = Tensor::zeros({1, 2, 2});
  LossConfig cfg;

  LevelPredictions with_empty;
  with_empty.probs = {probs, probs};
  with_empty.masks = {mask, mask};
  with_empty.error_masks = {Tensor::zeros({1, 2, 2}), Tensor::ones({1, 2, 2})};

  LevelPredictions only_full = single_level(probs, mask, Tensor::ones({1, 2, 2}));
  CHECK(balance_loss(with_empty, cfg).item() == balance_loss(only_full, cfg).item());
}

TEST_CASE("balance loss is non-negative on random inputs") {
  Rng rng(59);
  for (int trial = 0; trial < 8; ++trial) {
    LossConfig cfg;
    cfg.q = {rng.uniform(0.0, 4.0)};
    Tensor logits = Tensor::randn({1, 4, 4, 4}, rng, 3.0);
    Tensor probs = softmax(logits, 1);
    Tensor mask = make_tensor({1, 4, 4});
    for (int64_t i = 0; i < mask.numel(); ++i) mask.vec()[static_cast<size_t>(i)] = rng.index(4);
    Tensor sel = make_tensor({1, 4, 4});
    for (int64_t i = 0; i < sel.numel(); ++i) sel.vec()[static_cast<size_t>(i)] = rng.index(2);
    LevelPredictions lp = single_level(probs, mask, sel);
    CHECK(balance_loss(lp, cfg).item() >= 0.0);
  }
}

TEST_CASE("per-class q schedule selects the exponent by true label") {
  LossConfig cfg;
  cfg.q = {0.0, 2.0};
  // pixel 0 labeled class 0 (q=0), pixel 1 labeled class 1 (q=2)
  Tensor probs = Tensor::from_data({1, 2, 1, 2}, {0.5, 0.25, 0.5, 0.75});
  Tensor mask = Tensor::from_data({1, 1, 2}, {0, 1});
  LevelPredictions lp = single_level(probs, mask, Tensor::ones({1, 1, 2}));
  const double want = 0.5 * (-std::log(0.5) + std::pow(0.25, 2.0) * -std::log(0.75));
  CHECK(balance_loss(lp, cfg).item() == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("combined loss: alpha=0 equals balance bitwise, alpha=1 adds the terms") {
  Rng rng(61);
  Tensor logits = Tensor::randn({1, 3, 4, 4}, rng);
  Tensor probs = softmax(logits, 1);
  Tensor mask = make_tensor({1, 4, 4});
  for (int64_t i = 0; i < mask.numel(); ++i) mask.vec()[static_cast<size_t>(i)] = rng.index(3);
  LevelPredictions lp = single_level(probs, mask, Tensor::ones({1, 4, 4}));

  LossConfig a0;
  a0.alpha = 0.0;
  CHECK(combined_loss(lp, a0).item() == balance_loss(lp, a0).item());

  LossConfig a1;
  a1.alpha = 1.0;
  const double want = contrastive_loss(lp, a1).item() * 1.0 + balance_loss(lp, a1).item();
  CHECK(combined_loss(lp, a1).item() == want);

  // L(2a) - L(a) == a * L_con up to floating rounding
  LossConfig ah;
  ah.alpha = 0.6;
  LossConfig a2h;
  a2h.alpha = 1.2;
  const double lc = contrastive_loss(lp, ah).item();
  CHECK(std::abs((combined_loss(lp, a2h).item() - combined_loss(lp, ah).item()) - 0.6 * lc) < 1e-12);
}

TEST_CASE("combined loss gradient wrt logits passes the finite-difference oracle") {
  Rng rng(67);
  Tensor fine = Tensor::randn({1, 3, 4, 4}, rng);
  Tensor deep = Tensor::randn({1, 3, 2, 2}, rng);
  Tensor mask = make_tensor({1, 4, 4});
  for (int64_t i = 0; i < mask.numel(); ++i) mask.vec()[static_cast<size_t>(i)] = rng.index(3);
  LossConfig cfg;
  auto fn = [&](const std::vector<Tensor>& in) {
    CascadeOutput out;
    out.effective_logits = {in[0], in[1]};
    out.final_logits = in[0];
    LevelPredictions lp = build_level_predictions(out, mask, 3);
    return combined_loss(lp, cfg);
  };
  GradCheckReport rep = check_gradients(fn, {fine, deep});
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_SUITE_END();
