#include <doctest.h>

#include <cmath>

#include "mstwins/fusion.hpp"
#include "mstwins/gradcheck.hpp"

using namespace mstwins;

TEST_SUITE_BEGIN("msfif");

TEST_CASE("mc_ab gates zero input to zero output") {
  Rng rng(1);
  ParamRegistry reg;
  McAbParams p = make_mc_ab(reg, "g", 8, 4, rng);
  Tensor x = Tensor::zeros({2, 8, 3, 3});
  Tensor y = mc_ab(x, p);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("mc_ab with zeroed weights halves the input") {
  Rng rng(2);
  ParamRegistry reg;
  McAbParams p = make_mc_ab(reg, "g", 8, 4, rng);
  for (const auto& [name, param] : reg.entries()) {
    Tensor t = param;
    std::fill(t.vec().begin(), t.vec().end(), 0.0);
  }
  Tensor x = Tensor::randn({1, 8, 4, 4}, rng);
  Tensor y = mc_ab(x, p);
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(0.5 * x.data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("mc_ab never amplifies: |out| <= |x| elementwise, gate strictly in (0,1)") {
  Rng rng(3);
  for (int trial = 0; trial < 4; ++trial) {
    ParamRegistry reg;
    McAbParams p = make_mc_ab(reg, "g", 8, 2, rng);
    Tensor x = Tensor::randn({2, 8, 4, 4}, rng, 2.0);
    Tensor y = mc_ab(x, p);
    for (int64_t i = 0; i < x.numel(); ++i) {
      CHECK(std::abs(y.data()[i]) <= std::abs(x.data()[i]));
      if (x.data()[i] != 0.0) {
        const double gate = y.data()[i] / x.data()[i];
        CHECK(gate > 0.0);
        CHECK(gate < 1.0);
      }
    }
  }
}

TEST_CASE("mc_ab gradients flow through both branches (finite differences)") {
  Rng rng(4);
  ParamRegistry reg;
  McAbParams p = make_mc_ab(reg, "g", 8, 4, rng);
  Tensor x = Tensor::randn({1, 8, 4, 4}, rng);
  std::vector<Tensor> inputs{x, p.global_fc1.w, p.global_fc2.b, p.local_conv1.w, p.local_conv2.b};
  auto fn = [&](const std::vector<Tensor>& in) { return mean(mul(mc_ab(in[0], p), 3.0)); };
  Rng probes(11);
  GradCheckReport rep = check_gradients(fn, inputs, 16, &probes);
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("ms_fif reproduces the adjacent-stage shape contract") {
  Rng rng(5);
  // desk-scale stage3 + stage4 pair
  {
    ParamRegistry reg;
    MsFifParams p = make_ms_fif(reg, "f", 384, 4, false, rng);
    Tensor hi = Tensor::randn({1, 384, 4, 4}, rng, 0.1);
    Tensor lo = Tensor::randn({1, 768, 2, 2}, rng, 0.1);
    CHECK(ms_fif(hi, lo, p).shape() == Shape{1, 384, 4, 4});
  }
  // stage1 + stage2 pair
  {
    ParamRegistry reg;
    MsFifParams p = make_ms_fif(reg, "f", 96, 4, false, rng);
    Tensor hi = Tensor::randn({1, 96, 16, 16}, rng, 0.1);
    Tensor lo = Tensor::randn({1, 192, 8, 8}, rng, 0.1);
    CHECK(ms_fif(hi, lo, p).shape() == Shape{1, 96, 16, 16});
  }
}

TEST_CASE("ms_fif rejects pairs violating the channel/scale invariants") {
  Rng rng(6);
  ParamRegistry reg;
  MsFifParams p = make_ms_fif(reg, "f", 8, 4, false, rng);
  Tensor hi = Tensor::zeros({1, 8, 4, 4});
  CHECK_THROWS_AS(ms_fif(hi, Tensor::zeros({1, 8, 2, 2}), p), Error);   // channels not doubled
  CHECK_THROWS_AS(ms_fif(hi, Tensor::zeros({1, 16, 4, 4}), p), Error);  // not half resolution
}

TEST_CASE("ms_fif end-to-end gradients wrt both inputs pass finite differences") {
  Rng rng(7);
  ParamRegistry reg;
  MsFifParams p = make_ms_fif(reg, "f", 4, 2, false, rng);
  Tensor hi = Tensor::randn({1, 4, 4, 4}, rng);
  Tensor lo = Tensor::randn({1, 8, 2, 2}, rng);
  auto fn = [&](const std::vector<Tensor>& in) { return mean(mul(ms_fif(in[0], in[1], p), 2.0)); };
  GradCheckReport rep = check_gradients(fn, {hi, lo});
  INFO(rep.worst);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("shared-gate construction reuses one set of gate parameters") {
  Rng rng(8);
  ParamRegistry shared_reg;
  make_ms_fif(shared_reg, "f", 8, 4, true, rng);
  ParamRegistry split_reg;
  make_ms_fif(split_reg, "f", 8, 4, false, rng);
  CHECK(shared_reg.count() < split_reg.count());
  CHECK(shared_reg.find("f.gate_lo.gfc1.w") == nullptr);
  CHECK(split_reg.find("f.gate_lo.gfc1.w") != nullptr);
}

TEST_SUITE_END();
