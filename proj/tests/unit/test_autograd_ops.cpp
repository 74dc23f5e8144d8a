#include <doctest.h>

#include "mstwins/gradcheck.hpp"

using namespace mstwins;

TEST_SUITE_BEGIN("autograd");

namespace {

// draws a rank-1..3 shape with small extents
Shape random_shape(Rng& rng, int64_t max_rank = 3, int64_t max_extent = 5) {
  Shape s;
  const int64_t rank = 1 + rng.index(max_rank);
  for (int64_t i = 0; i < rank; ++i) s.push_back(1 + rng.index(max_extent));
  return s;
}

// away from zero so kinked ops (relu, clamp) stay finite-difference friendly
Tensor safe_randn(const Shape& s, Rng& rng) {
  Tensor t = Tensor::randn(s, rng);
  for (int64_t i = 0; i < t.numel(); ++i) {
    double& v = t.vec()[static_cast<size_t>(i)];
    if (std::abs(v) < 0.15) v = v < 0 ? v - 0.2 : v + 0.2;
  }
  return t;
}

using Builder = std::function<Tensor(const std::vector<Tensor>&)>;

void sweep(const char* name, const std::function<std::vector<Tensor>(Rng&)>& gen,
           const Builder& fn, double tol = 1e-5) {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    for (int shape_trial = 0; shape_trial < 5; ++shape_trial) {
      Rng rng(Rng::mix(seed * 1009, static_cast<uint64_t>(shape_trial)));
      std::vector<Tensor> inputs = gen(rng);
      GradCheckReport rep = check_gradients(fn, inputs);
      INFO(name, " seed=", seed, " trial=", shape_trial, " worst=", rep.worst);
      CHECK(rep.max_rel_err < tol);
    }
  }
}

Tensor weigh(const Tensor& t, Rng& rng) {
  // fixed random positive-ish weights make the scalar reduction non-degenerate
  Tensor w = Tensor::rand_uniform(t.shape(), rng, 0.25, 1.75);
  return sum(mul(t, w));
}

}  // namespace

TEST_CASE("elementwise binaries with broadcasting") {
  auto gen = [](Rng& rng) {
    Shape s = random_shape(rng);
    Shape sb = s;
    // drop a leading dim or squash one extent to 1 half the time
    if (rng.uniform() < 0.5 && sb.size() > 1) sb.erase(sb.begin());
    if (rng.uniform() < 0.5 && !sb.empty()) sb[static_cast<size_t>(rng.index(static_cast<int64_t>(sb.size())))] = 1;
    Tensor a = safe_randn(s, rng);
    Tensor b = safe_randn(sb, rng);
    return std::vector<Tensor>{a, b};
  };
  sweep("add", gen, [](const std::vector<Tensor>& in) { return sum(add(in[0], in[1])); });
  sweep("sub", gen, [](const std::vector<Tensor>& in) { return sum(mul(sub(in[0], in[1]), 0.5)); });
  sweep("mul", gen, [](const std::vector<Tensor>& in) { return sum(mul(in[0], in[1])); });
  sweep("div", gen, [](const std::vector<Tensor>& in) {
    return sum(div(in[0], add(mul(in[1], in[1]), 0.5)));
  });
}

TEST_CASE("unary ops") {
  auto gen1 = [](Rng& rng) { return std::vector<Tensor>{safe_randn(random_shape(rng), rng)}; };
  sweep("neg", gen1, [](const std::vector<Tensor>& in) { return sum(neg(in[0])); });
  sweep("exp", gen1, [](const std::vector<Tensor>& in) { return sum(exp(in[0])); });
  sweep("sigmoid", gen1, [](const std::vector<Tensor>& in) { return sum(sigmoid(in[0])); });
  sweep("gelu", gen1, [](const std::vector<Tensor>& in) { return sum(gelu(in[0])); });
  sweep("relu", gen1, [](const std::vector<Tensor>& in) { return sum(relu(in[0])); });

  auto gen_pos = [](Rng& rng) {
    return std::vector<Tensor>{Tensor::rand_uniform(random_shape(rng), rng, 0.2, 3.0)};
  };
  sweep("log", gen_pos, [](const std::vector<Tensor>& in) { return sum(log(in[0])); });
  sweep("sqrt", gen_pos, [](const std::vector<Tensor>& in) { return sum(sqrt(in[0])); });
  sweep("pow", gen_pos, [](const std::vector<Tensor>& in) { return sum(pow_scalar(in[0], 2.5)); });
  sweep("clamp_min", gen1, [](const std::vector<Tensor>& in) { return sum(clamp_min(in[0], 0.0)); });
}

TEST_CASE("reductions and softmax") {
  auto gen1 = [](Rng& rng) { return std::vector<Tensor>{safe_randn(random_shape(rng), rng)}; };
  sweep("mean", gen1, [](const std::vector<Tensor>& in) { return mean(mul(in[0], in[0])); });
  sweep("sum_axis", gen1, [](const std::vector<Tensor>& in) {
    Tensor s = sum_axis(in[0], in[0].dim() - 1);
    return sum(mul(s, s));
  });

  auto gen2 = [](Rng& rng) {
    Shape s = random_shape(rng, 3, 4);
    if (s.size() == 1) s.push_back(3);
    return std::vector<Tensor>{Tensor::randn(s, rng)};
  };
  sweep("softmax", gen2, [](const std::vector<Tensor>& in) {
    Tensor y = softmax(in[0], -1);
    return sum(mul(y, y));
  });
}

TEST_CASE("layernorm") {
  auto gen = [](Rng& rng) {
    const int64_t rows = 1 + rng.index(4);
    const int64_t c = 2 + rng.index(6);
    return std::vector<Tensor>{Tensor::randn({rows, c}, rng), Tensor::randn({c}, rng, 0.5, 1.0),
                               Tensor::randn({c}, rng, 0.5)};
  };
  sweep("layernorm", gen, [](const std::vector<Tensor>& in) {
    Tensor y = layernorm(in[0], in[1], in[2]);
    return sum(mul(y, y));
  });
}

TEST_CASE("matmul including batched and broadcast batches") {
  auto gen = [](Rng& rng) {
    const int64_t m = 1 + rng.index(4), k = 1 + rng.index(4), n = 1 + rng.index(4);
    if (rng.uniform() < 0.4) {
      return std::vector<Tensor>{Tensor::randn({m, k}, rng), Tensor::randn({k, n}, rng)};
    }
    const int64_t batch = 1 + rng.index(3);
    if (rng.uniform() < 0.5) {
      return std::vector<Tensor>{Tensor::randn({batch, m, k}, rng), Tensor::randn({k, n}, rng)};
    }
    return std::vector<Tensor>{Tensor::randn({batch, m, k}, rng),
                               Tensor::randn({batch, k, n}, rng)};
  };
  Rng wr(999);
  sweep("matmul", gen, [&](const std::vector<Tensor>& in) {
    Tensor y = matmul(in[0], in[1]);
    Rng local(42);
    return weigh(y, local);
  });
}

TEST_CASE("conv2d variants") {
  auto gen = [](Rng& rng) {
    const int64_t b = 1 + rng.index(2), cin = 1 + rng.index(3), h = 3 + rng.index(4),
                  w = 3 + rng.index(4);
    const int64_t cout = 1 + rng.index(3), k = 1 + rng.index(3);
    return std::vector<Tensor>{Tensor::randn({b, cin, h, w}, rng),
                               Tensor::randn({cout, cin, k, k}, rng),
                               Tensor::randn({cout}, rng, 0.2)};
  };
  sweep("conv2d", gen, [](const std::vector<Tensor>& in) {
    const int64_t k = in[1].size(2);
    Tensor y = conv2d(in[0], in[1], in[2], 1, k / 2);
    Rng local(7);
    return weigh(y, local);
  });

  auto gen_strided = [](Rng& rng) {
    return std::vector<Tensor>{Tensor::randn({1, 2, 6, 6}, rng), Tensor::randn({3, 2, 2, 2}, rng),
                               Tensor::randn({3}, rng, 0.2)};
  };
  sweep("conv2d_stride2", gen_strided, [](const std::vector<Tensor>& in) {
    Tensor y = conv2d(in[0], in[1], in[2], 2, 0);
    Rng local(8);
    return weigh(y, local);
  });

  auto gen_dw = [](Rng& rng) {
    const int64_t c = 2 + rng.index(3);
    return std::vector<Tensor>{Tensor::randn({1, c, 5, 5}, rng), Tensor::randn({c, 1, 3, 3}, rng),
                               Tensor::randn({c}, rng, 0.2)};
  };
  sweep("conv2d_depthwise", gen_dw, [](const std::vector<Tensor>& in) {
    Tensor y = conv2d(in[0], in[1], in[2], 1, 1, in[0].size(1));
    Rng local(9);
    return weigh(y, local);
  });
}

TEST_CASE("pooling, resizing, padding") {
  auto gen = [](Rng& rng) {
    const int64_t h = 4 + rng.index(4), w = 4 + rng.index(4);
    return std::vector<Tensor>{Tensor::randn({1 + rng.index(2), 1 + rng.index(3), h, w}, rng)};
  };
  sweep("avgpool2d", gen, [](const std::vector<Tensor>& in) {
    Rng local(11);
    return weigh(avgpool2d(in[0], 2, 2), local);
  });
  sweep("global_avgpool", gen, [](const std::vector<Tensor>& in) {
    Rng local(12);
    return weigh(global_avgpool(in[0]), local);
  });
  sweep("upsample_nearest", gen, [](const std::vector<Tensor>& in) {
    Rng local(13);
    return weigh(upsample_nearest(in[0], 2), local);
  });
  sweep("pad2d", gen, [](const std::vector<Tensor>& in) {
    Rng local(14);
    return weigh(pad2d(in[0], 1, 2, 0, 1), local);
  });
  sweep("crop2d", gen, [](const std::vector<Tensor>& in) {
    Rng local(15);
    return weigh(crop2d(in[0], 1, 1, in[0].size(2) - 2, in[0].size(3) - 2), local);
  });
}

TEST_CASE("shape ops") {
  auto gen = [](Rng& rng) {
    return std::vector<Tensor>{Tensor::randn({2, 3, 4}, rng), Tensor::randn({2, 3, 4}, rng)};
  };
  sweep("reshape", gen, [](const std::vector<Tensor>& in) {
    Rng local(16);
    return weigh(reshape(in[0], {6, 4}), local);
  });
  sweep("transpose", gen, [](const std::vector<Tensor>& in) {
    Rng local(17);
    return weigh(transpose(in[0], {2, 0, 1}), local);
  });
  sweep("concat", gen, [](const std::vector<Tensor>& in) {
    Rng local(18);
    return weigh(concat({in[0], in[1]}, 1), local);
  });
  sweep("slice", gen, [](const std::vector<Tensor>& in) {
    Rng local(19);
    return weigh(slice(in[0], 2, 1, 3), local);
  });
  sweep("gather_mask", gen, [](const std::vector<Tensor>& in) {
    Tensor m = Tensor::zeros(in[0].shape());
    for (int64_t i = 0; i < m.numel(); i += 2) m.vec()[static_cast<size_t>(i)] = 1.0;
    return mean(gather_mask(in[0], m));
  });
}

TEST_SUITE_END();
