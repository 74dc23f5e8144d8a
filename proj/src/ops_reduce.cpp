#include <algorithm>
#include <cmath>

#include "ops_common.hpp"

namespace mstwins {

using opdet::finish;
using opdet::normalize_axis;
using opdet::split_axis;

Tensor sum(const Tensor& a) {
  MST_CHECK(a.defined(), "sum: undefined operand");
  double acc = 0.0;
  const double* pa = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  Tensor out = Tensor::scalar(acc);
  return finish("sum", out, {&a}, [a, out]() {
    if (!a.requires_grad()) return;
    const double g = out.storage()->grad[0];
    auto& da = a.storage()->grad_buffer();
    for (auto& v : da) v += g;
  });
}

Tensor mean(const Tensor& a) {
  MST_CHECK(a.numel() > 0, "mean: empty tensor");
  return mul(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, int64_t axis, bool keepdim) {
  axis = normalize_axis("sum_axis", axis, a.dim());
  auto sp = split_axis(a.shape(), axis);
  Shape os;
  for (int64_t i = 0; i < a.dim(); ++i) {
    if (i == axis) {
      if (keepdim) os.push_back(1);
    } else {
      os.push_back(a.shape()[static_cast<size_t>(i)]);
    }
  }
  Tensor out = make_tensor(os);
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      double acc = 0.0;
      const double* base = pa + (o * sp.n) * sp.inner + in;
      for (int64_t k = 0; k < sp.n; ++k) acc += base[k * sp.inner];
      po[o * sp.inner + in] = acc;
    }
  }
  return finish("sum_axis", out, {&a}, [a, out, sp]() {
    if (!a.requires_grad()) return;
    const auto& g = out.storage()->grad;
    auto& da = a.storage()->grad_buffer();
    for (int64_t o = 0; o < sp.outer; ++o) {
      for (int64_t in = 0; in < sp.inner; ++in) {
        const double gv = g[static_cast<size_t>(o * sp.inner + in)];
        double* base = da.data() + (o * sp.n) * sp.inner + in;
        for (int64_t k = 0; k < sp.n; ++k) base[k * sp.inner] += gv;
      }
    }
  });
}

Tensor mean_axis(const Tensor& a, int64_t axis, bool keepdim) {
  int64_t ax = normalize_axis("mean_axis", axis, a.dim());
  int64_t n = a.shape()[static_cast<size_t>(ax)];
  MST_CHECK(n > 0, "mean_axis: empty axis");
  return mul(sum_axis(a, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor softmax(const Tensor& x, int64_t axis) {
  MST_CHECK(x.defined(), "softmax: undefined operand");
  int64_t ax = normalize_axis("softmax", axis, x.dim());
  auto sp = split_axis(x.shape(), ax);
  Tensor out = make_tensor(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const double* row = px + (o * sp.n) * sp.inner + in;
      double* orow = po + (o * sp.n) * sp.inner + in;
      double mx = row[0];
      for (int64_t k = 1; k < sp.n; ++k) mx = std::max(mx, row[k * sp.inner]);
      double z = 0.0;
      for (int64_t k = 0; k < sp.n; ++k) {
        const double e = std::exp(row[k * sp.inner] - mx);
        orow[k * sp.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (int64_t k = 0; k < sp.n; ++k) orow[k * sp.inner] *= inv;
    }
  }
  return finish("softmax", out, {&x}, [x, out, sp]() {
    if (!x.requires_grad()) return;
    const auto& g = out.storage()->grad;
    auto& dx = x.storage()->grad_buffer();
    const double* py = out.data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      for (int64_t in = 0; in < sp.inner; ++in) {
        const int64_t base = (o * sp.n) * sp.inner + in;
        double dot = 0.0;
        for (int64_t k = 0; k < sp.n; ++k) {
          const int64_t i = base + k * sp.inner;
          dot += g[static_cast<size_t>(i)] * py[i];
        }
        for (int64_t k = 0; k < sp.n; ++k) {
          const int64_t i = base + k * sp.inner;
          dx[static_cast<size_t>(i)] += py[i] * (g[static_cast<size_t>(i)] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int64_t axis) {
  MST_CHECK(x.defined(), "log_softmax: undefined operand");
  int64_t ax = normalize_axis("log_softmax", axis, x.dim());
  auto sp = split_axis(x.shape(), ax);
  Tensor out = make_tensor(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const double* row = px + (o * sp.n) * sp.inner + in;
      double* orow = po + (o * sp.n) * sp.inner + in;
      double mx = row[0];
      for (int64_t k = 1; k < sp.n; ++k) mx = std::max(mx, row[k * sp.inner]);
      double z = 0.0;
      for (int64_t k = 0; k < sp.n; ++k) z += std::exp(row[k * sp.inner] - mx);
      const double lz = std::log(z) + mx;
      for (int64_t k = 0; k < sp.n; ++k) orow[k * sp.inner] = row[k * sp.inner] - lz;
    }
  }
  return finish("log_softmax", out, {&x}, [x, out, sp]() {
    if (!x.requires_grad()) return;
    const auto& g = out.storage()->grad;
    auto& dx = x.storage()->grad_buffer();
    const double* py = out.data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      for (int64_t in = 0; in < sp.inner; ++in) {
        const int64_t base = (o * sp.n) * sp.inner + in;
        double gsum = 0.0;
        for (int64_t k = 0; k < sp.n; ++k) gsum += g[static_cast<size_t>(base + k * sp.inner)];
        for (int64_t k = 0; k < sp.n; ++k) {
          const int64_t i = base + k * sp.inner;
          dx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] - std::exp(py[i]) * gsum;
        }
      }
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  MST_CHECK(x.dim() >= 1, "layernorm: rank-0 input");
  const int64_t c = x.shape().back();
  MST_CHECK(gamma.dim() == 1 && gamma.numel() == c, "layernorm: gamma shape mismatch");
  MST_CHECK(beta.dim() == 1 && beta.numel() == c, "layernorm: beta shape mismatch");
  const int64_t rows = x.numel() / c;
  Tensor out = make_tensor(x.shape());
  std::vector<double> rstd(static_cast<size_t>(rows));
  std::vector<double> mu(static_cast<size_t>(rows));
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * c;
    double m = 0.0;
    for (int64_t i = 0; i < c; ++i) m += row[i];
    m /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      const double d = row[i] - m;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    mu[static_cast<size_t>(r)] = m;
    rstd[static_cast<size_t>(r)] = rs;
    double* orow = po + r * c;
    for (int64_t i = 0; i < c; ++i) orow[i] = pg[i] * ((row[i] - m) * rs) + pb[i];
  }
  return finish("layernorm", out, {&x, &gamma, &beta},
                [x, gamma, beta, out, rows, c, mu = std::move(mu), rstd = std::move(rstd)]() {
    const auto& g = out.storage()->grad;
    const double* px2 = x.data();
    const double* pg2 = gamma.data();
    double* dx = x.requires_grad() ? x.storage()->grad_buffer().data() : nullptr;
    double* dgamma = gamma.requires_grad() ? gamma.storage()->grad_buffer().data() : nullptr;
    double* dbeta = beta.requires_grad() ? beta.storage()->grad_buffer().data() : nullptr;
    std::vector<double> xhat(static_cast<size_t>(c));
    std::vector<double> dxh(static_cast<size_t>(c));
    for (int64_t r = 0; r < rows; ++r) {
      const double* row = px2 + r * c;
      const double* grow = g.data() + r * c;
      const double m = mu[static_cast<size_t>(r)];
      const double rs = rstd[static_cast<size_t>(r)];
      for (int64_t i = 0; i < c; ++i) xhat[static_cast<size_t>(i)] = (row[i] - m) * rs;
      if (dgamma) {
        for (int64_t i = 0; i < c; ++i) dgamma[i] += grow[i] * xhat[static_cast<size_t>(i)];
      }
      if (dbeta) {
        for (int64_t i = 0; i < c; ++i) dbeta[i] += grow[i];
      }
      if (dx) {
        double s1 = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < c; ++i) {
          dxh[static_cast<size_t>(i)] = grow[i] * pg2[i];
          s1 += dxh[static_cast<size_t>(i)];
          s2 += dxh[static_cast<size_t>(i)] * xhat[static_cast<size_t>(i)];
        }
        s1 /= static_cast<double>(c);
        s2 /= static_cast<double>(c);
        double* dxrow = dx + r * c;
        for (int64_t i = 0; i < c; ++i) {
          dxrow[i] += rs * (dxh[static_cast<size_t>(i)] - s1 - xhat[static_cast<size_t>(i)] * s2);
        }
      }
    }
  });
}

Tensor argmax_axis(const Tensor& x, int64_t axis) {
  int64_t ax = normalize_axis("argmax", axis, x.dim());
  auto sp = split_axis(x.shape(), ax);
  Shape os;
  for (int64_t i = 0; i < x.dim(); ++i) {
    if (i != ax) os.push_back(x.shape()[static_cast<size_t>(i)]);
  }
  Tensor out = make_tensor(os);
  const double* px = x.data();
  double* po = out.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const double* row = px + (o * sp.n) * sp.inner + in;
      int64_t best = 0;
      double bv = row[0];
      for (int64_t k = 1; k < sp.n; ++k) {
        const double v = row[k * sp.inner];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      po[o * sp.inner + in] = static_cast<double>(best);
    }
  }
  return out;
}

Tensor eq(const Tensor& a, const Tensor& b) {
  MST_CHECK(a.shape() == b.shape(), "eq: shape mismatch");
  Tensor out = make_tensor(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] == pb[i] ? 1.0 : 0.0;
  return out;
}

Tensor ne(const Tensor& a, const Tensor& b) {
  MST_CHECK(a.shape() == b.shape(), "ne: shape mismatch");
  Tensor out = make_tensor(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] != pb[i] ? 1.0 : 0.0;
  return out;
}

Tensor one_hot(const Tensor& labels, int64_t classes, int64_t axis) {
  MST_CHECK(classes >= 1, "one_hot: classes must be >= 1");
  Shape os = labels.shape();
  int64_t rank = labels.dim() + 1;
  if (axis < 0) axis += rank;
  MST_CHECK(axis >= 0 && axis < rank, "one_hot: axis out of range");
  os.insert(os.begin() + axis, classes);
  Tensor out = Tensor::zeros(os);
  auto sp = split_axis(os, axis);
  const double* pl = labels.data();
  double* po = out.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const double lv = pl[o * sp.inner + in];
      const int64_t k = static_cast<int64_t>(lv);
      MST_CHECK(static_cast<double>(k) == lv && k >= 0 && k < classes,
                "one_hot: label " + std::to_string(lv) + " outside [0," + std::to_string(classes) + ")");
      po[(o * sp.n + k) * sp.inner + in] = 1.0;
    }
  }
  return out;
}

}  // namespace mstwins
