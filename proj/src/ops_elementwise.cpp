#include <algorithm>
#include <cmath>

#include "ops_common.hpp"

namespace mstwins {

namespace opdet {

void check_finite(const char* op, const Tensor& t) {
  const double* p = t.data();
  const int64_t n = t.numel();
  // x*0 is 0 only for finite x, so the scan stays a vectorizable sum
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += p[i] * 0.0;
  if (acc == 0.0) return;
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw Error(std::string(op) + ": produced a non-finite value at flat index " +
                  std::to_string(i));
    }
  }
  throw Error(std::string(op) + ": produced a non-finite value");
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const size_t ra = a.size(), rb = b.size();
  const size_t r = std::max(ra, rb);
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t ea = i < r - ra ? 1 : a[i - (r - ra)];
    int64_t eb = i < r - rb ? 1 : b[i - (r - rb)];
    if (ea == eb || eb == 1) {
      out[i] = ea;
    } else if (ea == 1) {
      out[i] = eb;
    } else {
      throw Error(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                  " are not broadcastable");
    }
  }
  return out;
}

std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const size_t r = out.size(), ri = in.size();
  std::vector<int64_t> strides(r, 0);
  int64_t s = 1;
  for (size_t i = ri; i-- > 0;) {
    size_t o = i + (r - ri);
    if (in[i] != 1 || out[o] == 1) strides[o] = s;
    if (in[i] == 1 && out[o] != 1) strides[o] = 0;
    s *= in[i];
  }
  return strides;
}

AxisSplit split_axis(const Shape& s, int64_t axis) {
  AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
  for (int64_t i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

}  // namespace opdet

using opdet::broadcast_shape;
using opdet::broadcast_strides;
using opdet::finish;

namespace {

enum class BinOp { Add, Sub, Mul, Div };

template <BinOp K>
inline double apply(double a, double b) {
  if constexpr (K == BinOp::Add) return a + b;
  if constexpr (K == BinOp::Sub) return a - b;
  if constexpr (K == BinOp::Mul) return a * b;
  return a / b;
}

template <BinOp K>
Tensor binary(const char* name, const Tensor& a, const Tensor& b) {
  MST_CHECK(a.defined() && b.defined(), std::string(name) + ": undefined operand");
  Shape os = broadcast_shape(name, a.shape(), b.shape());
  Tensor out = make_tensor(os);
  const int64_t n = out.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();

  if (a.shape() == os && b.shape() == os) {
    for (int64_t i = 0; i < n; ++i) po[i] = apply<K>(pa[i], pb[i]);
  } else if (b.numel() == 1 && a.shape() == os) {
    const double bv = pb[0];
    for (int64_t i = 0; i < n; ++i) po[i] = apply<K>(pa[i], bv);
  } else if (a.numel() == 1 && b.shape() == os) {
    const double av = pa[0];
    for (int64_t i = 0; i < n; ++i) po[i] = apply<K>(av, pb[i]);
  } else {
    auto sa = broadcast_strides(a.shape(), os);
    auto sb = broadcast_strides(b.shape(), os);
    const size_t r = os.size();
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
      po[i] = apply<K>(pa[ia], pb[ib]);
      for (size_t d = r; d-- > 0;) {
        ++idx[d];
        ia += sa[d];
        ib += sb[d];
        if (idx[d] < os[d]) break;
        idx[d] = 0;
        ia -= sa[d] * os[d];
        ib -= sb[d] * os[d];
      }
    }
  }

  return finish(name, out, {&a, &b}, [a, b, out]() {
    const auto& g = out.storage()->grad;
    const Shape& os2 = out.shape();
    const int64_t m = out.numel();
    const double* pa2 = a.data();
    const double* pb2 = b.data();
    const bool a_full = a.shape() == os2;
    const bool b_full = b.shape() == os2;

    if (a.requires_grad()) {
      double* da = a.storage()->grad_buffer().data();
      if (a_full && b_full) {
        if constexpr (K == BinOp::Add) {
          for (int64_t i = 0; i < m; ++i) da[i] += g[static_cast<size_t>(i)];
        } else if constexpr (K == BinOp::Sub) {
          for (int64_t i = 0; i < m; ++i) da[i] += g[static_cast<size_t>(i)];
        } else if constexpr (K == BinOp::Mul) {
          for (int64_t i = 0; i < m; ++i) da[i] += g[static_cast<size_t>(i)] * pb2[i];
        } else {
          for (int64_t i = 0; i < m; ++i) da[i] += g[static_cast<size_t>(i)] / pb2[i];
        }
      } else if (a_full && b.numel() == 1) {
        const double bv = pb2[0];
        if constexpr (K == BinOp::Add || K == BinOp::Sub) {
          for (int64_t i = 0; i < m; ++i) da[i] += g[static_cast<size_t>(i)];
        } else if constexpr (K == BinOp::Mul) {
          for (int64_t i = 0; i < m; ++i) da[i] += g[static_cast<size_t>(i)] * bv;
        } else {
          const double inv = 1.0 / bv;
          for (int64_t i = 0; i < m; ++i) da[i] += g[static_cast<size_t>(i)] * inv;
        }
      } else {
        // general broadcast: accumulate through the strided view
        auto sa = broadcast_strides(a.shape(), os2);
        auto sb = broadcast_strides(b.shape(), os2);
        const size_t r = os2.size();
        std::vector<int64_t> idx(r, 0);
        int64_t ia = 0, ib = 0;
        for (int64_t i = 0; i < m; ++i) {
          const double gi = g[static_cast<size_t>(i)];
          if constexpr (K == BinOp::Add || K == BinOp::Sub) {
            da[ia] += gi;
          } else if constexpr (K == BinOp::Mul) {
            da[ia] += gi * pb2[ib];
          } else {
            da[ia] += gi / pb2[ib];
          }
          for (size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < os2[d]) break;
            idx[d] = 0;
            ia -= sa[d] * os2[d];
            ib -= sb[d] * os2[d];
          }
        }
      }
    }
    if (b.requires_grad()) {
      double* db = b.storage()->grad_buffer().data();
      if (a_full && b_full) {
        if constexpr (K == BinOp::Add) {
          for (int64_t i = 0; i < m; ++i) db[i] += g[static_cast<size_t>(i)];
        } else if constexpr (K == BinOp::Sub) {
          for (int64_t i = 0; i < m; ++i) db[i] -= g[static_cast<size_t>(i)];
        } else if constexpr (K == BinOp::Mul) {
          for (int64_t i = 0; i < m; ++i) db[i] += g[static_cast<size_t>(i)] * pa2[i];
        } else {
          for (int64_t i = 0; i < m; ++i) {
            db[i] -= g[static_cast<size_t>(i)] * pa2[i] / (pb2[i] * pb2[i]);
          }
        }
      } else if (b.numel() == 1 && a_full) {
        double acc = 0.0;
        if constexpr (K == BinOp::Add) {
          for (int64_t i = 0; i < m; ++i) acc += g[static_cast<size_t>(i)];
        } else if constexpr (K == BinOp::Sub) {
          for (int64_t i = 0; i < m; ++i) acc -= g[static_cast<size_t>(i)];
        } else if constexpr (K == BinOp::Mul) {
          for (int64_t i = 0; i < m; ++i) acc += g[static_cast<size_t>(i)] * pa2[i];
        } else {
          const double bv = pb2[0];
          for (int64_t i = 0; i < m; ++i) acc -= g[static_cast<size_t>(i)] * pa2[i] / (bv * bv);
        }
        db[0] += acc;
      } else if (b.dim() == 1 && !os2.empty() && b.numel() == os2.back() && a_full) {
        // trailing-vector broadcast (bias terms): column-wise reduction
        const int64_t cols = b.numel();
        const int64_t rows = m / cols;
        if constexpr (K == BinOp::Add || K == BinOp::Sub) {
          for (int64_t r2 = 0; r2 < rows; ++r2) {
            const double* grow = g.data() + r2 * cols;
            if constexpr (K == BinOp::Add) {
              for (int64_t j = 0; j < cols; ++j) db[j] += grow[j];
            } else {
              for (int64_t j = 0; j < cols; ++j) db[j] -= grow[j];
            }
          }
        } else {
          for (int64_t r2 = 0; r2 < rows; ++r2) {
            const double* grow = g.data() + r2 * cols;
            const double* arow = pa2 + r2 * cols;
            if constexpr (K == BinOp::Mul) {
              for (int64_t j = 0; j < cols; ++j) db[j] += grow[j] * arow[j];
            } else {
              for (int64_t j = 0; j < cols; ++j) {
                db[j] -= grow[j] * arow[j] / (pb2[j] * pb2[j]);
              }
            }
          }
        }
      } else {
        auto sa = broadcast_strides(a.shape(), os2);
        auto sb = broadcast_strides(b.shape(), os2);
        const size_t r = os2.size();
        std::vector<int64_t> idx(r, 0);
        int64_t ia = 0, ib = 0;
        for (int64_t i = 0; i < m; ++i) {
          const double gi = g[static_cast<size_t>(i)];
          if constexpr (K == BinOp::Add) {
            db[ib] += gi;
          } else if constexpr (K == BinOp::Sub) {
            db[ib] -= gi;
          } else if constexpr (K == BinOp::Mul) {
            db[ib] += gi * pa2[ia];
          } else {
            const double bv = pb2[ib];
            db[ib] -= gi * pa2[ia] / (bv * bv);
          }
          for (size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < os2[d]) break;
            idx[d] = 0;
            ia -= sa[d] * os2[d];
            ib -= sb[d] * os2[d];
          }
        }
      }
    }
  });
}

template <typename FwdFn, typename BwdFn>
Tensor unary(const char* name, const Tensor& a, FwdFn fwd, BwdFn dfn) {
  MST_CHECK(a.defined(), std::string(name) + ": undefined operand");
  Tensor out = make_tensor(a.shape());
  const int64_t n = a.numel();
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  return finish(name, out, {&a}, [a, out, dfn]() {
    if (!a.requires_grad()) return;
    const auto& g = out.storage()->grad;
    std::vector<double>& da = a.storage()->grad_buffer();
    const double* pa2 = a.data();
    const double* po2 = out.data();
    const int64_t m = a.numel();
    for (int64_t i = 0; i < m; ++i) {
      da[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * dfn(pa2[i], po2[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary<BinOp::Add>("add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary<BinOp::Sub>("sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary<BinOp::Mul>("mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary<BinOp::Div>("div", a, b); }

Tensor add(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
Tensor sub(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
Tensor rsub(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }
Tensor mul(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
Tensor div(const Tensor& a, double s) { return div(a, Tensor::scalar(s)); }

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a,
               [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary("gelu", a,
               [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
               [=](double x, double) {
                 return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                        x * inv_sqrt2pi * std::exp(-0.5 * x * x);
               });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor pow_scalar(const Tensor& a, double p) {
  if (p == 0.0) {
    return unary("pow", a, [](double) { return 1.0; }, [](double, double) { return 0.0; });
  }
  return unary("pow", a, [p](double x) { return std::pow(x, p); },
               [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary("clamp_min", a, [lo](double x) { return x < lo ? lo : x; },
               [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

}  // namespace mstwins
