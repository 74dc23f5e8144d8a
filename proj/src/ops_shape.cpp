#include <algorithm>
#include <numeric>

#include "ops_common.hpp"

namespace mstwins {

using opdet::finish;
using opdet::normalize_axis;
using opdet::split_axis;

Tensor reshape(const Tensor& x, Shape new_shape) {
  MST_CHECK(x.defined(), "reshape: undefined operand");
  MST_CHECK(numel_of(new_shape) == x.numel(), "reshape: cannot view " + shape_str(x.shape()) +
                                                  " as " + shape_str(new_shape));
  Tensor out = make_tensor(std::move(new_shape));
  std::copy(x.data(), x.data() + x.numel(), out.data());
  return finish("reshape", out, {&x}, [x, out]() {
    if (!x.requires_grad()) return;
    const auto& g = out.storage()->grad;
    auto& dx = x.storage()->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

namespace {

struct PermPlan {
  Shape out_shape;
  std::vector<int64_t> src_strides;  // stride in the source per out dim
};

PermPlan plan_permutation(const Shape& in_shape, const std::vector<int64_t>& perm) {
  const size_t r = in_shape.size();
  std::vector<int64_t> in_strides(r, 1);
  for (size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  PermPlan plan;
  plan.out_shape.resize(r);
  plan.src_strides.resize(r);
  for (size_t i = 0; i < r; ++i) {
    plan.out_shape[i] = in_shape[static_cast<size_t>(perm[i])];
    plan.src_strides[i] = in_strides[static_cast<size_t>(perm[i])];
  }
  return plan;
}

// iterates the permuted view with the innermost output dimension hoisted
// into a tight strided loop; Body(flat_index, view_offset, count, stride)
template <typename Body>
void permuted_rows(const PermPlan& plan, Body&& body) {
  const size_t r = plan.out_shape.size();
  const int64_t n = numel_of(plan.out_shape);
  if (n == 0) return;
  const int64_t inner = plan.out_shape[r - 1];
  const int64_t istride = plan.src_strides[r - 1];
  std::vector<int64_t> idx(r, 0);
  int64_t base = 0;
  for (int64_t i = 0; i < n; i += inner) {
    body(i, base, inner, istride);
    for (size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      base += plan.src_strides[d];
      if (idx[d] < plan.out_shape[d]) break;
      idx[d] = 0;
      base -= plan.src_strides[d] * plan.out_shape[d];
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& x, std::vector<int64_t> perm) {
  MST_CHECK(x.defined(), "transpose: undefined operand");
  const size_t r = x.shape().size();
  MST_CHECK(perm.size() == r, "transpose: permutation rank mismatch");
  MST_CHECK(r >= 1, "transpose: rank-0 tensor");
  std::vector<bool> seen(r, false);
  for (int64_t p : perm) {
    MST_CHECK(p >= 0 && p < static_cast<int64_t>(r) && !seen[static_cast<size_t>(p)],
              "transpose: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  PermPlan plan = plan_permutation(x.shape(), perm);
  Tensor out = make_tensor(plan.out_shape);
  {
    const double* src = x.data();
    double* dst = out.data();
    permuted_rows(plan, [&](int64_t i, int64_t off, int64_t count, int64_t stride) {
      for (int64_t j = 0; j < count; ++j) dst[i + j] = src[off + j * stride];
    });
  }
  return finish("transpose", out, {&x}, [x, out, plan = std::move(plan)]() {
    if (!x.requires_grad()) return;
    const double* g = out.storage()->grad.data();
    double* dx = x.storage()->grad_buffer().data();
    permuted_rows(plan, [&](int64_t i, int64_t off, int64_t count, int64_t stride) {
      for (int64_t j = 0; j < count; ++j) dx[off + j * stride] += g[i + j];
    });
  });
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  MST_CHECK(!parts.empty(), "concat: no inputs");
  const Tensor& first = parts.front();
  int64_t ax = normalize_axis("concat", axis, first.dim());
  int64_t total = 0;
  for (const Tensor& t : parts) {
    MST_CHECK(t.dim() == first.dim(), "concat: rank mismatch");
    for (int64_t i = 0; i < t.dim(); ++i) {
      if (i != ax) {
        MST_CHECK(t.shape()[static_cast<size_t>(i)] == first.shape()[static_cast<size_t>(i)],
                  "concat: extents disagree outside the concat axis");
      }
    }
    total += t.shape()[static_cast<size_t>(ax)];
  }
  Shape os = first.shape();
  os[static_cast<size_t>(ax)] = total;
  Tensor out = make_tensor(os);
  auto osp = split_axis(os, ax);
  double* po = out.data();
  int64_t offset = 0;
  for (const Tensor& t : parts) {
    const int64_t tn = t.shape()[static_cast<size_t>(ax)];
    const double* pt = t.data();
    for (int64_t o = 0; o < osp.outer; ++o) {
      std::copy(pt + o * tn * osp.inner, pt + (o + 1) * tn * osp.inner,
                po + (o * osp.n + offset) * osp.inner);
    }
    offset += tn;
  }
  bool any = false;
  for (const Tensor& t : parts) any = any || t.requires_grad();
  opdet::check_finite("concat", out);
  Tape* tape = active_tape();
  if (tape && any) {
    out.set_requires_grad(true);
    tape->record("concat", out, [parts, out, osp, ax]() {
      const auto& g = out.storage()->grad;
      int64_t off = 0;
      for (const Tensor& t : parts) {
        const int64_t tn = t.shape()[static_cast<size_t>(ax)];
        if (t.requires_grad()) {
          auto& dt = t.storage()->grad_buffer();
          for (int64_t o = 0; o < osp.outer; ++o) {
            const double* src = g.data() + (o * osp.n + off) * osp.inner;
            double* dst = dt.data() + o * tn * osp.inner;
            for (int64_t i = 0; i < tn * osp.inner; ++i) dst[i] += src[i];
          }
        }
        off += tn;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t stop) {
  MST_CHECK(x.defined(), "slice: undefined operand");
  int64_t ax = normalize_axis("slice", axis, x.dim());
  const int64_t extent = x.shape()[static_cast<size_t>(ax)];
  MST_CHECK(start >= 0 && stop > start && stop <= extent, "slice: range [" +
                std::to_string(start) + "," + std::to_string(stop) + ") out of bounds for extent " +
                std::to_string(extent));
  Shape os = x.shape();
  os[static_cast<size_t>(ax)] = stop - start;
  Tensor out = make_tensor(os);
  auto sp = split_axis(x.shape(), ax);
  const int64_t span = stop - start;
  const double* px = x.data();
  double* po = out.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    std::copy(px + (o * sp.n + start) * sp.inner, px + (o * sp.n + stop) * sp.inner,
              po + o * span * sp.inner);
  }
  return finish("slice", out, {&x}, [x, out, sp, start, span]() {
    if (!x.requires_grad()) return;
    const auto& g = out.storage()->grad;
    auto& dx = x.storage()->grad_buffer();
    for (int64_t o = 0; o < sp.outer; ++o) {
      const double* src = g.data() + o * span * sp.inner;
      double* dst = dx.data() + (o * sp.n + start) * sp.inner;
      for (int64_t i = 0; i < span * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor gather_mask(const Tensor& x, const Tensor& mask) {
  MST_CHECK(x.defined() && mask.defined(), "gather_mask: undefined operand");
  MST_CHECK(x.numel() == mask.numel(), "gather_mask: mask size mismatch");
  std::vector<int64_t> picks;
  const double* pm = mask.data();
  for (int64_t i = 0; i < mask.numel(); ++i) {
    if (pm[i] != 0.0) picks.push_back(i);
  }
  Tensor out = make_tensor({static_cast<int64_t>(picks.size())});
  const double* px = x.data();
  double* po = out.data();
  for (size_t i = 0; i < picks.size(); ++i) po[i] = px[picks[i]];
  return finish("gather_mask", out, {&x}, [x, out, picks = std::move(picks)]() {
    if (!x.requires_grad()) return;
    const auto& g = out.storage()->grad;
    auto& dx = x.storage()->grad_buffer();
    for (size_t i = 0; i < picks.size(); ++i) dx[static_cast<size_t>(picks[i])] += g[i];
  });
}

}  // namespace mstwins
