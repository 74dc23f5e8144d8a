#pragma once

#include <vector>

#include "mstwins/tensor.hpp"

namespace mstwins {

// ---- elementwise, with numpy-style broadcasting (right-aligned, extents
// ---- equal or 1). Gradients reduce over broadcast axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, double s);
Tensor rsub(double s, const Tensor& a);  // s - a
Tensor mul(const Tensor& a, double s);
Tensor div(const Tensor& a, double s);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);
Tensor clamp_min(const Tensor& a, double lo);

// ---- reductions
Tensor sum(const Tensor& a);                                   // scalar
Tensor sum_axis(const Tensor& a, int64_t axis, bool keepdim = false);
Tensor mean(const Tensor& a);                                  // scalar
Tensor mean_axis(const Tensor& a, int64_t axis, bool keepdim = false);

// ---- linear algebra
// a: [..., M, K], b: [..., K, N] -> [..., M, N]; leading dims broadcast
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- normalization / activations over an axis
Tensor softmax(const Tensor& x, int64_t axis);
// numerically stable log(softmax(x)); gradients stay alive under saturation
Tensor log_softmax(const Tensor& x, int64_t axis);
// normalizes the last axis; gamma/beta shaped (C,)
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- spatial ops on (B, C, H, W)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
              int64_t padding, int64_t groups = 1);
Tensor avgpool2d(const Tensor& x, int64_t kernel, int64_t stride);
Tensor global_avgpool(const Tensor& x);  // -> (B, C, 1, 1)
Tensor upsample_nearest(const Tensor& x, int64_t factor);
Tensor pad2d(const Tensor& x, int64_t top, int64_t bottom, int64_t left, int64_t right);
Tensor crop2d(const Tensor& x, int64_t top, int64_t left, int64_t height, int64_t width);

// ---- shape ops (all explicit copies)
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x, std::vector<int64_t> perm);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t stop);
// selects elements where mask != 0 into a 1-D tensor, row-major order
Tensor gather_mask(const Tensor& x, const Tensor& mask);

// ---- non-differentiable helpers (outputs never join the tape)
Tensor argmax_axis(const Tensor& x, int64_t axis);             // indices as doubles
Tensor eq(const Tensor& a, const Tensor& b);                   // 0/1 mask
Tensor ne(const Tensor& a, const Tensor& b);
// labels (...,) of integer values in [0, classes) -> one-hot along a new
// axis inserted at position `axis`
Tensor one_hot(const Tensor& labels, int64_t classes, int64_t axis);

// operator sugar
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return div(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return rsub(s, a); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }

}  // namespace mstwins
