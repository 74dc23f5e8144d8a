#pragma once

#include <cmath>
#include <initializer_list>

#include "mstwins/ops.hpp"

namespace mstwins {
namespace opdet {

// NaN/Inf is an error state, never silent: every forward op validates its
// output and names itself in the diagnostic.
void check_finite(const char* op, const Tensor& t);

bool wants_grad(std::initializer_list<const Tensor*> inputs);

// records out on the active tape when any input tracks gradients
template <typename Fn>
Tensor finish(const char* op, Tensor out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  check_finite(op, out);
  Tape* tape = active_tape();
  if (tape && wants_grad(inputs)) {
    out.set_requires_grad(true);
    tape->record(op, out, std::forward<Fn>(fn));
  }
  return out;
}

// broadcast shape of two operand shapes, right-aligned
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b);

// row-major strides; broadcast dims (extent 1 vs out extent > 1) get stride 0
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out);

inline int64_t normalize_axis(const char* op, int64_t axis, int64_t rank) {
  if (axis < 0) axis += rank;
  MST_CHECK(axis >= 0 && axis < rank, std::string(op) + ": axis out of range");
  return axis;
}

// flattens a shape into (outer, extent-at-axis, inner)
struct AxisSplit {
  int64_t outer, n, inner;
};
AxisSplit split_axis(const Shape& s, int64_t axis);

}  // namespace opdet
}  // namespace mstwins
