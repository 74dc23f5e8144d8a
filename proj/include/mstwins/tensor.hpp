#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "mstwins/common.hpp"

namespace mstwins {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

namespace detail {

struct Storage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches it
  bool requires_grad = false;
  Tape* tape = nullptr;  // tape that recorded the producing op, if any
  int64_t tape_node = -1;

  // lazily allocates a zero grad buffer of matching extent
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major f64 tensor. Copies of a Tensor share the same storage
// (data, grad, flags); all ops produce fresh storage, so a tensor's payload
// never changes after the op that made it, except through its grad buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0);

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  int64_t dim() const { return static_cast<int64_t>(st_->shape.size()); }
  int64_t size(int64_t axis) const;
  int64_t numel() const { return static_cast<int64_t>(st_->data.size()); }

  double* data() { return st_->data.data(); }
  const double* data() const { return st_->data.data(); }
  std::vector<double>& vec() { return st_->data; }
  const std::vector<double>& vec() const { return st_->data; }

  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const { return st_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool has_grad() const { return st_ && !st_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& grad_buffer() { return st_->grad_buffer(); }
  void zero_grad();

  // same storage, detached from the tape and without grad tracking
  Tensor detached_copy() const;

  bool same_storage(const Tensor& other) const { return st_ == other.st_; }

  detail::Storage* storage() const { return st_.get(); }
  std::shared_ptr<detail::Storage> storage_ptr() const { return st_; }

  Tape* tape() const { return st_->tape; }
  int64_t tape_node() const { return st_->tape_node; }

 private:
  explicit Tensor(std::shared_ptr<detail::Storage> st) : st_(std::move(st)) {}
  std::shared_ptr<detail::Storage> st_;

  friend Tensor make_tensor(Shape shape);
};

// uninitialized-value tensor for op kernels to fill
Tensor make_tensor(Shape shape);

// Append-only record of executed ops. Backward visits nodes in strictly
// decreasing append order; a tape can be consumed exactly once.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  int64_t record(const char* op, const Tensor& out, BackwardFn fn);
  void backward(const Tensor& loss);

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    const char* op;
    std::shared_ptr<detail::Storage> out;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Thread-local recording scope. Ops record onto the innermost active tape;
// with no scope active they run in plain inference mode.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Runs the backward pass of the tape that produced `loss`.
// Requires a scalar, tape-attached loss.
void backward(const Tensor& loss);

}  // namespace mstwins
