#include "mstwins/tensor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>

namespace mstwins {

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) {
    MST_CHECK(e >= 0, "negative extent in shape " + shape_str(s));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace detail {

std::vector<double>& Storage::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

Tensor make_tensor(Shape shape) {
  auto st = std::make_shared<detail::Storage>();
  st->data.resize(static_cast<size_t>(numel_of(shape)));
  st->shape = std::move(shape);
  return Tensor(std::move(st));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape));
  t.st_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = make_tensor(std::move(shape));
  std::fill(t.st_->data.begin(), t.st_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return full({}, value); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  MST_CHECK(numel_of(shape) == static_cast<int64_t>(data.size()),
            "from_data: shape " + shape_str(shape) + " does not match payload size " +
                std::to_string(data.size()));
  auto st = std::make_shared<detail::Storage>();
  st->shape = std::move(shape);
  st->data = std::move(data);
  return Tensor(std::move(st));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, double mean) {
  Tensor t = make_tensor(std::move(shape));
  for (auto& v : t.st_->data) v = mean + stddev * rng.normal();
  return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = make_tensor(std::move(shape));
  for (auto& v : t.st_->data) v = rng.uniform(lo, hi);
  return t;
}

int64_t Tensor::size(int64_t axis) const {
  int64_t d = dim();
  if (axis < 0) axis += d;
  MST_CHECK(axis >= 0 && axis < d, "size: axis out of range for shape " + shape_str(shape()));
  return st_->shape[static_cast<size_t>(axis)];
}

double Tensor::item() const {
  MST_CHECK(numel() == 1, "item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return st_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  MST_CHECK(static_cast<int64_t>(idx.size()) == dim(), "at: index rank mismatch");
  int64_t flat = 0;
  size_t d = 0;
  for (int64_t i : idx) {
    MST_CHECK(i >= 0 && i < st_->shape[d], "at: index out of bounds");
    flat = flat * st_->shape[d] + i;
    ++d;
  }
  return st_->data[static_cast<size_t>(flat)];
}

Tensor& Tensor::set_requires_grad(bool v) {
  st_->requires_grad = v;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  MST_CHECK(has_grad(), "grad: no gradient present");
  return st_->grad;
}

void Tensor::zero_grad() {
  if (st_ && !st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), 0.0);
}

Tensor Tensor::detached_copy() const {
  auto st = std::make_shared<detail::Storage>();
  st->shape = st_->shape;
  st->data = st_->data;
  return Tensor(std::move(st));
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

int64_t Tape::record(const char* op, const Tensor& out, BackwardFn fn) {
  MST_CHECK(!consumed_, "tape: recording onto a consumed tape; re-run the forward pass");
  nodes_.push_back(Node{op, out.storage_ptr(), std::move(fn)});
  int64_t id = static_cast<int64_t>(nodes_.size()) - 1;
  out.storage()->tape = this;
  out.storage()->tape_node = id;
  return id;
}

void Tape::backward(const Tensor& loss) {
  MST_CHECK(loss.numel() == 1, "backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  MST_CHECK(loss.storage()->tape == this && loss.tape_node() >= 0,
            "backward: loss is detached from this tape");
  MST_CHECK(!consumed_, "backward: tape already consumed; re-run the forward pass");
  consumed_ = true;

  static const bool profile = std::getenv("MSTWINS_PROFILE_BACKWARD") != nullptr;
  std::map<std::string, double> op_seconds;

  loss.storage()->grad_buffer()[0] = 1.0;
  for (int64_t i = loss.tape_node(); i >= 0; --i) {
    Node& node = nodes_[static_cast<size_t>(i)];
    if (node.out->grad.empty()) continue;  // no gradient flowed here
    if (profile) {
      auto t0 = std::chrono::steady_clock::now();
      node.fn();
      auto t1 = std::chrono::steady_clock::now();
      op_seconds[node.op] += std::chrono::duration<double>(t1 - t0).count();
    } else {
      node.fn();
    }
  }
  if (profile) {
    std::fprintf(stderr, "backward profile (%lld nodes):\n",
                 static_cast<long long>(nodes_.size()));
    for (const auto& [op, sec] : op_seconds) {
      std::fprintf(stderr, "  %-16s %.4fs\n", op.c_str(), sec);
    }
  }
}

void backward(const Tensor& loss) {
  MST_CHECK(loss.defined(), "backward: undefined loss tensor");
  MST_CHECK(loss.storage()->tape != nullptr && loss.tape_node() >= 0,
            "backward: loss is not attached to a tape");
  loss.storage()->tape->backward(loss);
}

}  // namespace mstwins
