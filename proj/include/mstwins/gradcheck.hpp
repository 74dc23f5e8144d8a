#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mstwins/ops.hpp"

namespace mstwins {

// Central-difference gradient of a scalar function, the independent oracle
// for every backward() implementation. Per-element step h = h_scale*(1+|x|).
// `f` must be deterministic and side-effect-free; it is evaluated with no
// tape active.
Tensor finite_diff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                        double h_scale = 1e-6);

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t probes = 0;
  std::string worst;  // human-readable location of the largest deviation

  bool ok(double tol = 1e-5) const { return probes > 0 && max_rel_err < tol; }
};

// Compares reverse-mode gradients of `loss_fn(inputs)` against central finite
// differences at up to `probes_per_input` randomly chosen elements of each
// input (all elements when probes_per_input <= 0). The relative error uses
// |ad-fd| / max(|ad|, |fd|, 0.01).
GradCheckReport check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& loss_fn,
                                std::vector<Tensor> inputs, int64_t probes_per_input = 0,
                                Rng* rng = nullptr, double h_scale = 1e-6);

}  // namespace mstwins
