#include "mstwins/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mstwins {

Tensor finite_diff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                        double h_scale) {
  Tensor g = Tensor::zeros(x.shape());
  Tensor probe = x.detached_copy();
  double* p = probe.data();
  double* out = g.data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = p[i];
    const double h = h_scale * (1.0 + std::abs(orig));
    p[i] = orig + h;
    const double fp = f(probe).item();
    p[i] = orig - h;
    const double fm = f(probe).item();
    p[i] = orig;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

GradCheckReport check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& loss_fn,
                                std::vector<Tensor> inputs, int64_t probes_per_input, Rng* rng,
                                double h_scale) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn(inputs);
    MST_CHECK(loss.numel() == 1, "check_gradients: loss_fn must return a scalar");
    tape.backward(loss);
    for (size_t i = 0; i < inputs.size(); ++i) {
      analytic[i] = inputs[i].has_grad() ? inputs[i].grad()
                                         : std::vector<double>(static_cast<size_t>(inputs[i].numel()), 0.0);
    }
  }
  // FD evaluations run detached so mutated inputs never join a tape
  for (Tensor& t : inputs) t.set_requires_grad(false);

  GradCheckReport rep;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    const int64_t n = t.numel();
    std::vector<int64_t> picks;
    if (probes_per_input <= 0 || probes_per_input >= n) {
      picks.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) picks[static_cast<size_t>(i)] = i;
    } else {
      MST_CHECK(rng != nullptr, "check_gradients: rng required for sampled probing");
      for (int64_t i = 0; i < probes_per_input; ++i) picks.push_back(rng->index(n));
      std::sort(picks.begin(), picks.end());
      picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    }
    double* p = t.data();
    for (int64_t i : picks) {
      const double orig = p[i];
      const double h = h_scale * (1.0 + std::abs(orig));
      p[i] = orig + h;
      const double fp = loss_fn(inputs).item();
      p[i] = orig - h;
      const double fm = loss_fn(inputs).item();
      p[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = analytic[ti][static_cast<size_t>(i)];
      const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 0.01});
      ++rep.probes;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input " + std::to_string(ti) + " elem " + std::to_string(i) + ": ad=" +
                    std::to_string(ad) + " fd=" + std::to_string(fd);
      }
    }
  }
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  return rep;
}

}  // namespace mstwins
