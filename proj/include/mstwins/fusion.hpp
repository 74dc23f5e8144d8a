#pragma once

#include "mstwins/nn.hpp"

namespace mstwins {

// Two-branch channel/spatial gating block: a globally pooled squeeze-style
// MLP branch plus a per-pixel pointwise-conv branch, combined additively and
// squashed to a (0,1) gate that multiplies the input.
struct McAbParams {
  int64_t channels = 0;
  int64_t reduction = 4;
  Linear global_fc1, global_fc2;   // C -> C/r -> C on the pooled vector
  Conv2dParams local_conv1, local_conv2;  // 1x1 convs, C -> C/r -> C
};

McAbParams make_mc_ab(ParamRegistry& reg, const std::string& prefix, int64_t channels,
                      int64_t reduction, Rng& rng);

Tensor mc_ab(const Tensor& x, const McAbParams& p);

// Fuses a higher-resolution stage map with the next-deeper stage map
// (half resolution, double channels) back to the finer scale.
struct MsFifParams {
  int64_t channels = 0;  // C of the higher-resolution input
  Conv2dParams down_proj;  // 1x1, C -> 2C after the 2x2 average pool
  McAbParams gate_hi, gate_lo;
  Conv2dParams mix;        // 1x1, 4C -> 2C after concat
  McAbParams gate_out;
  Conv2dParams up_proj;    // 1x1, 2C -> C after the x2 upsample
};

MsFifParams make_ms_fif(ParamRegistry& reg, const std::string& prefix, int64_t channels,
                        int64_t reduction, bool shared_gates, Rng& rng);

// x_hi (B,C,H,W), y_lo (B,2C,H/2,W/2) -> (B,C,H,W)
Tensor ms_fif(const Tensor& x_hi, const Tensor& y_lo, const MsFifParams& p);

}  // namespace mstwins
