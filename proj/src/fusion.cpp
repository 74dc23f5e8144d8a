#include "mstwins/fusion.hpp"

namespace mstwins {

McAbParams make_mc_ab(ParamRegistry& reg, const std::string& prefix, int64_t channels,
                      int64_t reduction, Rng& rng) {
  MST_CHECK(reduction >= 1 && channels % reduction == 0,
            "mc_ab: reduction must divide channels (C=" + std::to_string(channels) + ", r=" +
                std::to_string(reduction) + ")");
  McAbParams p;
  p.channels = channels;
  p.reduction = reduction;
  const int64_t mid = channels / reduction;
  p.global_fc1 = make_linear(reg, prefix + ".gfc1", channels, mid, rng);
  p.global_fc2 = make_linear(reg, prefix + ".gfc2", mid, channels, rng);
  p.local_conv1 = make_conv(reg, prefix + ".lconv1", mid, channels, 1, 1, 0, 1, rng);
  p.local_conv2 = make_conv(reg, prefix + ".lconv2", channels, mid, 1, 1, 0, 1, rng);
  return p;
}

Tensor mc_ab(const Tensor& x, const McAbParams& p) {
  MST_CHECK(x.dim() == 4, "mc_ab: expected (B,C,H,W)");
  MST_CHECK(x.size(1) == p.channels, "mc_ab: channel mismatch, got " + shape_str(x.shape()));
  const int64_t b = x.size(0), c = x.size(1);

  // channel gate from the pooled vector, broadcast over space
  Tensor pooled = reshape(global_avgpool(x), {b, c});
  Tensor g = linear(relu(linear(pooled, p.global_fc1)), p.global_fc2);
  Tensor g_map = reshape(g, {b, c, 1, 1});

  // per-pixel gate from the pointwise branch
  Tensor l = conv2d(relu(conv2d(x, p.local_conv1)), p.local_conv2);

  Tensor gate = sigmoid(add(l, g_map));
  return mul(x, gate);
}

MsFifParams make_ms_fif(ParamRegistry& reg, const std::string& prefix, int64_t channels,
                        int64_t reduction, bool shared_gates, Rng& rng) {
  MsFifParams p;
  p.channels = channels;
  const int64_t c2 = channels * 2;
  p.down_proj = make_conv(reg, prefix + ".down", c2, channels, 1, 1, 0, 1, rng);
  p.gate_hi = make_mc_ab(reg, prefix + ".gate_hi", c2, reduction, rng);
  p.gate_lo = shared_gates ? p.gate_hi : make_mc_ab(reg, prefix + ".gate_lo", c2, reduction, rng);
  p.mix = make_conv(reg, prefix + ".mix", c2, c2 * 2, 1, 1, 0, 1, rng);
  p.gate_out = make_mc_ab(reg, prefix + ".gate_out", c2, reduction, rng);
  p.up_proj = make_conv(reg, prefix + ".up", channels, c2, 1, 1, 0, 1, rng);
  return p;
}

Tensor ms_fif(const Tensor& x_hi, const Tensor& y_lo, const MsFifParams& p) {
  MST_CHECK(x_hi.dim() == 4 && y_lo.dim() == 4, "ms_fif: expected (B,C,H,W) inputs");
  const int64_t b = x_hi.size(0), c = x_hi.size(1), h = x_hi.size(2), w = x_hi.size(3);
  MST_CHECK(c == p.channels, "ms_fif: channel mismatch with params");
  MST_CHECK(y_lo.size(0) == b, "ms_fif: batch mismatch");
  MST_CHECK(y_lo.size(1) == 2 * c, "ms_fif: deeper map must have 2x channels, got " +
                                       shape_str(y_lo.shape()) + " for " + shape_str(x_hi.shape()));
  MST_CHECK(y_lo.size(2) == h / 2 && y_lo.size(3) == w / 2 && h % 2 == 0 && w % 2 == 0,
            "ms_fif: deeper map must be at half resolution, got " + shape_str(y_lo.shape()) +
                " for " + shape_str(x_hi.shape()));

  // bring the finer map down to the deeper map's scale and width
  Tensor down = conv2d(avgpool2d(x_hi, 2, 2), p.down_proj);

  Tensor a = mc_ab(down, p.gate_hi);
  Tensor bgate = mc_ab(y_lo, p.gate_lo);
  Tensor mixed = conv2d(concat({a, bgate}, 1), p.mix);
  Tensor fused = mc_ab(mixed, p.gate_out);

  // restore the finer scale
  return conv2d(upsample_nearest(fused, 2), p.up_proj);
}

}  // namespace mstwins
