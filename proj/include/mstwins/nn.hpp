#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mstwins/ops.hpp"

namespace mstwins {

// Ordered name -> tensor map of trainable parameters. Entries alias the
// module tensors (shared storage), and the registration order is fixed by
// construction order, so identical configs always produce identical
// parameter counts and ordering.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Tensor init);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  Tensor* find(const std::string& name);
  size_t count() const { return entries_.size(); }
  int64_t total_elements() const;
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out)
};

struct LayerNormParams {
  Tensor gamma, beta;  // (C)
};

struct Conv2dParams {
  Tensor w;  // (Cout, Cin/groups, kh, kw)
  Tensor b;  // (Cout)
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t groups = 1;
};

Linear make_linear(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t out,
                   Rng& rng, double stddev = 0.02);
LayerNormParams make_layernorm(ParamRegistry& reg, const std::string& prefix, int64_t c);
// stddev < 0 selects the fan-in default
Conv2dParams make_conv(ParamRegistry& reg, const std::string& prefix, int64_t cout, int64_t cin,
                       int64_t kernel, int64_t stride, int64_t padding, int64_t groups, Rng& rng,
                       double stddev = -1.0);

// x (..., in) -> (..., out)
Tensor linear(const Tensor& x, const Linear& l);
Tensor layernorm(const Tensor& x, const LayerNormParams& p);
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

// (B,C,H,W) <-> (B,H*W,C)
Tensor to_tokens(const Tensor& x);
Tensor to_grid(const Tensor& tokens, int64_t h, int64_t w);

// ---- attention -------------------------------------------------------

struct AttentionParams {
  int64_t dim = 0;
  int64_t num_heads = 1;
  int64_t window = 1;    // LSA group extent
  int64_t sr_ratio = 1;  // GSA key/value sub-sample stride
  Linear q, k, v, proj;
  Conv2dParams sr;        // present when sr_ratio > 1
  LayerNormParams sr_norm;
};

AttentionParams make_attention(ParamRegistry& reg, const std::string& prefix, int64_t dim,
                               int64_t num_heads, int64_t window, int64_t sr_ratio, Rng& rng);

// multi-head scaled dot-product attention over token sequences;
// q_tokens (B,Nq,C), kv_tokens (B,Nkv,C) -> (B,Nq,C).
// When attn_out is given it receives the (B,heads,Nq,Nkv) weight tensor.
Tensor attention(const Tensor& q_tokens, const Tensor& kv_tokens, const AttentionParams& p,
                 Tensor* attn_out = nullptr);

// local group self-attention: windowed non-overlapping attention on (B,C,H,W)
Tensor lsa(const Tensor& x, const AttentionParams& p);
// global sub-sampled attention: queries everywhere, keys/values from an
// sr_ratio-strided projection (skipped entirely when sr_ratio == 1)
Tensor gsa(const Tensor& x, const AttentionParams& p);

// ---- stages ----------------------------------------------------------

struct StageConfig {
  int64_t in_channels = 1;
  int64_t out_channels = 96;
  int64_t patch_stride = 4;
  int64_t depth = 2;  // number of LSA/GSA pairs
  int64_t window = 4;
  int64_t sr_ratio = 1;
  int64_t mlp_ratio = 4;
  int64_t num_heads = 3;
};

struct PatchEmbed {
  Conv2dParams proj;
  LayerNormParams norm;
  int64_t stride = 4;
};

PatchEmbed make_patch_embed(ParamRegistry& reg, const std::string& prefix, const StageConfig& cfg,
                            Rng& rng);

// strided patch projection followed by channel layernorm; pads right/bottom
// to a stride multiple first
Tensor patch_embed(const Tensor& x, const PatchEmbed& pe);

// one residual attention + MLP unit: x += attn(LN(x)); x += MLP(LN(x))
struct BlockUnit {
  LayerNormParams norm1;
  AttentionParams attn;
  LayerNormParams norm2;
  Linear fc1, fc2;
  bool local = true;  // LSA when true, GSA otherwise
};

// alternating LSA/GSA block stack of one stage, with an optional depthwise
// 3x3 positional-encoding residual after the first unit
struct StageBlocks {
  std::vector<BlockUnit> units;
  Conv2dParams cpe;
  bool use_cpe = true;
};

StageBlocks make_stage_blocks(ParamRegistry& reg, const std::string& prefix, const StageConfig& cfg,
                              bool use_cpe, Rng& rng);

Tensor transformer_blocks(const Tensor& x, const StageBlocks& blocks);

}  // namespace mstwins
