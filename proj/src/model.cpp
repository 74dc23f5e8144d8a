#include "mstwins/model.hpp"

#include <algorithm>
#include <cmath>

namespace mstwins {

int64_t ModelConfig::stage_heads(int64_t i) const {
  return std::max<int64_t>(1, stage_channels(i) / head_channels);
}

StageConfig ModelConfig::stage(int64_t i) const {
  StageConfig s;
  s.in_channels = i == 0 ? in_channels : stage_channels(i - 1);
  s.out_channels = stage_channels(i);
  s.patch_stride = patch_strides[static_cast<size_t>(i)];
  s.depth = depths[static_cast<size_t>(i)];
  s.window = windows[static_cast<size_t>(i)];
  s.sr_ratio = sr_ratios[static_cast<size_t>(i)];
  s.mlp_ratio = mlp_ratio;
  s.num_heads = stage_heads(i);
  return s;
}

void ModelConfig::validate() const {
  MST_CHECK(in_channels >= 1, "config: in_channels must be positive");
  MST_CHECK(base_channels >= 1, "config: base_channels must be positive");
  MST_CHECK(num_classes >= 2, "config: num_classes must be at least 2");
  MST_CHECK(mlp_ratio >= 1, "config: mlp_ratio must be positive");
  MST_CHECK(head_channels >= 1, "config: head_channels must be positive");
  MST_CHECK(msfif_reduction >= 1 && (2 * base_channels) % msfif_reduction == 0,
            "config: msfif_reduction must divide the fused channel widths");
  for (size_t i = 0; i < 4; ++i) {
    MST_CHECK(depths[i] >= 1, "config: stage depths must be positive");
    MST_CHECK(windows[i] >= 1, "config: windows must be positive");
    MST_CHECK(sr_ratios[i] >= 1, "config: sr_ratios must be positive");
    MST_CHECK(patch_strides[i] >= 1, "config: patch_strides must be positive");
    const int64_t c = base_channels << i;
    MST_CHECK(c % stage_heads(static_cast<int64_t>(i)) == 0,
              "config: heads must divide channels at stage " + std::to_string(i + 1));
  }
}

AblationSwitch ablation_from_string(const std::string& name) {
  if (name == "no_msfif") return AblationSwitch::no_msfif;
  if (name == "downsample" || name == "plain_downsample_cascade") {
    return AblationSwitch::plain_downsample_cascade;
  }
  if (name == "no_pretrain") return AblationSwitch::no_pretrain;
  throw Error("unknown ablation switch: " + name);
}

std::string to_string(AblationSwitch s) {
  switch (s) {
    case AblationSwitch::no_msfif: return "no_msfif";
    case AblationSwitch::plain_downsample_cascade: return "plain_downsample_cascade";
    case AblationSwitch::no_pretrain: return "no_pretrain";
  }
  return "?";
}

ModelConfig ablate(const ModelConfig& cfg, AblationSwitch sw) {
  ModelConfig out = cfg;
  switch (sw) {
    case AblationSwitch::no_msfif:
      out.use_msfif = false;
      break;
    case AblationSwitch::plain_downsample_cascade:
      out.cascade = ModelConfig::Cascade::single_downsample;
      break;
    case AblationSwitch::no_pretrain:
      out.use_pretrained = false;
      break;
  }
  return out;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.init_seed);

  for (int64_t i = 0; i < 4; ++i) {
    const StageConfig sc = cfg_.stage(i);
    const std::string prefix = "enc" + std::to_string(i + 1);
    embeds_[static_cast<size_t>(i)] = make_patch_embed(reg_, prefix + ".embed", sc, rng);
    enc_blocks_[static_cast<size_t>(i)] = make_stage_blocks(reg_, prefix, sc, cfg_.use_cpe, rng);
  }

  if (cfg_.use_msfif) {
    for (int64_t i = 0; i < 3; ++i) {
      fifs_.push_back(make_ms_fif(reg_, "fif" + std::to_string(i + 1), cfg_.stage_channels(i),
                                  cfg_.msfif_reduction, cfg_.msfif_shared_gates, rng));
    }
  }

  if (cfg_.cascade == ModelConfig::Cascade::residual_pyramid) {
    for (int64_t i = 3; i >= 0; --i) {
      StageConfig sc = cfg_.stage(i);
      const std::string prefix = "dec" + std::to_string(i + 1);
      dec_blocks_[static_cast<size_t>(i)] = make_stage_blocks(reg_, prefix, sc, cfg_.use_cpe, rng);
      dec_norms_[static_cast<size_t>(i)] = make_layernorm(reg_, prefix + ".norm", sc.out_channels);
      if (i < 3) {
        expand_[static_cast<size_t>(i)] =
            make_conv(reg_, prefix + ".expand", sc.out_channels, cfg_.stage_channels(i + 1), 1, 1,
                      0, 1, rng);
      }
      // near-uniform initial class predictions
      heads_[static_cast<size_t>(i)] =
          make_conv(reg_, "head" + std::to_string(i + 1), cfg_.num_classes, sc.out_channels, 1, 1,
                    0, 1, rng, 0.02);
    }
  } else {
    for (int64_t i = 0; i < 3; ++i) {
      alt_down_.push_back(make_conv(reg_, "alt.down" + std::to_string(i + 1),
                                    cfg_.stage_channels(i + 1), cfg_.stage_channels(i), 3, 2, 1, 1,
                                    rng));
    }
    alt_norm_ = make_layernorm(reg_, "alt.norm", cfg_.stage_channels(3));
    alt_head_ = make_conv(reg_, "alt.head", cfg_.num_classes, cfg_.stage_channels(3), 1, 1, 0, 1,
                          rng, 0.02);
  }
}

StagePyramid Model::encode(const Tensor& x) const {
  MST_CHECK(x.dim() == 4, "encode: expected (B,C,H,W)");
  MST_CHECK(x.size(1) == cfg_.in_channels, "encode: channel mismatch");
  int64_t total_stride = 1;
  for (int64_t s : cfg_.patch_strides) total_stride *= s;
  MST_CHECK(x.size(2) >= total_stride && x.size(3) >= total_stride,
            "encode: input smaller than " + std::to_string(total_stride) + "x" +
                std::to_string(total_stride));
  StagePyramid p;
  Tensor cur = x;
  for (size_t i = 0; i < 4; ++i) {
    cur = patch_embed(cur, embeds_[i]);
    cur = transformer_blocks(cur, enc_blocks_[i]);
    p[i] = cur;
  }
  return p;
}

StagePyramid Model::fuse_pyramid(const StagePyramid& p) const {
  if (!cfg_.use_msfif) return p;
  StagePyramid g;
  for (size_t i = 0; i < 3; ++i) g[i] = ms_fif(p[i], p[i + 1], fifs_[i]);
  g[3] = p[3];
  return g;
}

namespace {

// x2 nearest upsample cropped to a target extent (handles odd parent sizes)
Tensor up2_to(const Tensor& t, int64_t h, int64_t w) {
  Tensor up = upsample_nearest(t, 2);
  if (up.size(2) != h || up.size(3) != w) up = crop2d(up, 0, 0, h, w);
  return up;
}

Tensor up_to_input(const Tensor& t, int64_t factor, int64_t h, int64_t w) {
  Tensor up = upsample_nearest(t, factor);
  if (up.size(2) != h || up.size(3) != w) up = crop2d(up, 0, 0, h, w);
  return up;
}

// channel layernorm on a (B,C,H,W) map
Tensor grid_layernorm(const Tensor& x, const LayerNormParams& p) {
  return to_grid(layernorm(to_tokens(x), p), x.size(2), x.size(3));
}

// 1x1 head with fan-in scaled output; the scale keeps the per-logit SGD step
// independent of the channel width
Tensor head_logits(const Tensor& state, const Conv2dParams& head) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(state.size(1)));
  return mul(conv2d(state, head), scale);
}

}  // namespace

CascadeOutput Model::decode_cascade(const StagePyramid& fused, int64_t out_h, int64_t out_w) const {
  MST_CHECK(cfg_.num_classes >= 2, "decode_cascade: class count must exceed 1");
  CascadeOutput out;

  if (cfg_.cascade == ModelConfig::Cascade::single_downsample) {
    Tensor s = fused[0];
    for (size_t i = 0; i < 3; ++i) {
      Tensor down = conv2d(s, alt_down_[i]);
      if (down.size(2) != fused[i + 1].size(2) || down.size(3) != fused[i + 1].size(3)) {
        down = crop2d(down, 0, 0, fused[i + 1].size(2), fused[i + 1].size(3));
      }
      s = relu(add(down, fused[i + 1]));
    }
    Tensor logits = head_logits(grid_layernorm(s, alt_norm_), alt_head_);
    out.residual_logits.push_back(logits);
    out.effective_logits.push_back(logits);
    int64_t factor = 1;
    for (int64_t st : cfg_.patch_strides) factor *= st;
    out.final_logits = up_to_input(logits, factor, out_h, out_w);
    return out;
  }

  std::array<Tensor, 4> state;
  std::array<Tensor, 4> residual;
  std::array<Tensor, 4> effective;

  state[3] = grid_layernorm(transformer_blocks(fused[3], dec_blocks_[3]), dec_norms_[3]);
  residual[3] = head_logits(state[3], heads_[3]);
  effective[3] = residual[3];

  for (int64_t j = 2; j >= 0; --j) {
    const Tensor& skip = fused[static_cast<size_t>(j)];
    Tensor up = up2_to(state[static_cast<size_t>(j) + 1], skip.size(2), skip.size(3));
    Tensor carried = conv2d(up, expand_[static_cast<size_t>(j)]);
    Tensor merged = add(skip, carried);
    state[static_cast<size_t>(j)] =
        grid_layernorm(transformer_blocks(merged, dec_blocks_[static_cast<size_t>(j)]),
                       dec_norms_[static_cast<size_t>(j)]);
    residual[static_cast<size_t>(j)] = head_logits(state[static_cast<size_t>(j)], heads_[static_cast<size_t>(j)]);
    effective[static_cast<size_t>(j)] =
        add(residual[static_cast<size_t>(j)],
            up2_to(effective[static_cast<size_t>(j) + 1], residual[static_cast<size_t>(j)].size(2),
                   residual[static_cast<size_t>(j)].size(3)));
  }

  out.residual_logits.assign(residual.begin(), residual.end());
  out.effective_logits.assign(effective.begin(), effective.end());
  out.final_logits = up_to_input(effective[0], cfg_.patch_strides[0], out_h, out_w);
  return out;
}

CascadeOutput Model::forward(const Tensor& x) const {
  StagePyramid p = encode(x);
  StagePyramid g = fuse_pyramid(p);
  return decode_cascade(g, x.size(2), x.size(3));
}

}  // namespace mstwins
