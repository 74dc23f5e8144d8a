#pragma once

#include <array>
#include <memory>
#include <string>

#include "mstwins/fusion.hpp"
#include "mstwins/nn.hpp"

namespace mstwins {

// Architectural hyperparameters. Defaults give the 96/192/384/768 channel
// schedule at strides 4/8/16/32 with window and sub-sample ratios sized for
// desk-scale (64px) inputs.
struct ModelConfig {
  int64_t in_channels = 1;
  int64_t base_channels = 96;
  int64_t num_classes = 4;
  std::array<int64_t, 4> depths{2, 2, 2, 2};        // LSA/GSA pairs per stage
  std::array<int64_t, 4> windows{4, 4, 4, 2};
  std::array<int64_t, 4> sr_ratios{2, 2, 1, 1};
  std::array<int64_t, 4> patch_strides{4, 2, 2, 2};
  int64_t mlp_ratio = 4;
  int64_t head_channels = 32;  // heads per stage = max(1, C/head_channels)
  bool use_cpe = true;

  bool use_msfif = true;
  int64_t msfif_reduction = 4;
  bool msfif_shared_gates = false;

  enum class Cascade { residual_pyramid, single_downsample };
  Cascade cascade = Cascade::residual_pyramid;

  bool use_pretrained = false;
  std::string pretrained_path;

  uint64_t init_seed = 1234;

  int64_t stage_channels(int64_t i) const { return base_channels << i; }
  int64_t stage_heads(int64_t i) const;
  StageConfig stage(int64_t i) const;
  void validate() const;
};

enum class AblationSwitch { no_msfif, plain_downsample_cascade, no_pretrain };
AblationSwitch ablation_from_string(const std::string& name);
std::string to_string(AblationSwitch s);

// returns a config whose forward graph implements the named ablation
ModelConfig ablate(const ModelConfig& cfg, AblationSwitch sw);

// the four per-stage encoder feature maps, finest (stride 4) first
struct StagePyramid {
  std::array<Tensor, 4> levels;
  Tensor& operator[](size_t i) { return levels[i]; }
  const Tensor& operator[](size_t i) const { return levels[i]; }
};

// Per-level class logits from the coarse-to-fine cascade. Index 0 is the
// finest level (stride 4), index 3 the deepest (stride 32). The effective
// prediction of level j folds in every deeper level's upsampled prediction;
// final_logits is the finest effective map brought to input resolution.
// The single_downsample ablation emits exactly one level.
struct CascadeOutput {
  std::vector<Tensor> residual_logits;
  std::vector<Tensor> effective_logits;
  Tensor final_logits;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  StagePyramid encode(const Tensor& x) const;
  StagePyramid fuse_pyramid(const StagePyramid& p) const;
  CascadeOutput decode_cascade(const StagePyramid& fused, int64_t out_h, int64_t out_w) const;
  CascadeOutput forward(const Tensor& x) const;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;

  std::array<PatchEmbed, 4> embeds_;
  std::array<StageBlocks, 4> enc_blocks_;
  std::vector<MsFifParams> fifs_;          // levels 1..3 when fusion is on
  std::array<StageBlocks, 4> dec_blocks_;  // mirrored stages (residual cascade)
  std::array<LayerNormParams, 4> dec_norms_;  // stage terminators, like the
                                              // embed norms on the encoder side
  std::array<Conv2dParams, 3> expand_;     // 1x1 2C->C after each x2 decoder upsample
  std::array<Conv2dParams, 4> heads_;      // 1x1 -> num_classes per level
  std::vector<Conv2dParams> alt_down_;     // single_downsample path
  LayerNormParams alt_norm_;
  Conv2dParams alt_head_;
};

}  // namespace mstwins
