#pragma once

#include "mstwins/model.hpp"

namespace mstwins {

struct LossConfig {
  double alpha = 0.5;          // weight of the contrastive term
  std::vector<double> q{2.0};  // focusing exponent; one entry = all classes
  double epsilon = 1e-6;       // soft-dice smoothing
  double prob_floor = 1e-12;

  enum class PairMode { min_pair, max_pair };
  PairMode pair_mode = PairMode::min_pair;
  bool squared_sizes = false;  // |X| as sum of squares instead of direct sum

  double q_for(int64_t class_id) const;
  void validate() const;
};

// Per-level class probabilities (softmaxed effective logits), matching-scale
// ground-truth masks, and the pixel-selection masks used by the balance
// loss. Level order is finest first; the deepest level's selection mask is
// all ones, each finer level selects the pixels the next-deeper level's
// effective prediction got wrong.
struct LevelPredictions {
  std::vector<Tensor> probs;        // (B,K,h,w) per level
  std::vector<Tensor> logp;         // log-probabilities, same shapes; may be
                                    // empty when built from bare probs
  std::vector<Tensor> masks;        // (B,h,w) class indices per level
  std::vector<Tensor> error_masks;  // (B,h,w) 0/1 per level
};

// nearest-neighbor class-index downsampling to an explicit target extent
Tensor downsample_mask(const Tensor& mask, int64_t target_h, int64_t target_w);

LevelPredictions build_level_predictions(const CascadeOutput& out, const Tensor& mask,
                                         int64_t num_classes);

// hard Dice overlap of one class between two index maps; 1.0 when the class
// is absent from both
double dice_score(const Tensor& pred_mask, const Tensor& gt_mask, int64_t class_id);

// per level: soft Dice overlap between every unordered pair of distinct
// class probability maps, reduced by min (or max) over pairs; summed across
// levels
Tensor contrastive_loss(const LevelPredictions& preds, const LossConfig& cfg);

// per level: mean focal term -(1-p_y)^{q_y} log(p_y) over the selected
// pixels; empty selections contribute 0; summed across levels
Tensor balance_loss(const LevelPredictions& preds, const LossConfig& cfg);

// alpha * contrastive + balance
Tensor combined_loss(const LevelPredictions& preds, const LossConfig& cfg);

}  // namespace mstwins
