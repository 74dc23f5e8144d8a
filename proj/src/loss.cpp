#include "mstwins/loss.hpp"

#include <cmath>

namespace mstwins {

double LossConfig::q_for(int64_t class_id) const {
  MST_CHECK(!q.empty(), "loss config: q schedule is empty");
  if (q.size() == 1) return q[0];
  MST_CHECK(class_id >= 0 && class_id < static_cast<int64_t>(q.size()),
            "loss config: no q entry for class " + std::to_string(class_id));
  return q[static_cast<size_t>(class_id)];
}

void LossConfig::validate() const {
  MST_CHECK(alpha >= 0.0, "loss config: alpha must be non-negative");
  MST_CHECK(!q.empty(), "loss config: q schedule is empty");
  for (double qi : q) MST_CHECK(qi >= 0.0, "loss config: q entries must be non-negative");
  MST_CHECK(epsilon > 0.0, "loss config: epsilon must be positive");
  MST_CHECK(prob_floor > 0.0, "loss config: prob_floor must be positive");
}

Tensor downsample_mask(const Tensor& mask, int64_t target_h, int64_t target_w) {
  MST_CHECK(mask.dim() == 3, "downsample_mask: expected (B,H,W)");
  const int64_t b = mask.size(0), h = mask.size(1), w = mask.size(2);
  MST_CHECK(target_h >= 1 && target_h <= h && target_w >= 1 && target_w <= w,
            "downsample_mask: bad target extent");
  Tensor out = make_tensor({b, target_h, target_w});
  const double* pm = mask.data();
  double* po = out.data();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t y = 0; y < target_h; ++y) {
      const int64_t sy = y * h / target_h;
      for (int64_t x = 0; x < target_w; ++x) {
        const int64_t sx = x * w / target_w;
        po[(bi * target_h + y) * target_w + x] = pm[(bi * h + sy) * w + sx];
      }
    }
  }
  return out;
}

namespace {

// nearest x2 upsample of a (B,h,w) index map, cropped to a target extent
Tensor upsample_indices(const Tensor& idx, int64_t target_h, int64_t target_w) {
  const int64_t b = idx.size(0), h = idx.size(1), w = idx.size(2);
  Tensor out = make_tensor({b, target_h, target_w});
  const double* pi = idx.data();
  double* po = out.data();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t y = 0; y < target_h; ++y) {
      const int64_t sy = std::min(h - 1, y / 2);
      for (int64_t x = 0; x < target_w; ++x) {
        const int64_t sx = std::min(w - 1, x / 2);
        po[(bi * target_h + y) * target_w + x] = pi[(bi * h + sy) * w + sx];
      }
    }
  }
  return out;
}

}  // namespace

LevelPredictions build_level_predictions(const CascadeOutput& out, const Tensor& mask,
                                         int64_t num_classes) {
  MST_CHECK(!out.effective_logits.empty(), "build_level_predictions: empty cascade output");
  MST_CHECK(mask.dim() == 3, "build_level_predictions: mask must be (B,H,W)");
  const size_t n = out.effective_logits.size();
  LevelPredictions lp;
  lp.probs.resize(n);
  lp.logp.resize(n);
  lp.masks.resize(n);
  lp.error_masks.resize(n);
  for (size_t j = 0; j < n; ++j) {
    const Tensor& logits = out.effective_logits[j];
    MST_CHECK(logits.size(1) == num_classes, "build_level_predictions: class-count mismatch");
    lp.probs[j] = softmax(logits, 1);
    lp.logp[j] = log_softmax(logits, 1);
    lp.masks[j] = downsample_mask(mask, logits.size(2), logits.size(3));
  }
  // deepest level trains on every pixel; finer levels train on the pixels
  // the next-deeper effective prediction misclassified
  lp.error_masks[n - 1] = Tensor::ones(lp.masks[n - 1].shape());
  for (size_t j = n - 1; j-- > 0;) {
    Tensor deeper_pred = argmax_axis(out.effective_logits[j + 1].detached_copy(), 1);
    Tensor carried = upsample_indices(deeper_pred, lp.masks[j].size(1), lp.masks[j].size(2));
    lp.error_masks[j] = ne(carried, lp.masks[j]);
  }
  return lp;
}

double dice_score(const Tensor& pred_mask, const Tensor& gt_mask, int64_t class_id) {
  MST_CHECK(pred_mask.shape() == gt_mask.shape(),
            "dice_score: shape mismatch " + shape_str(pred_mask.shape()) + " vs " +
                shape_str(gt_mask.shape()));
  const double* pp = pred_mask.data();
  const double* pg = gt_mask.data();
  const double cid = static_cast<double>(class_id);
  int64_t inter = 0, px = 0, py = 0;
  for (int64_t i = 0; i < pred_mask.numel(); ++i) {
    const bool a = pp[i] == cid;
    const bool b = pg[i] == cid;
    px += a;
    py += b;
    inter += a && b;
  }
  if (px + py == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(px + py);
}

namespace {

Tensor soft_dice(const Tensor& a, const Tensor& b, const LossConfig& cfg) {
  Tensor inter = sum(mul(a, b));
  Tensor sizes = cfg.squared_sizes ? add(sum(mul(a, a)), sum(mul(b, b)))
                                   : add(sum(a), sum(b));
  return div(mul(inter, 2.0), add(sizes, cfg.epsilon));
}

}  // namespace

Tensor contrastive_loss(const LevelPredictions& preds, const LossConfig& cfg) {
  cfg.validate();
  MST_CHECK(!preds.probs.empty(), "contrastive_loss: no levels");
  Tensor total = Tensor::scalar(0.0);
  for (const Tensor& p : preds.probs) {
    const int64_t k = p.size(1);
    MST_CHECK(k >= 2, "contrastive_loss: needs at least 2 classes, got " + std::to_string(k));
    std::vector<Tensor> class_maps;
    class_maps.reserve(static_cast<size_t>(k));
    for (int64_t c = 0; c < k; ++c) class_maps.push_back(slice(p, 1, c, c + 1));

    Tensor picked;
    double picked_value = 0.0;
    for (int64_t i = 0; i < k; ++i) {
      for (int64_t j = i + 1; j < k; ++j) {
        Tensor d = soft_dice(class_maps[static_cast<size_t>(i)], class_maps[static_cast<size_t>(j)], cfg);
        const double v = d.item();
        const bool better = !picked.defined() ||
                            (cfg.pair_mode == LossConfig::PairMode::min_pair ? v < picked_value
                                                                             : v > picked_value);
        if (better) {
          picked = d;
          picked_value = v;
        }
      }
    }
    total = add(total, picked);
  }
  return total;
}

Tensor balance_loss(const LevelPredictions& preds, const LossConfig& cfg) {
  cfg.validate();
  const size_t n = preds.probs.size();
  MST_CHECK(n > 0 && preds.masks.size() == n && preds.error_masks.size() == n,
            "balance_loss: level lists disagree");
  Tensor total = Tensor::scalar(0.0);
  for (size_t j = 0; j < n; ++j) {
    const Tensor& p = preds.probs[j];
    const Tensor& m = preds.masks[j];
    const Tensor& sel = preds.error_masks[j];
    MST_CHECK(m.shape() == sel.shape(), "balance_loss: mask/selection shape mismatch");
    MST_CHECK(p.size(0) == m.size(0) && p.size(2) == m.size(1) && p.size(3) == m.size(2),
              "balance_loss: probs/mask shape mismatch");
    const int64_t k = p.size(1);

    int64_t selected = 0;
    const double* ps = sel.data();
    for (int64_t i = 0; i < sel.numel(); ++i) selected += ps[i] != 0.0;
    if (selected == 0) continue;

    Tensor hot = one_hot(m, k, 1);
    // log-space true-class probability so gradients survive saturation
    Tensor logp_true;
    if (j < preds.logp.size() && preds.logp[j].defined()) {
      logp_true = sum_axis(mul(preds.logp[j], hot), 1);
    } else {
      Tensor p_true = clamp_min(sum_axis(mul(p, hot), 1), cfg.prob_floor);
      const double* pp = p_true.data();
      for (int64_t i = 0; i < p_true.numel(); ++i) {
        MST_CHECK(pp[i] <= 1.0 + 1e-9, "balance_loss: probability above 1");
      }
      logp_true = log(p_true);
    }
    Tensor miss = clamp_min(rsub(1.0, exp(logp_true)), cfg.prob_floor);

    Tensor focal;
    if (cfg.q.size() == 1) {
      focal = pow_scalar(miss, cfg.q[0]);
    } else {
      // per-class exponent looked up from the true label at each pixel
      Tensor qmap = make_tensor(m.shape());
      const double* pm = m.data();
      double* pq = qmap.data();
      for (int64_t i = 0; i < m.numel(); ++i) pq[i] = cfg.q_for(static_cast<int64_t>(pm[i]));
      focal = exp(mul(qmap, log(miss)));
    }
    Tensor per_pixel = neg(mul(focal, logp_true));
    Tensor chosen = gather_mask(per_pixel, sel);
    total = add(total, mean(chosen));
  }
  return total;
}

Tensor combined_loss(const LevelPredictions& preds, const LossConfig& cfg) {
  Tensor bal = balance_loss(preds, cfg);
  if (cfg.alpha == 0.0) return bal;
  return add(mul(contrastive_loss(preds, cfg), cfg.alpha), bal);
}

}  // namespace mstwins
