#pragma once

#include <string>
#include <vector>

#include "mstwins/tensor.hpp"

namespace mstwins {

// image (C,H,W) intensities; mask (H,W) integer class ids in [0, classes)
struct LabeledSample {
  Tensor image;
  Tensor mask;
};

struct DatasetMeta {
  double spacing_y = 1.0;
  double spacing_x = 1.0;
  int64_t classes = 0;
};

// ---- .tns binary format: "TNS1", u8 dtype (0=f64, 1=i32), u8 rank,
// ---- rank x u32 extents, raw little-endian row-major payload
enum class TnsDtype : uint8_t { f64 = 0, i32 = 1 };

void write_tns(const std::string& path, const Tensor& t, TnsDtype dtype);
Tensor read_tns(const std::string& path, TnsDtype* dtype_out = nullptr);

DatasetMeta read_meta(const std::string& dir);
void write_meta(const std::string& dir, const DatasetMeta& meta);

// Loads <root>/images/<id>.tns + <root>/masks/<id>.tns pairs in id order,
// resamples to the target spacing (0 keeps the native grid) and normalizes
// each image to zero mean / unit variance.
std::vector<LabeledSample> load_dataset(const std::string& root, DatasetMeta& meta_out,
                                        double target_spacing_y = 0.0,
                                        double target_spacing_x = 0.0);

void write_dataset(const std::string& root, const std::vector<LabeledSample>& samples,
                   const DatasetMeta& meta);

// ---- augmentation chain, applied in this fixed order:
// brightness/contrast, rotation, low-resolution simulation, scaling, gamma,
// mirroring, Gaussian noise, Gaussian blur
struct AugmentConfig {
  bool brightness_contrast = true;
  double brightness = 0.2;  // additive shift drawn from [-brightness, brightness]
  double contrast_lo = 0.8, contrast_hi = 1.2;

  bool rotation = true;
  double rotation_deg = 15.0;  // drawn from [-deg, deg]

  bool lowres = true;
  double lowres_lo = 0.5, lowres_hi = 1.0;

  bool scale = true;
  double scale_lo = 0.85, scale_hi = 1.15;

  bool gamma = true;
  double gamma_lo = 0.7, gamma_hi = 1.5;

  bool mirror = true;
  double mirror_prob = 0.5;

  bool noise = true;
  double noise_sigma_hi = 0.05;

  bool blur = true;
  double blur_lo = 0.5, blur_hi = 1.0;

  // per-stage gate probability (mirror uses mirror_prob instead)
  double apply_prob = 0.3;

  uint64_t seed = 0;

  void disable_all();
};

// Deterministic given rng_state. Geometric stages transform image and mask
// together (mask via nearest neighbor); photometric stages touch the image
// only. Positive rotation angles rotate content clockwise in array index
// space; out-of-bounds regions fill with zero / class 0.
LabeledSample augment(const LabeledSample& s, const AugmentConfig& cfg, uint64_t rng_state);

// the geometric kernel behind the rotation/scaling stages: rotates about the
// image center by `degrees` and zooms by `factor` (image bilinear, mask
// nearest, zero fill)
LabeledSample rotate_scale_sample(const LabeledSample& s, double degrees, double factor);

// ---- synthetic datasets with analytically known masks
enum class SynthKind { circles, stripes, blobs };
SynthKind synth_kind_from_string(const std::string& name);

// Every generated mask uses all class ids and keeps the background (class 0)
// fraction within [0.3, 0.9]; images carry class-correlated intensities.
std::vector<LabeledSample> synth_dataset(SynthKind kind, int64_t n, int64_t size,
                                         int64_t num_classes, uint64_t seed);

}  // namespace mstwins
