#include "mstwins/data.hpp"

#include "mstwins/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace mstwins {

void write_tns(const std::string& path, const Tensor& t, TnsDtype dtype) {
  std::ofstream out(path, std::ios::binary);
  MST_CHECK(out.good(), "write_tns: cannot open " + path);
  out.write("TNS1", 4);
  const uint8_t tag = static_cast<uint8_t>(dtype);
  out.write(reinterpret_cast<const char*>(&tag), 1);
  const uint8_t rank = static_cast<uint8_t>(t.dim());
  out.write(reinterpret_cast<const char*>(&rank), 1);
  for (int64_t e : t.shape()) {
    const uint32_t v = static_cast<uint32_t>(e);
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  if (dtype == TnsDtype::f64) {
    out.write(reinterpret_cast<const char*>(t.data()), t.numel() * 8);
  } else {
    std::vector<int32_t> buf(static_cast<size_t>(t.numel()));
    const double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const int32_t v = static_cast<int32_t>(std::llround(p[i]));
      MST_CHECK(static_cast<double>(v) == p[i], "write_tns: value " + std::to_string(p[i]) +
                                                    " is not representable as i32");
      buf[static_cast<size_t>(i)] = v;
    }
    out.write(reinterpret_cast<const char*>(buf.data()), t.numel() * 4);
  }
  MST_CHECK(out.good(), "write_tns: write failed for " + path);
}

Tensor read_tns(const std::string& path, TnsDtype* dtype_out) {
  std::ifstream in(path, std::ios::binary);
  MST_CHECK(in.good(), "read_tns: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  MST_CHECK(in.good() && std::memcmp(magic, "TNS1", 4) == 0,
            "read_tns: malformed header in " + path);
  uint8_t tag = 0, rank = 0;
  in.read(reinterpret_cast<char*>(&tag), 1);
  in.read(reinterpret_cast<char*>(&rank), 1);
  MST_CHECK(in.good() && tag <= 1, "read_tns: unknown dtype tag in " + path);
  Shape shape(rank);
  for (auto& e : shape) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    e = v;
  }
  MST_CHECK(in.good(), "read_tns: truncated header in " + path);
  const int64_t n = numel_of(shape);
  Tensor t = make_tensor(shape);
  if (tag == 0) {
    in.read(reinterpret_cast<char*>(t.data()), n * 8);
  } else {
    std::vector<int32_t> buf(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()), n * 4);
    double* p = t.data();
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
  }
  MST_CHECK(in.good(), "read_tns: truncated payload in " + path);
  if (dtype_out) *dtype_out = static_cast<TnsDtype>(tag);
  return t;
}

DatasetMeta read_meta(const std::string& dir) {
  DatasetMeta meta;
  std::ifstream in(dir + "/meta.txt");
  MST_CHECK(in.good(), "read_meta: missing " + dir + "/meta.txt");
  std::string line;
  bool saw_spacing = false, saw_classes = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    MST_CHECK(eq != std::string::npos, "read_meta: malformed line: " + line);
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
    };
    strip(key);
    strip(val);
    if (key == "spacing") {
      auto comma = val.find(',');
      MST_CHECK(comma != std::string::npos, "read_meta: spacing needs <sy>,<sx>");
      meta.spacing_y = std::stod(val.substr(0, comma));
      meta.spacing_x = std::stod(val.substr(comma + 1));
      saw_spacing = true;
    } else if (key == "classes") {
      meta.classes = std::stoll(val);
      saw_classes = true;
    } else {
      throw Error("read_meta: unknown key " + key);
    }
  }
  MST_CHECK(saw_spacing && saw_classes, "read_meta: meta.txt needs spacing and classes entries");
  return meta;
}

void write_meta(const std::string& dir, const DatasetMeta& meta) {
  std::ofstream out(dir + "/meta.txt");
  MST_CHECK(out.good(), "write_meta: cannot open " + dir + "/meta.txt");
  out << "spacing=" << meta.spacing_y << "," << meta.spacing_x << "\n";
  out << "classes=" << meta.classes << "\n";
}

namespace {

double bilinear_at(const double* plane, int64_t h, int64_t w, double y, double x) {
  // zero outside bounds
  if (y <= -1.0 || y >= static_cast<double>(h) || x <= -1.0 || x >= static_cast<double>(w)) {
    return 0.0;
  }
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  auto at = [&](int64_t yy, int64_t xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return plane[yy * w + xx];
  };
  return at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x0 + 1) * (1 - fy) * fx +
         at(y0 + 1, x0) * fy * (1 - fx) + at(y0 + 1, x0 + 1) * fy * fx;
}

double nearest_at(const double* plane, int64_t h, int64_t w, double y, double x) {
  const int64_t yy = static_cast<int64_t>(std::llround(y));
  const int64_t xx = static_cast<int64_t>(std::llround(x));
  if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
  return plane[yy * w + xx];
}

// resize a single plane to (oh, ow) with bilinear sampling (align corners off)
void resize_bilinear(const double* src, int64_t h, int64_t w, double* dst, int64_t oh, int64_t ow) {
  const double sy = static_cast<double>(h) / static_cast<double>(oh);
  const double sx = static_cast<double>(w) / static_cast<double>(ow);
  for (int64_t y = 0; y < oh; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    for (int64_t x = 0; x < ow; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      dst[y * ow + x] = bilinear_at(src, h, w, std::clamp(fy, 0.0, static_cast<double>(h - 1)),
                                    std::clamp(fx, 0.0, static_cast<double>(w - 1)));
    }
  }
}

void resize_nearest(const double* src, int64_t h, int64_t w, double* dst, int64_t oh, int64_t ow) {
  const double sy = static_cast<double>(h) / static_cast<double>(oh);
  const double sx = static_cast<double>(w) / static_cast<double>(ow);
  for (int64_t y = 0; y < oh; ++y) {
    const int64_t fy = std::min<int64_t>(h - 1, static_cast<int64_t>((static_cast<double>(y) + 0.5) * sy));
    for (int64_t x = 0; x < ow; ++x) {
      const int64_t fx = std::min<int64_t>(w - 1, static_cast<int64_t>((static_cast<double>(x) + 0.5) * sx));
      dst[y * ow + x] = src[fy * w + fx];
    }
  }
}

}  // namespace

std::vector<LabeledSample> load_dataset(const std::string& root, DatasetMeta& meta_out,
                                        double target_spacing_y, double target_spacing_x) {
  std::vector<LabeledSample> out;
  const fs::path images = fs::path(root) / "images";
  if (!fs::exists(images)) {
    meta_out = DatasetMeta{};
    return out;
  }
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.path().extension() == ".tns") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) {
    meta_out = DatasetMeta{};
    return out;
  }

  DatasetMeta meta = read_meta(root);
  MST_CHECK(meta.classes >= 1, "load_dataset: meta.txt must declare a positive class count");
  meta_out = meta;

  const double fy = target_spacing_y > 0.0 ? target_spacing_y / meta.spacing_y : 1.0;
  const double fx = target_spacing_x > 0.0 ? target_spacing_x / meta.spacing_x : 1.0;

  for (const std::string& id : ids) {
    const std::string ipath = (images / (id + ".tns")).string();
    const std::string mpath = (fs::path(root) / "masks" / (id + ".tns")).string();
    MST_CHECK(fs::exists(mpath), "load_dataset: missing mask for sample " + id);

    Tensor img = read_tns(ipath);
    if (img.dim() == 2) img = reshape(img, {1, img.size(0), img.size(1)});
    MST_CHECK(img.dim() == 3, "load_dataset: image " + id + " must be (C,H,W) or (H,W)");
    Tensor mask = read_tns(mpath);
    MST_CHECK(mask.dim() == 2, "load_dataset: mask " + id + " must be (H,W)");
    MST_CHECK(mask.size(0) == img.size(1) && mask.size(1) == img.size(2),
              "load_dataset: image/mask extent mismatch for sample " + id);

    const int64_t c = img.size(0), h = img.size(1), w = img.size(2);
    int64_t nh = h, nw = w;
    if (fy != 1.0 || fx != 1.0) {
      nh = std::max<int64_t>(1, static_cast<int64_t>(std::llround(static_cast<double>(h) * fy)));
      nw = std::max<int64_t>(1, static_cast<int64_t>(std::llround(static_cast<double>(w) * fx)));
      Tensor rimg = make_tensor({c, nh, nw});
      for (int64_t ci = 0; ci < c; ++ci) {
        resize_bilinear(img.data() + ci * h * w, h, w, rimg.data() + ci * nh * nw, nh, nw);
      }
      Tensor rmask = make_tensor({nh, nw});
      resize_nearest(mask.data(), h, w, rmask.data(), nh, nw);
      img = rimg;
      mask = rmask;
    }

    // per-image zero mean / unit variance
    double m = 0.0;
    for (int64_t i = 0; i < img.numel(); ++i) m += img.data()[i];
    m /= static_cast<double>(img.numel());
    double var = 0.0;
    for (int64_t i = 0; i < img.numel(); ++i) {
      const double d = img.data()[i] - m;
      var += d * d;
    }
    var /= static_cast<double>(img.numel());
    const double sd = std::sqrt(var);
    if (sd > 1e-12) {
      for (int64_t i = 0; i < img.numel(); ++i) img.data()[i] = (img.data()[i] - m) / sd;
    } else {
      for (int64_t i = 0; i < img.numel(); ++i) img.data()[i] = 0.0;
    }

    for (int64_t i = 0; i < mask.numel(); ++i) {
      const double v = mask.data()[i];
      MST_CHECK(v == std::floor(v) && v >= 0 && v < static_cast<double>(meta.classes),
                "load_dataset: class index " + std::to_string(v) + " out of range in sample " + id);
    }
    out.push_back(LabeledSample{img, mask});
  }
  return out;
}

void write_dataset(const std::string& root, const std::vector<LabeledSample>& samples,
                   const DatasetMeta& meta) {
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  write_meta(root, meta);
  for (size_t i = 0; i < samples.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "%04zu", i);
    write_tns((fs::path(root) / "images" / (std::string(id) + ".tns")).string(), samples[i].image,
              TnsDtype::f64);
    write_tns((fs::path(root) / "masks" / (std::string(id) + ".tns")).string(), samples[i].mask,
              TnsDtype::i32);
  }
}

void AugmentConfig::disable_all() {
  brightness_contrast = rotation = lowres = scale = gamma = mirror = noise = blur = false;
}

namespace {

struct Geometry {
  // maps output pixel -> source coordinates
  double c00, c01, c10, c11, ty, tx;  // src_y = c00*(y-cy)+c01*(x-cx)+cy+ty ...
};

void warp(const LabeledSample& in, LabeledSample& out, double angle_rad, double zoom) {
  const int64_t c = in.image.size(0), h = in.image.size(1), w = in.image.size(2);
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double cx = 0.5 * static_cast<double>(w - 1);
  const double cosA = std::cos(angle_rad), sinA = std::sin(angle_rad);
  const double inv = 1.0 / zoom;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double sy = cy + inv * (cosA * dy - sinA * dx);
      const double sx = cx + inv * (sinA * dy + cosA * dx);
      for (int64_t ci = 0; ci < c; ++ci) {
        out.image.data()[(ci * h + y) * w + x] =
            bilinear_at(in.image.data() + ci * h * w, h, w, sy, sx);
      }
      out.mask.data()[y * w + x] = nearest_at(in.mask.data(), h, w, sy, sx);
    }
  }
}

}  // namespace

LabeledSample rotate_scale_sample(const LabeledSample& s, double degrees, double factor) {
  MST_CHECK(s.image.dim() == 3 && s.mask.dim() == 2, "rotate_scale_sample: malformed sample");
  MST_CHECK(factor > 0.0, "augment: degenerate scale factor");
  LabeledSample out{make_tensor(s.image.shape()), make_tensor(s.mask.shape())};
  warp(s, out, degrees * M_PI / 180.0, factor);
  return out;
}

LabeledSample augment(const LabeledSample& s, const AugmentConfig& cfg, uint64_t rng_state) {
  MST_CHECK(s.image.dim() == 3 && s.mask.dim() == 2, "augment: malformed sample");
  Rng rng(Rng::mix(cfg.seed, rng_state));
  LabeledSample cur{s.image.detached_copy(), s.mask.detached_copy()};
  const int64_t c = cur.image.size(0), h = cur.image.size(1), w = cur.image.size(2);

  // 1. brightness and contrast
  if (cfg.brightness_contrast && rng.uniform() < cfg.apply_prob) {
    const double shift = rng.uniform(-cfg.brightness, cfg.brightness);
    const double gain = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
    double m = 0.0;
    for (int64_t i = 0; i < cur.image.numel(); ++i) m += cur.image.data()[i];
    m /= static_cast<double>(cur.image.numel());
    for (int64_t i = 0; i < cur.image.numel(); ++i) {
      double v = cur.image.data()[i] + shift;
      cur.image.data()[i] = m + (v - m) * gain;
    }
  }

  // 2. rotation
  if (cfg.rotation && rng.uniform() < cfg.apply_prob) {
    const double deg = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
    cur = rotate_scale_sample(cur, deg, 1.0);
  }

  // 3. low-resolution simulation (image only)
  if (cfg.lowres && rng.uniform() < cfg.apply_prob) {
    const double f = rng.uniform(cfg.lowres_lo, cfg.lowres_hi);
    const int64_t lh = std::max<int64_t>(1, static_cast<int64_t>(std::llround(static_cast<double>(h) * f)));
    const int64_t lw = std::max<int64_t>(1, static_cast<int64_t>(std::llround(static_cast<double>(w) * f)));
    if (lh != h || lw != w) {
      std::vector<double> low(static_cast<size_t>(lh * lw));
      std::vector<double> back(static_cast<size_t>(h * w));
      for (int64_t ci = 0; ci < c; ++ci) {
        double* plane = cur.image.data() + ci * h * w;
        resize_bilinear(plane, h, w, low.data(), lh, lw);
        resize_bilinear(low.data(), lh, lw, back.data(), h, w);
        std::copy(back.begin(), back.end(), plane);
      }
    }
  }

  // 4. scaling
  if (cfg.scale && rng.uniform() < cfg.apply_prob) {
    const double f = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    cur = rotate_scale_sample(cur, 0.0, f);
  }

  // 5. gamma (image only, on the per-image normalized range)
  if (cfg.gamma && rng.uniform() < cfg.apply_prob) {
    const double g = rng.uniform(cfg.gamma_lo, cfg.gamma_hi);
    double lo = cur.image.data()[0], hi = lo;
    for (int64_t i = 0; i < cur.image.numel(); ++i) {
      lo = std::min(lo, cur.image.data()[i]);
      hi = std::max(hi, cur.image.data()[i]);
    }
    if (hi - lo > 1e-12) {
      const double span = hi - lo;
      for (int64_t i = 0; i < cur.image.numel(); ++i) {
        const double u = (cur.image.data()[i] - lo) / span;
        cur.image.data()[i] = lo + span * std::pow(u, g);
      }
    }
  }

  // 6. mirroring (horizontal)
  if (cfg.mirror && rng.uniform() < cfg.mirror_prob) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double* plane = cur.image.data() + ci * h * w;
      for (int64_t y = 0; y < h; ++y) {
        std::reverse(plane + y * w, plane + (y + 1) * w);
      }
    }
    for (int64_t y = 0; y < h; ++y) {
      std::reverse(cur.mask.data() + y * w, cur.mask.data() + (y + 1) * w);
    }
  }

  // 7. Gaussian noise (image only)
  if (cfg.noise && rng.uniform() < cfg.apply_prob) {
    const double sigma = rng.uniform(0.0, cfg.noise_sigma_hi);
    for (int64_t i = 0; i < cur.image.numel(); ++i) {
      cur.image.data()[i] += rng.normal(0.0, sigma);
    }
  }

  // 8. Gaussian blur (image only, separable, edge-replicated)
  if (cfg.blur && rng.uniform() < cfg.apply_prob) {
    const double sigma = rng.uniform(cfg.blur_lo, cfg.blur_hi);
    const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
      const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
      kernel[static_cast<size_t>(i + radius)] = v;
      ksum += v;
    }
    for (auto& v : kernel) v /= ksum;
    std::vector<double> tmp(static_cast<size_t>(h * w));
    for (int64_t ci = 0; ci < c; ++ci) {
      double* plane = cur.image.data() + ci * h * w;
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int64_t i = -radius; i <= radius; ++i) {
            const int64_t xx = std::clamp<int64_t>(x + i, 0, w - 1);
            acc += kernel[static_cast<size_t>(i + radius)] * plane[y * w + xx];
          }
          tmp[static_cast<size_t>(y * w + x)] = acc;
        }
      }
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int64_t i = -radius; i <= radius; ++i) {
            const int64_t yy = std::clamp<int64_t>(y + i, 0, h - 1);
            acc += kernel[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(yy * w + x)];
          }
          plane[y * w + x] = acc;
        }
      }
    }
  }

  return cur;
}

SynthKind synth_kind_from_string(const std::string& name) {
  if (name == "circles") return SynthKind::circles;
  if (name == "stripes") return SynthKind::stripes;
  if (name == "blobs") return SynthKind::blobs;
  throw Error("unknown synthetic dataset kind: " + name);
}

namespace {

double class_intensity(int64_t cls, int64_t num_classes) {
  if (cls == 0) return 0.1;
  return 0.3 + 0.7 * static_cast<double>(cls) / static_cast<double>(num_classes - 1);
}

void paint_image(Tensor& image, const Tensor& mask, int64_t num_classes, Rng& rng) {
  const int64_t h = mask.size(0), w = mask.size(1);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int64_t cls = static_cast<int64_t>(mask.data()[y * w + x]);
      image.data()[y * w + x] = class_intensity(cls, num_classes) + rng.normal(0.0, 0.03);
    }
  }
}

bool mask_valid(const Tensor& mask, int64_t num_classes) {
  std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
  for (int64_t i = 0; i < mask.numel(); ++i) {
    ++counts[static_cast<size_t>(mask.data()[i])];
  }
  for (int64_t cnt : counts) {
    if (cnt == 0) return false;
  }
  const double bg = static_cast<double>(counts[0]) / static_cast<double>(mask.numel());
  return bg >= 0.3 && bg <= 0.9;
}

Tensor gen_circles_mask(int64_t size, int64_t num_classes, Rng& rng) {
  Tensor mask = Tensor::zeros({size, size});
  std::vector<double> cys, cxs, rs;
  for (int64_t cls = 1; cls < num_classes; ++cls) {
    double cy = 0, cx = 0, r = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      r = rng.uniform(static_cast<double>(size) / 10.0, static_cast<double>(size) / 5.0);
      cy = rng.uniform(r + 1.0, static_cast<double>(size) - r - 1.0);
      cx = rng.uniform(r + 1.0, static_cast<double>(size) - r - 1.0);
      placed = true;
      for (size_t i = 0; i < rs.size(); ++i) {
        const double d = std::hypot(cy - cys[i], cx - cxs[i]);
        if (d < r + rs[i] + 2.0) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) return Tensor();  // caller retries with fresh draws
    cys.push_back(cy);
    cxs.push_back(cx);
    rs.push_back(r);
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        const double d = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
        if (d <= r) mask.data()[y * size + x] = static_cast<double>(cls);
      }
    }
  }
  return mask;
}

Tensor gen_stripes_mask(int64_t size, int64_t num_classes, Rng& rng) {
  Tensor mask = Tensor::zeros({size, size});
  const int64_t band = std::max<int64_t>(2, size / (2 * (num_classes - 1) + 2));
  const bool vertical = rng.uniform() < 0.5;
  const int64_t phase = rng.index(band);
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const int64_t pos = (vertical ? x : y) + phase;
      const int64_t idx = pos / band;
      // even bands are background, odd bands cycle the foreground classes
      const int64_t cls = (idx % 2 == 0) ? 0 : 1 + (idx / 2) % (num_classes - 1);
      mask.data()[y * size + x] = static_cast<double>(cls);
    }
  }
  return mask;
}

Tensor gen_blobs_mask(int64_t size, int64_t num_classes, Rng& rng) {
  Tensor mask = Tensor::zeros({size, size});
  std::vector<double> cys, cxs, sig;
  for (int64_t cls = 1; cls < num_classes; ++cls) {
    cys.push_back(rng.uniform(0.15 * static_cast<double>(size), 0.85 * static_cast<double>(size)));
    cxs.push_back(rng.uniform(0.15 * static_cast<double>(size), 0.85 * static_cast<double>(size)));
    sig.push_back(rng.uniform(static_cast<double>(size) / 12.0, static_cast<double>(size) / 7.0));
  }
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      double best = 0.35;  // background threshold
      int64_t cls = 0;
      for (size_t i = 0; i < sig.size(); ++i) {
        const double dy = static_cast<double>(y) - cys[i];
        const double dx = static_cast<double>(x) - cxs[i];
        const double v = std::exp(-0.5 * (dy * dy + dx * dx) / (sig[i] * sig[i]));
        if (v > best) {
          best = v;
          cls = static_cast<int64_t>(i) + 1;
        }
      }
      mask.data()[y * size + x] = static_cast<double>(cls);
    }
  }
  return mask;
}

}  // namespace

std::vector<LabeledSample> synth_dataset(SynthKind kind, int64_t n, int64_t size,
                                         int64_t num_classes, uint64_t seed) {
  MST_CHECK(size >= 32 && size % 32 == 0, "synth_dataset: size must be a positive multiple of 32");
  MST_CHECK(n >= 0, "synth_dataset: negative sample count");
  MST_CHECK(num_classes >= 2, "synth_dataset: need at least 2 classes");
  Rng rng(Rng::mix(seed, static_cast<uint64_t>(kind) + 0x5157));
  std::vector<LabeledSample> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    Tensor mask;
    for (int attempt = 0; attempt < 256; ++attempt) {
      switch (kind) {
        case SynthKind::circles: mask = gen_circles_mask(size, num_classes, rng); break;
        case SynthKind::stripes: mask = gen_stripes_mask(size, num_classes, rng); break;
        case SynthKind::blobs: mask = gen_blobs_mask(size, num_classes, rng); break;
      }
      if (mask.defined() && mask_valid(mask, num_classes)) break;
      mask = Tensor();
    }
    MST_CHECK(mask.defined(), "synth_dataset: failed to generate a valid mask");
    Tensor image = make_tensor({1, size, size});
    paint_image(image, mask, num_classes, rng);
    out.push_back(LabeledSample{image, mask});
  }
  return out;
}

}  // namespace mstwins
