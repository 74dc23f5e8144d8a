#include "mstwins/config.hpp"

#include <array>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mstwins {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error("config: bad boolean for " + key + ": " + v);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    MST_CHECK(pos == v.size(), "config: trailing junk");
    return r;
  } catch (const std::exception&) {
    throw Error("config: bad integer for " + key + ": " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    MST_CHECK(pos == v.size(), "config: trailing junk");
    return r;
  } catch (const std::exception&) {
    throw Error("config: bad number for " + key + ": " + v);
  }
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

std::array<int64_t, 4> parse_int4(const std::string& key, const std::string& v) {
  auto parts = split_csv(v);
  MST_CHECK(parts.size() == 4, "config: " + key + " needs 4 comma-separated entries");
  std::array<int64_t, 4> out{};
  for (size_t i = 0; i < 4; ++i) out[i] = parse_int(key, parts[i]);
  return out;
}

std::string join_int4(const std::array<int64_t, 4>& a) {
  std::ostringstream os;
  for (size_t i = 0; i < 4; ++i) os << (i ? "," : "") << a[i];
  return os.str();
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

using Setter = std::function<void(FullConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.in_channels", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.in_channels = parse_int(k, v); }},
      {"model.base_channels", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.base_channels = parse_int(k, v); }},
      {"model.num_classes", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.num_classes = parse_int(k, v); }},
      {"model.depths", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.depths = parse_int4(k, v); }},
      {"model.windows", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.windows = parse_int4(k, v); }},
      {"model.sr_ratios", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.sr_ratios = parse_int4(k, v); }},
      {"model.patch_strides", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.patch_strides = parse_int4(k, v); }},
      {"model.mlp_ratio", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.mlp_ratio = parse_int(k, v); }},
      {"model.head_channels", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.head_channels = parse_int(k, v); }},
      {"model.use_cpe", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.use_cpe = parse_bool(k, v); }},
      {"model.use_msfif", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.use_msfif = parse_bool(k, v); }},
      {"model.msfif_reduction", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.msfif_reduction = parse_int(k, v); }},
      {"model.msfif_shared_gates", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.msfif_shared_gates = parse_bool(k, v); }},
      {"model.cascade", [](FullConfig& c, const std::string& k, const std::string& v) {
         if (v == "residual") c.model.cascade = ModelConfig::Cascade::residual_pyramid;
         else if (v == "downsample") c.model.cascade = ModelConfig::Cascade::single_downsample;
         else throw Error("config: model.cascade must be residual or downsample, got " + v);
       }},
      {"model.use_pretrained", [](FullConfig& c, const std::string& k, const std::string& v) { c.model.use_pretrained = parse_bool(k, v); }},
      {"model.pretrained_path", [](FullConfig& c, const std::string&, const std::string& v) { c.model.pretrained_path = v; }},

      {"loss.alpha", [](FullConfig& c, const std::string& k, const std::string& v) { c.loss.alpha = parse_double(k, v); }},
      {"loss.q", [](FullConfig& c, const std::string& k, const std::string& v) {
         auto parts = split_csv(v);
         MST_CHECK(!parts.empty(), "config: loss.q needs at least one entry");
         c.loss.q.clear();
         for (const auto& p : parts) c.loss.q.push_back(parse_double(k, p));
       }},
      {"loss.epsilon", [](FullConfig& c, const std::string& k, const std::string& v) { c.loss.epsilon = parse_double(k, v); }},
      {"loss.prob_floor", [](FullConfig& c, const std::string& k, const std::string& v) { c.loss.prob_floor = parse_double(k, v); }},
      {"loss.pair_mode", [](FullConfig& c, const std::string&, const std::string& v) {
         if (v == "min") c.loss.pair_mode = LossConfig::PairMode::min_pair;
         else if (v == "max") c.loss.pair_mode = LossConfig::PairMode::max_pair;
         else throw Error("config: loss.pair_mode must be min or max, got " + v);
       }},
      {"loss.squared_sizes", [](FullConfig& c, const std::string& k, const std::string& v) { c.loss.squared_sizes = parse_bool(k, v); }},

      {"augment.brightness_contrast", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.brightness_contrast = parse_bool(k, v); }},
      {"augment.brightness", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.brightness = parse_double(k, v); }},
      {"augment.contrast_lo", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.contrast_lo = parse_double(k, v); }},
      {"augment.contrast_hi", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.contrast_hi = parse_double(k, v); }},
      {"augment.rotation", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.rotation = parse_bool(k, v); }},
      {"augment.rotation_deg", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.rotation_deg = parse_double(k, v); }},
      {"augment.lowres", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.lowres = parse_bool(k, v); }},
      {"augment.lowres_lo", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.lowres_lo = parse_double(k, v); }},
      {"augment.lowres_hi", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.lowres_hi = parse_double(k, v); }},
      {"augment.scale", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.scale = parse_bool(k, v); }},
      {"augment.scale_lo", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.scale_lo = parse_double(k, v); }},
      {"augment.scale_hi", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.scale_hi = parse_double(k, v); }},
      {"augment.gamma", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.gamma = parse_bool(k, v); }},
      {"augment.gamma_lo", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.gamma_lo = parse_double(k, v); }},
      {"augment.gamma_hi", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.gamma_hi = parse_double(k, v); }},
      {"augment.mirror", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.mirror = parse_bool(k, v); }},
      {"augment.mirror_prob", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.mirror_prob = parse_double(k, v); }},
      {"augment.noise", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.noise = parse_bool(k, v); }},
      {"augment.noise_sigma", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.noise_sigma_hi = parse_double(k, v); }},
      {"augment.blur", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.blur = parse_bool(k, v); }},
      {"augment.blur_lo", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.blur_lo = parse_double(k, v); }},
      {"augment.blur_hi", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.blur_hi = parse_double(k, v); }},
      {"augment.apply_prob", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.apply_prob = parse_double(k, v); }},
      {"augment.seed", [](FullConfig& c, const std::string& k, const std::string& v) { c.augment.seed = static_cast<uint64_t>(parse_int(k, v)); }},

      {"train.batch_size", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_int(k, v); }},
      {"train.epochs", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.epochs = parse_int(k, v); }},
      {"train.seed", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.seed = static_cast<uint64_t>(parse_int(k, v)); }},
      {"train.lr", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.lr = parse_double(k, v); }},
      {"train.momentum", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.momentum = parse_double(k, v); }},
      {"train.weight_decay", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.weight_decay = parse_double(k, v); }},
      {"train.poly_power", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.poly_power = parse_double(k, v); }},
      {"train.schedule", [](FullConfig& c, const std::string&, const std::string& v) {
         if (v == "poly") c.train.poly_schedule = true;
         else if (v == "constant") c.train.poly_schedule = false;
         else throw Error("config: train.schedule must be poly or constant, got " + v);
       }},
      {"train.val_fraction", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.val_fraction = parse_double(k, v); }},
      {"train.target_spacing", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.target_spacing = parse_double(k, v); }},
      {"train.eval_every", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.eval_every = parse_int(k, v); }},
      {"train.augment", [](FullConfig& c, const std::string& k, const std::string& v) { c.train.augment_enabled = parse_bool(k, v); }},
  };
  return table;
}

}  // namespace

FullConfig parse_config_text(const std::string& text) {
  FullConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    MST_CHECK(eq != std::string::npos,
              "config: line " + std::to_string(lineno) + " is not key = value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw Error("config: unknown key " + key);
    it->second(cfg, key, value);
  }
  return cfg;
}

FullConfig load_config(const std::string& path) {
  std::ifstream in(path);
  MST_CHECK(in.good(), "config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string dump_config(const FullConfig& c) {
  std::ostringstream os;
  os << "model.in_channels = " << c.model.in_channels << "\n";
  os << "model.base_channels = " << c.model.base_channels << "\n";
  os << "model.num_classes = " << c.model.num_classes << "\n";
  os << "model.depths = " << join_int4(c.model.depths) << "\n";
  os << "model.windows = " << join_int4(c.model.windows) << "\n";
  os << "model.sr_ratios = " << join_int4(c.model.sr_ratios) << "\n";
  os << "model.patch_strides = " << join_int4(c.model.patch_strides) << "\n";
  os << "model.mlp_ratio = " << c.model.mlp_ratio << "\n";
  os << "model.head_channels = " << c.model.head_channels << "\n";
  os << "model.use_cpe = " << (c.model.use_cpe ? "true" : "false") << "\n";
  os << "model.use_msfif = " << (c.model.use_msfif ? "true" : "false") << "\n";
  os << "model.msfif_reduction = " << c.model.msfif_reduction << "\n";
  os << "model.msfif_shared_gates = " << (c.model.msfif_shared_gates ? "true" : "false") << "\n";
  os << "model.cascade = "
     << (c.model.cascade == ModelConfig::Cascade::residual_pyramid ? "residual" : "downsample")
     << "\n";
  os << "model.use_pretrained = " << (c.model.use_pretrained ? "true" : "false") << "\n";
  os << "model.pretrained_path = " << c.model.pretrained_path << "\n";

  os << "loss.alpha = " << fmt_double(c.loss.alpha) << "\n";
  os << "loss.q = ";
  for (size_t i = 0; i < c.loss.q.size(); ++i) os << (i ? "," : "") << fmt_double(c.loss.q[i]);
  os << "\n";
  os << "loss.epsilon = " << fmt_double(c.loss.epsilon) << "\n";
  os << "loss.prob_floor = " << fmt_double(c.loss.prob_floor) << "\n";
  os << "loss.pair_mode = "
     << (c.loss.pair_mode == LossConfig::PairMode::min_pair ? "min" : "max") << "\n";
  os << "loss.squared_sizes = " << (c.loss.squared_sizes ? "true" : "false") << "\n";

  os << "augment.brightness_contrast = " << (c.augment.brightness_contrast ? "true" : "false") << "\n";
  os << "augment.brightness = " << fmt_double(c.augment.brightness) << "\n";
  os << "augment.contrast_lo = " << fmt_double(c.augment.contrast_lo) << "\n";
  os << "augment.contrast_hi = " << fmt_double(c.augment.contrast_hi) << "\n";
  os << "augment.rotation = " << (c.augment.rotation ? "true" : "false") << "\n";
  os << "augment.rotation_deg = " << fmt_double(c.augment.rotation_deg) << "\n";
  os << "augment.lowres = " << (c.augment.lowres ? "true" : "false") << "\n";
  os << "augment.lowres_lo = " << fmt_double(c.augment.lowres_lo) << "\n";
  os << "augment.lowres_hi = " << fmt_double(c.augment.lowres_hi) << "\n";
  os << "augment.scale = " << (c.augment.scale ? "true" : "false") << "\n";
  os << "augment.scale_lo = " << fmt_double(c.augment.scale_lo) << "\n";
  os << "augment.scale_hi = " << fmt_double(c.augment.scale_hi) << "\n";
  os << "augment.gamma = " << (c.augment.gamma ? "true" : "false") << "\n";
  os << "augment.gamma_lo = " << fmt_double(c.augment.gamma_lo) << "\n";
  os << "augment.gamma_hi = " << fmt_double(c.augment.gamma_hi) << "\n";
  os << "augment.mirror = " << (c.augment.mirror ? "true" : "false") << "\n";
  os << "augment.mirror_prob = " << fmt_double(c.augment.mirror_prob) << "\n";
  os << "augment.noise = " << (c.augment.noise ? "true" : "false") << "\n";
  os << "augment.noise_sigma = " << fmt_double(c.augment.noise_sigma_hi) << "\n";
  os << "augment.blur = " << (c.augment.blur ? "true" : "false") << "\n";
  os << "augment.blur_lo = " << fmt_double(c.augment.blur_lo) << "\n";
  os << "augment.blur_hi = " << fmt_double(c.augment.blur_hi) << "\n";
  os << "augment.apply_prob = " << fmt_double(c.augment.apply_prob) << "\n";
  os << "augment.seed = " << c.augment.seed << "\n";

  os << "train.batch_size = " << c.train.batch_size << "\n";
  os << "train.epochs = " << c.train.epochs << "\n";
  os << "train.seed = " << c.train.seed << "\n";
  os << "train.lr = " << fmt_double(c.train.lr) << "\n";
  os << "train.momentum = " << fmt_double(c.train.momentum) << "\n";
  os << "train.weight_decay = " << fmt_double(c.train.weight_decay) << "\n";
  os << "train.poly_power = " << fmt_double(c.train.poly_power) << "\n";
  os << "train.schedule = " << (c.train.poly_schedule ? "poly" : "constant") << "\n";
  os << "train.val_fraction = " << fmt_double(c.train.val_fraction) << "\n";
  os << "train.target_spacing = " << fmt_double(c.train.target_spacing) << "\n";
  os << "train.eval_every = " << c.train.eval_every << "\n";
  os << "train.augment = " << (c.train.augment_enabled ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace mstwins
