#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mstwins/gradcheck.hpp"
#include "mstwins/train.hpp"

namespace py = pybind11;
using namespace mstwins;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  Tensor t = make_tensor(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
  return out;
}

FullConfig config_from_text(const std::string& text) {
  return text.empty() ? FullConfig{} : parse_config_text(text);
}

// thin model handle pairing a Model with the config that built it
struct PyModel {
  FullConfig cfg;
  std::unique_ptr<Model> model;

  explicit PyModel(const std::string& config_text) : cfg(config_from_text(config_text)) {
    model = build_model(cfg);
  }

  py::dict forward(const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
    Tensor x = tensor_from_array(image);
    if (x.dim() == 3) x = reshape(x, {1, x.size(0), x.size(1), x.size(2)});
    MST_CHECK(x.dim() == 4, "forward: expected (B,C,H,W) or (C,H,W)");
    CascadeOutput out = model->forward(x);
    py::dict d;
    d["final_logits"] = array_from_tensor(out.final_logits);
    py::list residual, effective;
    for (const Tensor& t : out.residual_logits) residual.append(array_from_tensor(t));
    for (const Tensor& t : out.effective_logits) effective.append(array_from_tensor(t));
    d["residual_logits"] = residual;
    d["effective_logits"] = effective;
    return d;
  }

  py::list encode(const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
    Tensor x = tensor_from_array(image);
    if (x.dim() == 3) x = reshape(x, {1, x.size(0), x.size(1), x.size(2)});
    StagePyramid p = model->encode(x);
    py::list levels;
    for (size_t i = 0; i < 4; ++i) levels.append(array_from_tensor(p[i]));
    return levels;
  }

  py::array_t<double> predict(const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
    Tensor x = tensor_from_array(image);
    if (x.dim() == 3) x = reshape(x, {1, x.size(0), x.size(1), x.size(2)});
    CascadeOutput out = model->forward(x);
    return array_from_tensor(argmax_axis(out.final_logits, 1));
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (const auto& [name, t] : model->params().entries()) names.push_back(name);
    return names;
  }

  int64_t parameter_count() const { return model->params().total_elements(); }

  int64_t load_weights(const std::string& path) {
    return import_weights(path, *model).loaded;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Twins-attention multi-scale segmentation core";
  m.attr("__version__") = "0.1.0";

  // ---- tensor ops on numpy arrays
  m.def("matmul", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                     const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
    return array_from_tensor(matmul(tensor_from_array(a), tensor_from_array(b)));
  });
  m.def("softmax", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                      int64_t axis) {
    return array_from_tensor(softmax(tensor_from_array(x), axis));
  }, py::arg("x"), py::arg("axis") = -1);
  m.def("gelu", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
    return array_from_tensor(gelu(tensor_from_array(x)));
  });
  m.def("conv2d", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                     const py::array_t<double, py::array::c_style | py::array::forcecast>& w,
                     int64_t stride, int64_t padding, int64_t groups) {
    return array_from_tensor(conv2d(tensor_from_array(x), tensor_from_array(w), Tensor(), stride,
                                    padding, groups));
  }, py::arg("x"), py::arg("w"), py::arg("stride") = 1, py::arg("padding") = 0,
     py::arg("groups") = 1);
  m.def("layernorm", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                        const py::array_t<double, py::array::c_style | py::array::forcecast>& g,
                        const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
    return array_from_tensor(layernorm(tensor_from_array(x), tensor_from_array(g),
                                       tensor_from_array(b)));
  });

  // ---- metrics and losses
  m.def("dice_score", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
                         const py::array_t<double, py::array::c_style | py::array::forcecast>& gt,
                         int64_t class_id) {
    return dice_score(tensor_from_array(pred), tensor_from_array(gt), class_id);
  });
  m.def("combined_loss",
        [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& level_logits,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& mask,
           const std::string& config_text) {
          FullConfig cfg = config_from_text(config_text);
          CascadeOutput out;
          for (const auto& a : level_logits) out.effective_logits.push_back(tensor_from_array(a));
          MST_CHECK(!out.effective_logits.empty(), "combined_loss: no levels");
          out.final_logits = out.effective_logits.front();
          Tensor m2 = tensor_from_array(mask);
          LevelPredictions preds =
              build_level_predictions(out, m2, out.effective_logits.front().size(1));
          return combined_loss(preds, cfg.loss).item();
        },
        py::arg("level_logits"), py::arg("mask"), py::arg("config_text") = "");

  // ---- data
  m.def("synth_dataset", [](const std::string& kind, int64_t n, int64_t size, int64_t classes,
                            uint64_t seed) {
    auto samples = synth_dataset(synth_kind_from_string(kind), n, size, classes, seed);
    py::list out;
    for (const auto& s : samples) {
      out.append(py::make_tuple(array_from_tensor(s.image), array_from_tensor(s.mask)));
    }
    return out;
  }, py::arg("kind"), py::arg("n"), py::arg("size"), py::arg("classes"), py::arg("seed") = 7);
  m.def("write_synth_dataset", [](const std::string& kind, int64_t n, int64_t size,
                                  int64_t classes, uint64_t seed, const std::string& out_dir) {
    auto samples = synth_dataset(synth_kind_from_string(kind), n, size, classes, seed);
    DatasetMeta meta;
    meta.classes = classes;
    write_dataset(out_dir, samples, meta);
    return static_cast<int64_t>(samples.size());
  });

  // ---- config
  m.def("default_config", []() { return dump_config(FullConfig{}); });
  m.def("validate_config", [](const std::string& text) {
    FullConfig cfg = parse_config_text(text);
    cfg.model.validate();
    cfg.loss.validate();
    return dump_config(cfg);
  });

  // ---- training / evaluation
  m.def("train", [](const std::string& config_text, const std::string& data_dir,
                    const std::string& out_ckpt) {
    FullConfig cfg = config_from_text(config_text);
    DatasetMeta meta;
    auto data = load_dataset(data_dir, meta, cfg.train.target_spacing, cfg.train.target_spacing);
    MST_CHECK(!data.empty(), "train: no samples under " + data_dir);
    if (meta.classes > 0) cfg.model.num_classes = meta.classes;
    TrainRun run = train(cfg, data);
    save_checkpoint(out_ckpt, run.checkpoint);
    py::dict d;
    d["step_loss"] = run.log.step_loss;
    d["epoch_loss"] = run.log.epoch_loss;
    if (!run.log.dice_rows.empty()) d["final_dice"] = run.log.dice_rows.back();
    return d;
  });
  m.def("evaluate", [](const std::string& ckpt_path, const std::string& data_dir) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    auto model = build_model(ckpt.config);
    load_parameters(ckpt, *model);
    DatasetMeta meta;
    auto data = load_dataset(data_dir, meta, ckpt.config.train.target_spacing,
                             ckpt.config.train.target_spacing);
    MST_CHECK(!data.empty(), "evaluate: no samples under " + data_dir);
    EvalResult r = evaluate(*model, data);
    py::dict d;
    d["per_class"] = r.per_class;
    d["mean_foreground"] = r.mean_foreground;
    return d;
  });

  // ---- gradient oracle
  m.def("gradcheck_quick", []() {
    Rng rng(0xC0FFEE);
    Rng init(42);
    ParamRegistry reg;
    AttentionParams p = make_attention(reg, "a", 8, 2, 2, 2, init);
    Tensor x = Tensor::randn({1, 8, 4, 4}, init);
    auto fn = [&](const std::vector<Tensor>& in) { return mean(mul(gsa(in[0], p), 2.0)); };
    GradCheckReport rep = check_gradients(fn, {x}, 8, &rng);
    return rep.max_rel_err;
  });

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("config_text") = "")
      .def("forward", &PyModel::forward)
      .def("encode", &PyModel::encode)
      .def("predict", &PyModel::predict)
      .def("parameter_names", &PyModel::parameter_names)
      .def("parameter_count", &PyModel::parameter_count)
      .def("load_weights", &PyModel::load_weights);

  py::register_exception<Error>(m, "MstwinsError");
}
