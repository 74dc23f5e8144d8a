#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "mstwins/gradcheck.hpp"
#include "mstwins/train.hpp"

using namespace mstwins;

namespace {

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, int64_t seed_override, const std::string& ablation,
              const std::string& resume_path) {
  if (!resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_path);
    DatasetMeta meta;
    auto data = load_dataset(data_dir, meta, ckpt.config.train.target_spacing,
                             ckpt.config.train.target_spacing);
    TrainRun run = resume(ckpt, data);
    save_checkpoint(out_path, run.checkpoint);
    std::cout << "resumed to epoch " << run.checkpoint.config.train.epochs << ", final loss "
              << (run.log.epoch_loss.empty() ? 0.0 : run.log.epoch_loss.back()) << "\n";
    return 0;
  }

  FullConfig cfg = config_path.empty() ? FullConfig{} : load_config(config_path);
  if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
  if (!ablation.empty()) cfg.model = ablate(cfg.model, ablation_from_string(ablation));

  DatasetMeta meta;
  auto data = load_dataset(data_dir, meta, cfg.train.target_spacing, cfg.train.target_spacing);
  if (data.empty()) {
    std::cerr << "no samples found under " << data_dir << "\n";
    return 1;
  }
  if (meta.classes > 0 && meta.classes != cfg.model.num_classes) {
    std::cout << "note: dataset declares " << meta.classes << " classes; using that\n";
    cfg.model.num_classes = meta.classes;
  }

  TrainRun run = mstwins::train(cfg, data);
  save_checkpoint(out_path, run.checkpoint);
  std::cout << "trained " << cfg.train.epochs << " epochs over " << data.size() << " samples\n";
  if (!run.log.epoch_loss.empty()) {
    std::cout << "final epoch mean loss: " << run.log.epoch_loss.back() << "\n";
  }
  if (!run.log.dice_rows.empty()) {
    const auto& row = run.log.dice_rows.back();
    std::cout << "final mean foreground dice: " << row.back() << "\n";
  }
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& format) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto model = build_model(ckpt.config);
  ImportReport rep = import_weights(ckpt_path, *model);
  if (rep.loaded == 0) {
    std::cerr << "checkpoint holds no matching parameters\n";
    return 1;
  }
  DatasetMeta meta;
  auto data = load_dataset(data_dir, meta, ckpt.config.train.target_spacing,
                           ckpt.config.train.target_spacing);
  if (data.empty()) {
    std::cerr << "no samples found under " << data_dir << "\n";
    return 1;
  }
  EvalResult r = evaluate(*model, data);
  std::cout << format_eval(r, format == "csv");
  return 0;
}

int cmd_synth(const std::string& kind, int64_t n, int64_t size, int64_t classes, uint64_t seed,
              const std::string& out_dir) {
  auto samples = synth_dataset(synth_kind_from_string(kind), n, size, classes, seed);
  DatasetMeta meta;
  meta.spacing_y = meta.spacing_x = 1.0;
  meta.classes = classes;
  write_dataset(out_dir, samples, meta);
  std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
  return 0;
}

// ---- gradcheck: finite-difference sweeps over the main differentiable blocks

bool report(const std::string& name, const GradCheckReport& rep, double tol = 1e-5) {
  const bool ok = rep.ok(tol);
  std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  max_rel_err=" << rep.max_rel_err
            << " probes=" << rep.probes << (ok ? "" : "  worst: " + rep.worst) << "\n";
  return ok;
}

bool gradcheck_attention(Rng& rng) {
  bool ok = true;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    Rng ir(seed * 77);
    ParamRegistry reg;
    AttentionParams lsa_p = make_attention(reg, "lsa", 8, 2, 2, 1, ir);
    AttentionParams gsa_p = make_attention(reg, "gsa", 8, 2, 2, 2, ir);
    Tensor x = Tensor::randn({1, 8, 4, 4}, ir);
    std::vector<Tensor> inputs{x, lsa_p.q.w, lsa_p.v.b, gsa_p.sr.w};
    auto fn = [&](const std::vector<Tensor>& in) {
      return sum(mul(gsa(lsa(in[0], lsa_p), gsa_p), 0.5));
    };
    ok = report("attention seed=" + std::to_string(seed), check_gradients(fn, inputs, 10, &rng)) && ok;
  }
  return ok;
}

bool gradcheck_msfif(Rng& rng) {
  bool ok = true;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    Rng ir(seed * 131);
    ParamRegistry reg;
    MsFifParams p = make_ms_fif(reg, "fif", 4, 2, false, ir);
    Tensor hi = Tensor::randn({1, 4, 4, 4}, ir);
    Tensor lo = Tensor::randn({1, 8, 2, 2}, ir);
    std::vector<Tensor> inputs{hi, lo, p.mix.w, p.gate_out.global_fc1.w};
    auto fn = [&](const std::vector<Tensor>& in) { return mean(ms_fif(in[0], in[1], p)); };
    ok = report("msfif seed=" + std::to_string(seed), check_gradients(fn, inputs, 10, &rng)) && ok;
  }
  return ok;
}

bool gradcheck_losses(Rng& rng) {
  bool ok = true;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    Rng ir(seed * 313);
    LossConfig lc;
    Tensor logits = Tensor::randn({1, 3, 4, 4}, ir);
    Tensor mask = make_tensor({1, 4, 4});
    for (int64_t i = 0; i < mask.numel(); ++i) mask.data()[i] = static_cast<double>(ir.index(3));
    auto fn = [&](const std::vector<Tensor>& in) {
      CascadeOutput out;
      out.effective_logits = {in[0]};
      out.final_logits = in[0];
      LevelPredictions preds = build_level_predictions(out, mask, 3);
      return combined_loss(preds, lc);
    };
    ok = report("losses seed=" + std::to_string(seed), check_gradients(fn, {logits}, 16, &rng)) && ok;
  }
  return ok;
}

int cmd_gradcheck(const std::string& module) {
  Rng rng(0xC0FFEE);
  bool ok = true;
  if (module == "all" || module == "attention") ok = gradcheck_attention(rng) && ok;
  if (module == "all" || module == "msfif") ok = gradcheck_msfif(rng) && ok;
  if (module == "all" || module == "losses") ok = gradcheck_losses(rng) && ok;
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twins-attention multi-scale segmentation trainer"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string config_path, data_dir, out_path = "model.ckpt", ablation, resume_path;
  int64_t seed_override = -1;
  train_cmd->add_option("--config", config_path, "key = value config file");
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", out_path, "checkpoint output path");
  train_cmd->add_option("--seed", seed_override, "override train.seed");
  train_cmd->add_option("--ablate", ablation, "no_msfif | downsample | no_pretrain");
  train_cmd->add_option("--resume", resume_path, "continue from a checkpoint");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path, eval_data, format = "table";
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--format", format, "table | csv")
      ->check(CLI::IsMember({"table", "csv"}));

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string module = "all";
  grad_cmd->add_option("--module", module, "all | attention | msfif | losses")
      ->check(CLI::IsMember({"all", "attention", "msfif", "losses"}));

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string kind = "circles", synth_out;
  int64_t n = 16, size = 64, classes = 4;
  uint64_t synth_seed = 7;
  synth_cmd->add_option("--kind", kind, "circles | stripes | blobs")
      ->check(CLI::IsMember({"circles", "stripes", "blobs"}));
  synth_cmd->add_option("--n", n, "sample count");
  synth_cmd->add_option("--size", size, "square extent, multiple of 32");
  synth_cmd->add_option("--classes", classes, "class count including background");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      return cmd_train(config_path, data_dir, out_path, seed_override, ablation, resume_path);
    }
    if (*eval_cmd) return cmd_eval(ckpt_path, eval_data, format);
    if (*grad_cmd) return cmd_gradcheck(module);
    if (*synth_cmd) return cmd_synth(kind, n, size, classes, synth_seed, synth_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
