// Command-line front end: train, immunize, attack, localize, recover, evaluate.

#include <torch/torch.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "imuge/attacks.hpp"
#include "imuge/checkpoint.hpp"
#include "imuge/dataset.hpp"
#include "imuge/errors.hpp"
#include "imuge/evaluation.hpp"
#include "imuge/image_io.hpp"
#include "imuge/masks.hpp"
#include "imuge/metrics.hpp"
#include "imuge/models.hpp"
#include "imuge/run_config.hpp"
#include "imuge/tensor_util.hpp"
#include "imuge/trainer.hpp"

namespace fs = std::filesystem;
using namespace imuge;

namespace {

struct Common {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.data.seed = *c.seed;
    cfg.grid.seed = *c.seed;
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

// Every output directory carries a manifest naming the config hash of its artifacts.
class Manifest {
 public:
  Manifest(std::string command, const RunConfig& cfg) : dir_(cfg.output_dir) {
    j_["command"] = std::move(command);
    j_["config_hash"] = cfg.hash();
    j_["seed"] = cfg.train.seed;
    j_["outputs"] = nlohmann::json::array();
    fs::create_directories(dir_);
  }
  fs::path add(const std::string& name) {
    j_["outputs"].push_back(name);
    return dir_ / name;
  }
  nlohmann::json& extra() { return j_; }
  void write() const {
    std::ofstream out(dir_ / "manifest.json");
    out << j_.dump(2) << "\n";
    if (!out) throw IoError("cannot write manifest in " + dir_.string());
  }

 private:
  fs::path dir_;
  nlohmann::json j_;
};

ImugeModel load_model(const RunConfig& cfg, const std::string& checkpoint) {
  ImugeModel model(cfg.model);
  if (!checkpoint.empty()) load_checkpoint(checkpoint, model, {}, cfg.hash(), &std::cerr);
  model->eval();
  return model;
}

torch::Tensor load_batch1(const std::string& path) { return load_image(path).unsqueeze(0); }

torch::Tensor mask_batch1(const std::string& path) {
  auto m = load_mask(path).unsqueeze(0);
  return (m > 0.5).to(torch::kFloat32);
}

void check_divisible(const torch::Tensor& img, const std::string& path) {
  if (img.size(2) % 16 != 0 || img.size(3) % 16 != 0) {
    throw ShapeError(path + ": image sides must be multiples of 16 (got " + std::to_string(img.size(2)) + "x" +
                     std::to_string(img.size(3)) + ")");
  }
}

// Residual mapped to [0, 1] per image for viewing.
torch::Tensor normalized_residual(const torch::Tensor& r) {
  const auto lo = r.min(), hi = r.max();
  const auto span = torch::clamp_min(hi - lo, 1e-12);
  return ((r - lo) / span) * 2.0 - 1.0;
}

int cmd_train(const Common& c, const std::string& data, const std::string& resume, int64_t max_steps) {
  auto cfg = resolve_config(c);
  if (!data.empty()) cfg.data.root = data;
  if (cfg.data.root.empty()) throw ConfigError("train: no dataset (--data or data.root)");
  Manifest manifest("train", cfg);
  cfg.save(manifest.add("config.json"));

  auto data_cfg = cfg.data;
  if (data_cfg.split == Split::all) data_cfg.split = Split::train;
  auto items = load_dataset(data_cfg);
  if (static_cast<int64_t>(items.size()) < cfg.train.batch_size) {
    throw ConfigError("train: dataset smaller than one batch");
  }
  torch::manual_seed(cfg.train.seed);
  ImugeModel model(cfg.model);
  Trainer trainer(model, cfg.train, cfg.mask, cfg.attacks);
  TrainOptions opts;
  opts.output_dir = cfg.output_dir;
  opts.config_hash = cfg.hash();
  if (!resume.empty()) opts.resume_from = resume;
  opts.max_steps = max_steps;
  int64_t last_print = -1;
  opts.on_step = [&](const StepReport& r) {
    if (r.phase.step / 50 != last_print) {
      last_print = r.phase.step / 50;
      std::printf("step %lld stage %d fade %.2f %s l_cls %.4f l_R %.4f l_C %.5f total %.4f\n",
                  static_cast<long long>(r.phase.step), r.phase.stage, r.phase.fade,
                  r.phase.decoupled ? "decoupled" : "coupled", r.losses.l_cls, r.losses.l_R, r.losses.l_C,
                  r.losses.l_total);
      std::fflush(stdout);
    }
  };
  auto result = train(trainer, stack_images(items), opts);
  manifest.add("train_log.csv");
  for (const auto& p : result.checkpoints) manifest.add(p.filename().string());
  manifest.extra()["steps_run"] = result.steps_run;
  manifest.extra()["lifted_early"] = result.lifted;
  manifest.write();
  std::printf("trained %lld steps; final checkpoint %s\n", static_cast<long long>(result.steps_run),
              result.checkpoints.back().string().c_str());
  return 0;
}

int cmd_immunize(const Common& c, const std::string& checkpoint, const std::vector<std::string>& inputs) {
  auto cfg = resolve_config(c);
  auto model = load_model(cfg, checkpoint);
  Manifest manifest("immunize", cfg);
  torch::NoGradGuard no_grad;
  for (const auto& in : inputs) {
    auto img = load_batch1(in);
    check_divisible(img, in);
    auto out = model->immunize(img);
    const auto stem = fs::path(in).stem().string();
    save_image(manifest.add(stem + "_immunized.png"), out.image[0], ImageFormat::png);
    save_image(manifest.add(stem + "_residual.png"), normalized_residual(out.residual)[0], ImageFormat::png);
    std::printf("%s: PSNR(I, I_M) = %.3f dB\n", in.c_str(), psnr(to_unit_range(img), to_unit_range(out.image)));
  }
  manifest.write();
  return 0;
}

int cmd_attack(const Common& c, const std::string& input, const std::string& kind, const std::string& tamper,
               const std::string& donor_path, const std::string& mask_path, std::optional<int> qf, double scale,
               int kernel, double sigma, double keep) {
  auto cfg = resolve_config(c);
  Manifest manifest("attack", cfg);
  auto img = load_batch1(input);
  std::mt19937_64 rng(cfg.train.seed);

  AttackPlan plan;
  plan.seed = rng();
  plan.tamper = parse_tamper_mode(tamper);
  plan.benign = parse_benign_kind(kind);
  {
    // Tamper parameters (fill colour, clone shift) come from the seeded sampler.
    AttackSamplerConfig sampler;
    sampler.p_skip = 0.0;
    auto drawn = sample_attack_plan(rng, sampler, img.size(2), img.size(3));
    plan.fill_color = drawn.fill_color;
    plan.shift = drawn.shift;
  }
  plan.scale = scale;
  plan.kernel = kernel;
  plan.sigma = sigma;
  plan.keep_fraction = keep;
  if (plan.benign == BenignKind::jpeg) {
    if (!qf) throw ConfigError("attack: --qf is required for jpeg");
    plan.quality = *qf;
  }

  torch::Tensor tamper_mask;
  if (plan.tamper == TamperMode::none) {
    tamper_mask = torch::zeros({1, 1, img.size(2), img.size(3)});
  } else if (!mask_path.empty()) {
    tamper_mask = mask_batch1(mask_path);
  } else {
    tamper_mask = sample_tamper_mask(rng, cfg.mask, img.size(2), img.size(3));
  }
  torch::Tensor donor = img;
  if (plan.tamper == TamperMode::replace_image) {
    if (donor_path.empty()) throw ConfigError("attack: --donor is required for replace_image");
    donor = load_batch1(donor_path);
  }

  // The codec itself is the JPEG attack; everything else is applied in float and saved losslessly.
  AttackPlan first = plan;
  if (plan.benign == BenignKind::jpeg) first.benign = BenignKind::identity;
  auto outcome = execute_plan(img, donor, tamper_mask, first);
  if (plan.benign == BenignKind::jpeg) {
    save_image(manifest.add("attacked.jpg"), outcome.attacked[0], ImageFormat::jpeg, plan.quality);
  } else {
    save_image(manifest.add("attacked.png"), outcome.attacked[0], ImageFormat::png);
  }
  save_mask(manifest.add("ground_truth.png"), outcome.ground_truth[0]);
  manifest.extra()["plan"] = {{"tamper", to_string(plan.tamper)}, {"benign", to_string(plan.benign)},
                              {"quality", plan.quality},           {"scale", plan.scale},
                              {"kernel", plan.kernel},             {"sigma", plan.sigma},
                              {"keep_fraction", plan.keep_fraction}};
  manifest.write();
  return 0;
}

int cmd_localize(const Common& c, const std::string& checkpoint, const std::string& input) {
  auto cfg = resolve_config(c);
  auto model = load_model(cfg, checkpoint);
  Manifest manifest("localize", cfg);
  torch::NoGradGuard no_grad;
  auto img = load_batch1(input);
  check_divisible(img, input);
  auto soft = model->verify(img);
  auto refined = refine_mask(binarize_otsu_batch(soft), cfg.grid.refine_kernel);
  save_mask(manifest.add("soft_mask.png"), soft[0]);
  save_mask(manifest.add("refined_mask.png"), refined[0]);
  manifest.write();
  return 0;
}

int cmd_recover(const Common& c, const std::string& checkpoint, const std::string& input,
                const std::string& mask_path, const std::string& reference) {
  auto cfg = resolve_config(c);
  auto model = load_model(cfg, checkpoint);
  Manifest manifest("recover", cfg);
  torch::NoGradGuard no_grad;
  auto img = load_batch1(input);
  check_divisible(img, input);
  torch::Tensor mask;
  if (!mask_path.empty()) {
    mask = mask_batch1(mask_path);
  } else {
    mask = refine_mask(binarize_otsu_batch(model->verify(img)), cfg.grid.refine_kernel);
  }
  auto rectified = rectify(img, mask);
  auto recovered = model->recover(rectified, mask);
  save_image(manifest.add("rectified.png"), rectified[0], ImageFormat::png);
  save_image(manifest.add("recovered.png"), recovered[0], ImageFormat::png);
  save_mask(manifest.add("mask.png"), mask[0]);
  if (!reference.empty()) {
    auto ref = load_batch1(reference);
    const double p = psnr(to_unit_range(ref), to_unit_range(recovered));
    std::printf("PSNR(I, I_R) = %.3f dB\n", p);
    manifest.extra()["psnr_recovered"] = std::isfinite(p) ? nlohmann::json(p) : nlohmann::json("inf");
  }
  manifest.write();
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, const std::string& data) {
  auto cfg = resolve_config(c);
  if (!data.empty()) cfg.data.root = data;
  if (cfg.data.root.empty()) throw ConfigError("evaluate: no dataset (--data or data.root)");
  auto model = load_model(cfg, checkpoint);
  Manifest manifest("evaluate", cfg);
  auto data_cfg = cfg.data;
  if (data_cfg.split == Split::all) data_cfg.split = Split::eval;
  auto items = load_dataset(data_cfg);
  std::vector<torch::Tensor> images;
  for (const auto& it : items) images.push_back(it.image);
  auto report = evaluate_grid(model, images, cfg.grid, cfg.hash());
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(manifest.add(name));
    out << text;
    if (!out) throw IoError("cannot write " + name);
  };
  write("metrics.csv", metrics_csv(report.grid, report.config_hash));
  if (!report.stratified.empty()) write("stratified.csv", metrics_csv(report.stratified, report.config_hash));
  write("metrics.json", metrics_json(report) + "\n");
  manifest.extra()["samples"] = report.sample_count;
  manifest.write();
  std::cout << metrics_csv(report.grid, report.config_hash);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image immunization: tamper localization and self-recovery"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Run configuration (flat JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Seed for training, data order and evaluation draws");
    sub->add_option("--out", common.out, "Output directory");
  };

  std::string data, resume, checkpoint, input, kind, tamper = "none", donor, mask, reference;
  int64_t max_steps = -1;
  std::vector<std::string> inputs;
  std::optional<int> qf;
  double scale = 1.0, sigma = 0.1, keep = 1.0;
  int kernel = 3;

  auto* train_cmd = app.add_subcommand("train", "Train all networks on an image folder");
  add_common(train_cmd);
  train_cmd->add_option("--data", data, "Image folder (overrides data.root)");
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_option("--max-steps", max_steps, "Stop after this many steps");

  auto* immunize_cmd = app.add_subcommand("immunize", "Write immunized images and normalized residuals");
  add_common(immunize_cmd);
  immunize_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->check(CLI::ExistingFile);
  immunize_cmd->add_option("inputs", inputs, "Input images")->required()->check(CLI::ExistingFile);

  auto* attack_cmd = app.add_subcommand("attack", "Tamper and distort an image");
  add_common(attack_cmd);
  attack_cmd->add_option("--input", input, "Image to attack")->required()->check(CLI::ExistingFile);
  attack_cmd->add_option("--kind", kind, "Benign attack")
      ->required()
      ->check(CLI::IsMember({"awgn", "blur", "rescale", "jpeg", "crop", "identity"}));
  attack_cmd->add_option("--tamper", tamper, "Tamper mode")
      ->check(CLI::IsMember({"replace_image", "fill_color", "clone_stamp", "none"}));
  attack_cmd->add_option("--donor", donor, "Donor image for replace_image")->check(CLI::ExistingFile);
  attack_cmd->add_option("--mask", mask, "Tamper mask (default: sampled from the config)")
      ->check(CLI::ExistingFile);
  attack_cmd->add_option("--qf", qf, "JPEG quality factor")->check(CLI::Range(10, 100));
  attack_cmd->add_option("--scale", scale, "Rescale ratio")->check(CLI::Range(0.5, 2.0));
  attack_cmd->add_option("--kernel", kernel, "Blur kernel size")->check(CLI::IsMember({3, 5, 7}));
  attack_cmd->add_option("--sigma", sigma, "Noise standard deviation")->check(CLI::Range(0.0, 1.0));
  attack_cmd->add_option("--keep", keep, "Crop keep fraction")->check(CLI::Range(0.01, 1.0));

  auto* localize_cmd = app.add_subcommand("localize", "Write soft and refined tamper masks");
  add_common(localize_cmd);
  localize_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->check(CLI::ExistingFile);
  localize_cmd->add_option("--input", input, "Attacked image")->required()->check(CLI::ExistingFile);

  auto* recover_cmd = app.add_subcommand("recover", "Write rectified and recovered images");
  add_common(recover_cmd);
  recover_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->check(CLI::ExistingFile);
  recover_cmd->add_option("--input", input, "Attacked image")->required()->check(CLI::ExistingFile);
  recover_cmd->add_option("--mask", mask, "Tamper mask (default: localize first)")->check(CLI::ExistingFile);
  recover_cmd->add_option("--reference", reference, "Original image; reports PSNR(I, I_R)")
      ->check(CLI::ExistingFile);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Run the attack grid and write metric reports");
  add_common(evaluate_cmd);
  evaluate_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--data", data, "Held-out image folder (overrides data.root)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(common, data, resume, max_steps);
    if (*immunize_cmd) return cmd_immunize(common, checkpoint, inputs);
    if (*attack_cmd) {
      return cmd_attack(common, input, kind, tamper, donor, mask, qf, scale, kernel, sigma, keep);
    }
    if (*localize_cmd) return cmd_localize(common, checkpoint, input);
    if (*recover_cmd) return cmd_recover(common, checkpoint, input, mask, reference);
    if (*evaluate_cmd) return cmd_evaluate(common, checkpoint, data);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
