#include "imuge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "imuge/errors.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {
namespace {

uint64_t mix(uint64_t seed, uint64_t a, uint64_t b) {
  // splitmix64 finalizer over the combined words
  uint64_t z = seed ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xC2B2AE3D27D4EB4FULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

torch::optim::AdamOptions adam_options(const TrainConfig& c) {
  return torch::optim::AdamOptions(c.learning_rate).betas({c.adam_beta1, c.adam_beta2});
}

int factor_for(const PhaseState& phase) { return 1 << (4 - phase.stage); }

torch::Tensor down_image(const torch::Tensor& x, const PhaseState& phase) {
  const int f = factor_for(phase);
  return f == 1 ? x : torch::avg_pool2d(x, f);
}

torch::Tensor down_mask(const torch::Tensor& m, const PhaseState& phase) {
  return downsample_mask(m, 5 - phase.stage);
}

void require_finite(double v, const char* what, const PhaseState& phase) {
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "non-finite " << what << " at step " << phase.step << " (epoch " << phase.epoch << ", stage "
        << phase.stage << ", fade " << phase.fade << ", " << (phase.decoupled ? "decoupled" : "coupled") << ")";
    throw TrainingError(msg.str());
  }
}

}  // namespace

Trainer::Trainer(ImugeModel model, TrainConfig config, MaskSpec mask, AttackSamplerConfig attacks)
    : model_(std::move(model)), config_(config), mask_(mask), attacks_(std::move(attacks)) {
  config_.validate();
  mask_.validate();
  attacks_.p_skip = config_.p_skip;
  attacks_.validate();
  const auto opts = adam_options(config_);
  opt_generator_ = std::make_unique<torch::optim::Adam>(model_->generator_parameters(), opts);
  opt_verifier_ = std::make_unique<torch::optim::Adam>(model_->verifier_parameters(), opts);
  opt_disc_immunized_ = std::make_unique<torch::optim::Adam>(model_->disc_immunized->parameters(), opts);
  opt_disc_recovered_ = std::make_unique<torch::optim::Adam>(model_->disc_recovered->parameters(), opts);
}

NamedOptimizers Trainer::optimizers() {
  return {{"generator", opt_generator_.get()},
          {"verifier", opt_verifier_.get()},
          {"disc_immunized", opt_disc_immunized_.get()},
          {"disc_recovered", opt_disc_recovered_.get()}};
}

int64_t steps_per_epoch(int64_t pool_size, int64_t batch_size) {
  if (pool_size <= 0 || batch_size <= 0) throw ContractError("steps_per_epoch: empty pool or batch");
  return (pool_size + batch_size - 1) / batch_size;
}

Batch Trainer::make_batch(const torch::Tensor& pool, int64_t global_step) const {
  require_channels(pool, 3, "training pool");
  const int64_t m = pool.size(0);
  const int64_t b = config_.batch_size;
  const int64_t spe = steps_per_epoch(m, b);
  const int64_t epoch = global_step / spe;
  const int64_t slot = global_step % spe;

  std::vector<int64_t> order(static_cast<size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(mix(config_.seed, static_cast<uint64_t>(epoch), 1));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  std::mt19937_64 rng(mix(config_.seed, static_cast<uint64_t>(global_step), 2));
  std::vector<int64_t> idx, donor_idx;
  std::vector<torch::Tensor> masks;
  Batch batch;
  const int64_t h = pool.size(2), w = pool.size(3);
  for (int64_t i = 0; i < b; ++i) {
    const int64_t k = order[static_cast<size_t>((slot * b + i) % m)];
    idx.push_back(k);
    int64_t d = k;
    if (m > 1) {
      std::uniform_int_distribution<int64_t> pick(0, m - 2);
      d = pick(rng);
      if (d >= k) ++d;
    }
    donor_idx.push_back(d);
    masks.push_back(sample_tamper_mask(rng, mask_, h, w));
    batch.plans.push_back(sample_attack_plan(rng, attacks_, h, w));
  }
  batch.images = pool.index_select(0, torch::tensor(idx, torch::kLong));
  batch.donors = pool.index_select(0, torch::tensor(donor_idx, torch::kLong));
  batch.tamper_masks = torch::cat(masks, 0).to(pool.scalar_type());
  return batch;
}

AttackOutcome Trainer::attack(const torch::Tensor& immunized, const Batch& batch) const {
  const int64_t n = immunized.size(0);
  if (static_cast<int64_t>(batch.plans.size()) != n) throw ShapeError("attack: one plan per sample required");
  std::vector<torch::Tensor> attacked, truth;
  for (int64_t i = 0; i < n; ++i) {
    auto out = execute_plan(immunized.narrow(0, i, 1), batch.donors.narrow(0, i, 1),
                            batch.tamper_masks.narrow(0, i, 1), batch.plans[static_cast<size_t>(i)], attacks_.jpeg);
    attacked.push_back(out.attacked);
    truth.push_back(out.ground_truth);
  }
  return {torch::cat(attacked, 0), torch::cat(truth, 0)};
}

StepReport Trainer::finish_generator(GeneratorPass& pass, const Batch& batch, const PhaseState& phase,
                                     const torch::Tensor& cls, bool decoupled) {
  GeneratorTerms terms;
  const auto mask_low = down_mask(pass.ground_truth, phase);
  terms.recovery = loss_rec(pass.target, {}, pass.recovered, mask_low).recovery;
  terms.immunization = loss_rec(batch.images, pass.immunized, batch.images,
                                torch::zeros_like(pass.ground_truth)).immunization;
  terms.cls = cls;
  if (config_.use_discriminators) {
    terms.adv_recovered = loss_adv_generator(model_->discriminate_recovered(pass.recovered, phase));
    terms.adv_immunized = loss_adv_generator(model_->discriminate_immunized(pass.immunized));
  }
  auto objective = generator_objective(terms, config_.weights, decoupled);
  StepReport report;
  report.phase = phase;
  report.applied_objective = objective.item<double>();
  require_finite(report.applied_objective, "generator loss", phase);

  const bool train_verifier = cls.defined() && !decoupled;
  opt_generator_->zero_grad();
  if (train_verifier) opt_verifier_->zero_grad();
  objective.backward();
  opt_generator_->step();
  if (train_verifier) opt_verifier_->step();

  report.losses = make_report(terms, config_.weights, decoupled);
  return report;
}

StepReport Trainer::update_generator_decoupled(const Batch& batch, const PhaseState& phase, GeneratorPass& pass) {
  model_->train();
  auto imm = model_->immunize(batch.images);
  auto out = attack(imm.image, batch);
  pass = {};
  pass.immunized = imm.image;
  pass.attacked = out.attacked;
  pass.ground_truth = out.ground_truth;
  pass.used_mask = down_mask(out.ground_truth, phase);
  // Ground-truth rectification: nothing the verifier produces reaches the decoder.
  pass.rectified = rectify(down_image(out.attacked, phase), pass.used_mask);
  pass.target = down_image(batch.images, phase);
  pass.recovered = phase.stage == 4 ? model_->recover(pass.rectified, pass.used_mask)
                                    : model_->recover_progressive(pass.rectified, pass.used_mask, phase);
  return finish_generator(pass, batch, phase, {}, true);
}

double Trainer::update_verifier_decoupled(const torch::Tensor& attacked, const torch::Tensor& ground_truth) {
  model_->verifier->train();
  auto soft = model_->verify(attacked.detach());
  auto l_cls = loss_cls(soft, ground_truth.detach());
  const double value = l_cls.item<double>();
  if (!std::isfinite(value)) throw TrainingError("non-finite verifier loss");
  opt_verifier_->zero_grad();
  l_cls.backward();
  opt_verifier_->step();
  return value;
}

std::pair<double, double> Trainer::update_discriminators(const torch::Tensor& original, const GeneratorPass& pass,
                                                         const PhaseState& phase) {
  if (!config_.use_discriminators) return {0.0, 0.0};
  opt_disc_immunized_->zero_grad();
  auto d_c = loss_adv_discriminator(model_->discriminate_immunized(original),
                                    model_->discriminate_immunized(pass.immunized.detach()));
  d_c.backward();
  opt_disc_immunized_->step();

  opt_disc_recovered_->zero_grad();
  auto d_r = loss_adv_discriminator(model_->discriminate_recovered(pass.target, phase),
                                    model_->discriminate_recovered(pass.recovered.detach(), phase));
  d_r.backward();
  opt_disc_recovered_->step();
  const double dc = d_c.item<double>(), dr = d_r.item<double>();
  require_finite(dc, "immunized-image discriminator loss", phase);
  require_finite(dr, "recovered-image discriminator loss", phase);
  return {dc, dr};
}

StepReport Trainer::step(const Batch& batch, const PhaseState& phase) {
  return phase.decoupled ? step_decoupled(batch, phase) : step_coupled(batch, phase);
}

StepReport Trainer::step_decoupled(const Batch& batch, const PhaseState& phase) {
  if (!phase.decoupled) throw ContractError("step_decoupled called in a coupled phase");
  GeneratorPass pass;
  auto report = update_generator_decoupled(batch, phase, pass);
  if (phase.verifier_active() && config_.use_verifier) {
    report.losses.l_cls = update_verifier_decoupled(pass.attacked, pass.ground_truth);
    report.losses.l_total = loss_total(report.losses, config_.weights, true);
  }
  std::tie(report.d_immunized, report.d_recovered) = update_discriminators(batch.images, pass, phase);
  return report;
}

StepReport Trainer::step_coupled(const Batch& batch, const PhaseState& phase) {
  if (phase.decoupled) throw ContractError("step_coupled called in a decoupled phase");
  if (!phase.verifier_active() || !config_.use_verifier) {
    // Verifier idle: the decoder still trains on ground-truth rectification.
    GeneratorPass pass;
    auto report = update_generator_decoupled(batch, phase, pass);
    report.phase = phase;
    std::tie(report.d_immunized, report.d_recovered) = update_discriminators(batch.images, pass, phase);
    return report;
  }
  model_->train();
  GeneratorPass pass;
  auto imm = model_->immunize(batch.images);
  auto out = attack(imm.image, batch);
  pass.immunized = imm.image;
  pass.attacked = out.attacked;
  pass.ground_truth = out.ground_truth;
  pass.soft_mask = model_->verify(out.attacked);
  pass.used_mask = refine_mask(binarize_otsu_batch(pass.soft_mask.detach()), 4);
  pass.rectified = rectify(out.attacked, pass.used_mask);
  pass.target = batch.images;
  pass.recovered = model_->recover(pass.rectified, pass.used_mask);
  auto cls = loss_cls(pass.soft_mask, pass.ground_truth);
  auto report = finish_generator(pass, batch, phase, cls, false);
  std::tie(report.d_immunized, report.d_recovered) = update_discriminators(batch.images, pass, phase);
  return report;
}

namespace {

std::string log_header() {
  return "step,epoch,stage,fade,decoupled,l_cls,l_R,l_C,l_DR,l_DC,l_total,applied,d_immunized,d_recovered";
}

std::string log_row(int64_t step, const StepReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%lld,%lld,%d,%.6f,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(step), static_cast<long long>(r.phase.epoch), r.phase.stage, r.phase.fade,
                r.phase.decoupled ? 1 : 0, r.losses.l_cls, r.losses.l_R, r.losses.l_C, r.losses.l_DR,
                r.losses.l_DC, r.losses.l_total, r.applied_objective, r.d_immunized, r.d_recovered);
  return buf;
}

// Keeps the comment and header lines plus rows logged before `start`.
void trim_log(const std::filesystem::path& path, int64_t start) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#' || line.rfind("step,", 0) == 0) {
      kept.push_back(line);
      continue;
    }
    if (std::stoll(line.substr(0, line.find(','))) < start) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << "\n";
}

}  // namespace

TrainResult train(Trainer& trainer, const torch::Tensor& pool, const TrainOptions& options) {
  const auto& cfg = trainer.config();
  require_channels(pool, 3, "training pool");
  if (pool.size(0) == 0) throw ContractError("train: empty dataset");
  const int64_t spe = steps_per_epoch(pool.size(0), cfg.batch_size);
  const int64_t total = cfg.epochs_total * spe;

  std::filesystem::create_directories(options.output_dir);
  TrainResult result;
  result.log_path = options.output_dir / "train_log.csv";

  int64_t start = 0;
  bool lifted = false;
  LiftMonitor monitor(cfg.lift_window, cfg.lift_patience, cfg.lift_tolerance);
  auto& model = trainer.model();
  if (options.resume_from) {
    auto meta = load_checkpoint(*options.resume_from, model, trainer.optimizers(), options.config_hash, &std::cerr);
    start = meta.next_step;
    lifted = meta.lifted;
    monitor.restore(meta.monitor);
  }

  if (start == 0 || !std::filesystem::exists(result.log_path)) {
    std::ofstream log(result.log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write " + result.log_path.string());
    log << "# config_hash=" << options.config_hash << "\n" << log_header() << "\n";
  } else {
    trim_log(result.log_path, start);
  }
  std::ofstream log(result.log_path, std::ios::app);
  if (!log) throw IoError("cannot append to " + result.log_path.string());

  auto save = [&](const std::string& name, int64_t next_step, const PhaseState& phase) {
    CheckpointMeta meta;
    meta.config_hash = options.config_hash;
    meta.phase = phase;
    meta.next_step = next_step;
    meta.lifted = lifted;
    meta.monitor = monitor.state();
    auto path = options.output_dir / name;
    save_checkpoint(path, model, trainer.optimizers(), meta);
    result.checkpoints.push_back(path);
  };

  auto phase_at = [&](int64_t g) {
    auto p = phase_for_step(g / spe, g % spe, spe, cfg);
    p.step = g;
    return p;
  };

  int previous_stage = start > 0 ? phase_at(start - 1).stage : 0;
  int64_t g = start;
  for (; g < total; ++g) {
    if (options.max_steps >= 0 && result.steps_run >= options.max_steps) break;
    auto phase = phase_at(g);
    if (lifted) phase.decoupled = false;
    if (previous_stage != 0 && phase.stage != previous_stage) {
      save("stage" + std::to_string(previous_stage) + "_end.ckpt", g, phase_at(g - 1));
    }
    previous_stage = phase.stage;

    auto batch = trainer.make_batch(pool, g);
    auto report = trainer.step(batch, phase);
    log << log_row(g, report) << "\n";
    if (!log) throw IoError("write failed: " + result.log_path.string());
    result.last_phase = phase;
    ++result.steps_run;

    if (phase.decoupled && phase.verifier_active() && cfg.auto_lift && cfg.use_verifier && !lifted) {
      if (monitor.observe(report.losses.l_cls)) {
        lifted = true;
        log.flush();
        save("lift.ckpt", g + 1, phase);
      }
    }
    if (cfg.checkpoint_every > 0 && (g + 1) % cfg.checkpoint_every == 0) {
      log.flush();
      save("step_" + std::to_string(g + 1) + ".ckpt", g + 1, phase);
    }
    if (options.on_step) options.on_step(report);
  }
  log.flush();
  save("final.ckpt", g, result.last_phase);
  result.next_step = g;
  result.lifted = lifted;
  return result;
}

}  // namespace imuge
