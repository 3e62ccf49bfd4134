#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "imuge/attacks.hpp"
#include "imuge/checkpoint.hpp"
#include "imuge/losses.hpp"
#include "imuge/masks.hpp"
#include "imuge/models.hpp"
#include "imuge/schedule.hpp"

namespace imuge {

/// One training batch with its per-sample attack draws.
struct Batch {
  torch::Tensor images;        // I, [N, 3, H, W]
  torch::Tensor donors;        // source of replace_image tampers, same shape
  torch::Tensor tamper_masks;  // M_R, [N, 1, H, W]
  std::vector<AttackPlan> plans;
};

struct StepReport {
  PhaseState phase;
  LossReport losses;               // l_cls is the verifier BCE against M_G
  double applied_objective = 0.0;  // scalar the generator optimizer minimized
  double d_immunized = 0.0;        // discriminator losses of this step's update
  double d_recovered = 0.0;
};

/// Tensors produced by one generator pass; kept for the discriminator update.
struct GeneratorPass {
  torch::Tensor immunized;     // I_M
  torch::Tensor attacked;      // I_A
  torch::Tensor ground_truth;  // M_G
  torch::Tensor soft_mask;     // M (undefined while the verifier is idle)
  torch::Tensor used_mask;     // mask that built the rectified image
  torch::Tensor rectified;     // I_V (I_V,G while decoupled), at stage resolution
  torch::Tensor target;        // I at stage resolution
  torch::Tensor recovered;     // I_R at stage resolution
};

class Trainer {
 public:
  Trainer(ImugeModel model, TrainConfig config, MaskSpec mask = {}, AttackSamplerConfig attacks = {});

  /// Deterministic batch for `global_step` drawn from `pool` ([M, 3, H, W]).
  Batch make_batch(const torch::Tensor& pool, int64_t global_step) const;

  /// Dispatches on phase.decoupled.
  StepReport step(const Batch& batch, const PhaseState& phase);

  /// Verifier learns from (I_A, M_G) alone; the generator update sees only M_G.
  /// Throws ContractError for a coupled phase.
  StepReport step_decoupled(const Batch& batch, const PhaseState& phase);
  /// Whole pipeline with the verifier's refined binary mask; one objective for all
  /// three networks. Throws ContractError for a decoupled phase.
  StepReport step_coupled(const Batch& batch, const PhaseState& phase);

  // Pieces of the decoupled step, exposed for isolation checks.
  /// Updates the encoder and decoder only; returns the report and fills `pass`.
  StepReport update_generator_decoupled(const Batch& batch, const PhaseState& phase, GeneratorPass& pass);
  /// Updates the verifier only, on a detached attacked image. Returns L_cls.
  double update_verifier_decoupled(const torch::Tensor& attacked, const torch::Tensor& ground_truth);
  /// One least-squares update of each discriminator; returns (D_C loss, D_R loss).
  std::pair<double, double> update_discriminators(const torch::Tensor& original, const GeneratorPass& pass,
                                                  const PhaseState& phase);

  /// Applies each sample's plan to the immunized batch.
  AttackOutcome attack(const torch::Tensor& immunized, const Batch& batch) const;

  ImugeModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  NamedOptimizers optimizers();
  torch::optim::Adam& generator_optimizer() { return *opt_generator_; }
  torch::optim::Adam& verifier_optimizer() { return *opt_verifier_; }

 private:
  StepReport finish_generator(GeneratorPass& pass, const Batch& batch, const PhaseState& phase,
                              const torch::Tensor& cls, bool decoupled);

  ImugeModel model_;
  TrainConfig config_;
  MaskSpec mask_;
  AttackSamplerConfig attacks_;
  std::unique_ptr<torch::optim::Adam> opt_generator_;
  std::unique_ptr<torch::optim::Adam> opt_verifier_;
  std::unique_ptr<torch::optim::Adam> opt_disc_immunized_;
  std::unique_ptr<torch::optim::Adam> opt_disc_recovered_;
};

struct TrainOptions {
  std::filesystem::path output_dir;
  std::string config_hash;
  std::optional<std::filesystem::path> resume_from;
  int64_t max_steps = -1;  // stop after this many steps of this invocation (-1: run to the end)
  std::function<void(const StepReport&)> on_step;
};

struct TrainResult {
  int64_t steps_run = 0;
  int64_t next_step = 0;
  PhaseState last_phase;
  bool lifted = false;
  std::filesystem::path log_path;
  std::vector<std::filesystem::path> checkpoints;
};

/// Runs the phase schedule over `pool`, writing train_log.csv and checkpoints
/// (stage boundaries, the decoupling lift, every checkpoint_every steps, and the end)
/// into output_dir. Throws TrainingError on a non-finite loss.
TrainResult train(Trainer& trainer, const torch::Tensor& pool, const TrainOptions& options);

/// Total optimizer steps of a schedule over `pool_size` images.
int64_t steps_per_epoch(int64_t pool_size, int64_t batch_size);

}  // namespace imuge
