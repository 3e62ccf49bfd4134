#pragma once

#include <cstdint>
#include <vector>

#include "imuge/losses.hpp"
#include "imuge/phase.hpp"

namespace imuge {

struct TrainConfig {
  int64_t epochs_total = 200;
  int64_t epochs_per_phase = 20;       // progressive stages 1-3; 0 trains stage 4 only
  int64_t decoupling_lift_epoch = 100;
  double fade_fraction = 0.5;          // share of a phase spent fading the new level in
  int64_t batch_size = 8;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  LossWeights weights{};
  double p_skip = 0.2;
  uint64_t seed = 0;

  // Convergence-based early lift of task decoupling.
  bool auto_lift = true;
  int64_t lift_window = 200;
  int64_t lift_patience = 5;
  double lift_tolerance = 0.01;

  int64_t checkpoint_every = 500;  // steps; 0 disables periodic checkpoints

  // Ablation switches.
  bool task_decoupling = true;
  bool use_discriminators = true;
  bool use_verifier = true;

  void validate() const;
};

/// Phase at the start of `epoch` (0-based). Pure function of its arguments.
PhaseState phase_for_epoch(int64_t epoch, const TrainConfig& config);

/// Phase at a fractional position inside an epoch (fade advances per step).
PhaseState phase_for_step(int64_t epoch, int64_t step_in_epoch, int64_t steps_per_epoch, const TrainConfig& config);

/// Watches windowed means of the classification loss and reports when they stop
/// improving by more than `tolerance` (relative) for `patience` windows in a row.
class LiftMonitor {
 public:
  LiftMonitor() = default;
  LiftMonitor(int64_t window, int64_t patience, double tolerance);

  /// Returns true once the plateau criterion has been met (and stays true).
  bool observe(double l_cls);
  bool converged() const { return converged_; }

  struct State {
    std::vector<double> current;
    double previous_mean = -1.0;
    int64_t stale = 0;
    bool converged = false;
  };
  State state() const { return {current_, previous_mean_, stale_, converged_}; }
  void restore(const State& s);

 private:
  int64_t window_ = 200;
  int64_t patience_ = 5;
  double tolerance_ = 0.01;
  std::vector<double> current_;
  double previous_mean_ = -1.0;
  int64_t stale_ = 0;
  bool converged_ = false;
};

}  // namespace imuge
