#include "imuge/schedule.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "imuge/errors.hpp"

namespace imuge {

void TrainConfig::validate() const {
  if (epochs_total <= 0) throw ConfigError("train: epochs_total must be positive");
  if (epochs_per_phase < 0) throw ConfigError("train: epochs_per_phase must be non-negative");
  if (3 * epochs_per_phase >= epochs_total) throw ConfigError("train: the last progressive phase needs epochs");
  if (decoupling_lift_epoch > epochs_total) throw ConfigError("train: decoupling lift after the last epoch");
  if (task_decoupling && decoupling_lift_epoch < 3 * epochs_per_phase) {
    throw ConfigError("train: decoupling must last through the first three progressive stages");
  }
  if (!(fade_fraction > 0.0 && fade_fraction <= 1.0)) throw ConfigError("train: fade_fraction outside (0, 1]");
  if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
  if (learning_rate <= 0) throw ConfigError("train: learning_rate must be positive");
  if (!(p_skip >= 0.0 && p_skip <= 1.0)) throw ConfigError("train: p_skip outside [0, 1]");
  if (lift_window <= 0 || lift_patience <= 0) throw ConfigError("train: bad lift monitor settings");
  weights.validate();
}

PhaseState phase_for_step(int64_t epoch, int64_t step_in_epoch, int64_t steps_per_epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs_total) {
    throw ContractError("phase schedule: epoch " + std::to_string(epoch) + " out of range");
  }
  PhaseState phase;
  phase.epoch = epoch;
  phase.step = step_in_epoch;
  phase.decoupled = config.task_decoupling && epoch < config.decoupling_lift_epoch;
  if (config.epochs_per_phase == 0) {
    phase.stage = 4;
    phase.fade = 1.0;
    return phase;
  }
  phase.stage = static_cast<int>(std::min<int64_t>(4, 1 + epoch / config.epochs_per_phase));
  if (phase.stage == 1) {
    phase.fade = 1.0;
    return phase;
  }
  const double start = static_cast<double>((phase.stage - 1) * config.epochs_per_phase);
  const double within = steps_per_epoch > 0 ? static_cast<double>(step_in_epoch) / static_cast<double>(steps_per_epoch) : 0.0;
  const double position = static_cast<double>(epoch) + within - start;
  const double fade_epochs = config.fade_fraction * static_cast<double>(config.epochs_per_phase);
  phase.fade = std::clamp(position / fade_epochs, 0.0, 1.0);
  return phase;
}

PhaseState phase_for_epoch(int64_t epoch, const TrainConfig& config) { return phase_for_step(epoch, 0, 1, config); }

LiftMonitor::LiftMonitor(int64_t window, int64_t patience, double tolerance)
    : window_(window), patience_(patience), tolerance_(tolerance) {}

bool LiftMonitor::observe(double l_cls) {
  if (converged_) return true;
  current_.push_back(l_cls);
  if (static_cast<int64_t>(current_.size()) < window_) return false;
  const double mean = std::accumulate(current_.begin(), current_.end(), 0.0) / static_cast<double>(current_.size());
  current_.clear();
  if (previous_mean_ > 0.0) {
    const double improvement = (previous_mean_ - mean) / previous_mean_;
    stale_ = improvement < tolerance_ ? stale_ + 1 : 0;
  }
  previous_mean_ = mean;
  converged_ = stale_ >= patience_;
  return converged_;
}

void LiftMonitor::restore(const State& s) {
  current_ = s.current;
  previous_mean_ = s.previous_mean;
  stale_ = s.stale;
  converged_ = s.converged;
}

}  // namespace imuge
