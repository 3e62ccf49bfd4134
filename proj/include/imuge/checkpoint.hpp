#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "imuge/models.hpp"
#include "imuge/phase.hpp"
#include "imuge/schedule.hpp"

namespace imuge {

inline constexpr int kCheckpointVersion = 1;

/// Everything outside the tensors that a resumed run needs.
struct CheckpointMeta {
  int version = kCheckpointVersion;
  std::string config_hash;
  PhaseState phase{};
  int64_t next_step = 0;  // global step the resumed run starts with
  bool lifted = false;    // decoupling lifted early by the convergence monitor
  LiftMonitor::State monitor{};
};

using NamedOptimizers = std::vector<std::pair<std::string, torch::optim::Optimizer*>>;

/// Container layout: a magic line, one JSON header line (metadata, payload size and
/// SHA-256 of the payload), then the serialized parameter / optimizer archive.
void save_checkpoint(const std::filesystem::path& path, ImugeModel& model, const NamedOptimizers& optimizers,
                     const CheckpointMeta& meta);

/// Restores model and optimizer state in place. Throws CheckpointError on a version
/// mismatch, a bad magic line or a digest mismatch. A config hash different from
/// `expected_hash` (when non-empty) is reported on `warnings` but not fatal.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ImugeModel& model,
                               const NamedOptimizers& optimizers, const std::string& expected_hash = "",
                               std::ostream* warnings = nullptr);

/// Header only, payload verified.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace imuge
