#pragma once

#include <filesystem>
#include <string>

#include "imuge/attacks.hpp"
#include "imuge/dataset.hpp"
#include "imuge/evaluation.hpp"
#include "imuge/masks.hpp"
#include "imuge/models.hpp"
#include "imuge/schedule.hpp"

namespace imuge {

/// Everything a run depends on. Serialized as a flat JSON object with dotted keys
/// ("train.batch_size", "mask.rst_lo", ...); unknown keys are rejected.
struct RunConfig {
  TrainConfig train{};
  DatasetConfig data{};
  ModelConfig model{};
  MaskSpec mask{};
  AttackSamplerConfig attacks{};
  GridConfig grid{};
  std::filesystem::path output_dir{"runs/default"};

  void validate() const;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// First 16 hex digits of the SHA-256 of the canonical serialization (output_dir excluded).
  std::string hash() const;
};

}  // namespace imuge
