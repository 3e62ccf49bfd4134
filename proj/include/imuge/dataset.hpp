#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace imuge {

enum class Split { all, train, eval };

struct DatasetConfig {
  std::filesystem::path root;
  int64_t image_size = 64;
  Split split = Split::all;
  double eval_fraction = 0.1;  // share of files (by name hash) held out for evaluation
  int64_t limit = 2000;        // 0 = no limit
  uint64_t seed = 0;

  void validate() const;
};

struct DatasetItem {
  std::filesystem::path path;
  torch::Tensor image;  // [3, S, S] in [-1, 1]
};

/// Files under `root` with a decodable image extension, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& root);

/// True when the file belongs to the held-out evaluation split.
bool in_eval_split(const std::filesystem::path& path, double eval_fraction);

/// Loads, resizes (bilinear) and maps images to [-1, 1]. The order is a seeded
/// shuffle of the sorted listing, truncated to `limit`. Unreadable files are skipped
/// with a warning; an empty result throws IoError.
std::vector<DatasetItem> load_dataset(const DatasetConfig& config);

/// Stacks items into one [N, 3, S, S] batch.
torch::Tensor stack_images(const std::vector<DatasetItem>& items);

}  // namespace imuge
