#include "imuge/dataset.hpp"

#include <algorithm>
#include <iostream>
#include <random>
#include <set>

#include "imuge/digest.hpp"
#include "imuge/errors.hpp"
#include "imuge/image_io.hpp"
#include "imuge/resample.hpp"

namespace imuge {

namespace fs = std::filesystem;

void DatasetConfig::validate() const {
  if (image_size <= 0 || image_size % 16 != 0) throw ConfigError("dataset: image_size must be a positive multiple of 16");
  if (!(eval_fraction >= 0.0 && eval_fraction <= 1.0)) throw ConfigError("dataset: eval_fraction outside [0, 1]");
  if (limit < 0) throw ConfigError("dataset: limit must be non-negative");
}

std::vector<fs::path> list_images(const fs::path& root) {
  static const std::set<std::string> kExtensions{".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff"};
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (kExtensions.count(ext)) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

bool in_eval_split(const fs::path& path, double eval_fraction) {
  const auto digest = sha256_hex(path.filename().string());
  const double u = static_cast<double>(std::stoul(digest.substr(0, 8), nullptr, 16)) / 4294967296.0;
  return u < eval_fraction;
}

std::vector<DatasetItem> load_dataset(const DatasetConfig& config) {
  config.validate();
  auto files = list_images(config.root);
  if (config.split != Split::all) {
    const bool want_eval = config.split == Split::eval;
    std::erase_if(files, [&](const fs::path& p) { return in_eval_split(p, config.eval_fraction) != want_eval; });
  }
  std::mt19937_64 rng(config.seed);
  std::shuffle(files.begin(), files.end(), rng);

  std::vector<DatasetItem> items;
  for (const auto& file : files) {
    if (config.limit > 0 && static_cast<int64_t>(items.size()) >= config.limit) break;
    try {
      auto image = load_image(file).unsqueeze(0);
      image = resize_bilinear(image, config.image_size, config.image_size)[0].clamp(-1.0, 1.0).contiguous();
      items.push_back({file, image});
    } catch (const IoError& e) {
      std::cerr << "warning: skipping " << file << ": " << e.what() << "\n";
    }
  }
  if (items.empty()) throw IoError("dataset: no decodable images under " + config.root.string());
  return items;
}

torch::Tensor stack_images(const std::vector<DatasetItem>& items) {
  std::vector<torch::Tensor> images;
  images.reserve(items.size());
  for (const auto& item : items) images.push_back(item.image);
  return torch::stack(images);
}

}  // namespace imuge
