#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>

namespace imuge {

/// Half-open interval [lo, hi). The degenerate [0, 0] interval means "exactly zero".
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return (lo == hi) ? v == lo : (v >= lo && v < hi); }
};

enum class RegionShape { rectangle, ellipse };

/// Controls the tamper masks drawn by sample_tamper_mask.
///   rst: total tampered area / image area
///   rlt: area of the largest connected tamper / image area
struct MaskSpec {
  Interval rst{0.05, 0.30};
  Interval rlt{0.0, 0.30};
  int min_regions = 1;
  int max_regions = 4;
  RegionShape shape = RegionShape::rectangle;

  void validate() const;

  /// Ranges of the human-attack field study: RST in [0.1, 0.5), RLT in [0.1, 0.25).
  static MaskSpec field_study();
};

struct MaskStats {
  double total_fraction = 0.0;
  double largest_fraction = 0.0;
  int64_t regions = 0;
};

/// Binary [1, 1, h, w] mask (1 = tampered) whose area statistics fall inside `spec`.
/// Throws ConfigError if no sample satisfies the spec within the retry budget.
torch::Tensor sample_tamper_mask(std::mt19937_64& rng, const MaskSpec& spec, int64_t height, int64_t width);

/// Area statistics over 4-connected components of a binary [.., H, W] mask (first image).
MaskStats mask_stats(const torch::Tensor& mask);

struct OtsuResult {
  torch::Tensor mask;  // same shape as the input, {0, 1}
  int level = -1;      // chosen 8-bit level k; pixels with quantized value > k are positive; -1 if degenerate
  double between_class_variance = 0.0;
};

/// Otsu binarization of one soft mask in [0, 1]. Values are quantized to 256 levels
/// with round(v * 255); the threshold maximizes the between-class variance and the
/// first maximizer wins ties. A mask without two populated classes yields all zeros.
OtsuResult binarize_otsu(const torch::Tensor& soft);

/// Per-image Otsu over a [N, 1, H, W] batch.
torch::Tensor binarize_otsu_batch(const torch::Tensor& soft);

// Binary morphology with a k x k square element anchored at (k/2, k/2). Pixels
// outside the image are ignored by both operators.
torch::Tensor erode(const torch::Tensor& mask, int k);
torch::Tensor dilate(const torch::Tensor& mask, int k);
torch::Tensor opening(const torch::Tensor& mask, int k);

/// Opening (drops isolated pulses) followed by one extra dilation that slightly grows
/// the detected area.
torch::Tensor refine_mask(const torch::Tensor& mask, int k = 4);

/// Removes tampered content: fill where mask = 1, the attacked pixel elsewhere.
torch::Tensor rectify(const torch::Tensor& attacked, const torch::Tensor& mask, double fill = 0.0);

/// Nearest-neighbour (strided) downsample by 2^(level-1); level 1 is the identity.
torch::Tensor downsample_mask(const torch::Tensor& mask, int level);

}  // namespace imuge
