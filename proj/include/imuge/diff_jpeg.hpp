#pragma once

#include <torch/torch.h>

#include <array>

namespace imuge {

/// How quantization rounding behaves under differentiation.
enum class RoundingSurrogate {
  straight_through,  // forward rounds, backward passes the gradient through unchanged
  cubic,             // round(x) + (x - round(x))^3
  none,              // no rounding at all; the smooth proxy the straight-through gradient follows
};

struct DiffJpegOptions {
  RoundingSurrogate rounding = RoundingSurrogate::straight_through;
  bool chroma_subsampling = true;  // 4:2:0, as baseline encoders do by default
};

/// IJG quantization table for `quality` (1..100), row-major 8x8.
std::array<int, 64> quantization_table(bool luminance, int quality);

/// Differentiable JPEG simulation on [N, 3, H, W] images in [-1, 1]: YCbCr conversion,
/// optional 4:2:0 chroma subsampling, 8x8 DCT, quantization with the scaled standard
/// tables, dequantization and the inverse path. Sizes that are not block multiples are
/// reflect-padded internally and cropped back. Throws ContractError unless quality is
/// in [10, 100].
torch::Tensor diff_jpeg(const torch::Tensor& images, int quality, const DiffJpegOptions& options = {});

}  // namespace imuge
