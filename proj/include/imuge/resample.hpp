#pragma once

#include <torch/torch.h>

namespace imuge {

/// Bilinear resize with half-pixel centres (no anti-aliasing). Differentiable.
torch::Tensor resize_bilinear(const torch::Tensor& images, int64_t height, int64_t width);

/// Depthwise Gaussian blur with reflect padding; sigma <= 0 selects k / 3.
torch::Tensor gaussian_blur(const torch::Tensor& images, int kernel, double sigma = 0.0);

}  // namespace imuge
