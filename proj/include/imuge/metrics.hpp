#pragma once

#include <torch/torch.h>

#include <optional>

namespace imuge {

// All metrics take a single image [C, H, W] or a batch [N, C, H, W] and compare the
// tensors as given; the evaluation harness maps images to [0, 1] and uses peak = 1.

/// 10 log10(peak^2 / MSE); +infinity when the images are identical.
double psnr(const torch::Tensor& a, const torch::Tensor& b, double peak = 1.0);

/// PSNR with the error restricted to pixels where mask == 1 (all channels of those
/// pixels). nullopt when the mask is empty; +infinity when the masked error is zero.
std::optional<double> local_psnr(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask,
                                 double peak = 1.0);

/// Structural similarity of the luminance (0.299 R + 0.587 G + 0.114 B for 3-channel
/// input): 11x11 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, mean over all
/// valid window positions (and over the batch). Throws ContractError for images
/// smaller than the window.
double ssim(const torch::Tensor& a, const torch::Tensor& b, double peak = 1.0);

/// Mean binary cross entropy of a soft mask against a binary target (eps-clamped).
double mask_bce(const torch::Tensor& predicted, const torch::Tensor& target, double eps = 1e-7);

}  // namespace imuge
