#include "imuge/resample.hpp"

#include <cmath>
#include <vector>

#include "imuge/errors.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {

namespace F = torch::nn::functional;

torch::Tensor resize_bilinear(const torch::Tensor& images, int64_t height, int64_t width) {
  require_4d(images, "resize_bilinear");
  if (height <= 0 || width <= 0) throw ShapeError("resize_bilinear: target size must be positive");
  if (images.size(2) == height && images.size(3) == width) return images;
  return F::interpolate(images, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{height, width})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

torch::Tensor gaussian_blur(const torch::Tensor& images, int kernel, double sigma) {
  require_4d(images, "gaussian_blur");
  if (kernel < 1 || kernel % 2 == 0) throw ContractError("gaussian_blur: kernel size must be odd and positive");
  if (sigma <= 0.0) sigma = kernel / 3.0;
  std::vector<double> taps(kernel);
  double sum = 0.0;
  for (int i = 0; i < kernel; ++i) {
    const double d = i - kernel / 2;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  auto k1 = torch::tensor(taps, torch::kFloat64).div(sum).to(images.scalar_type());
  auto k2 = torch::outer(k1, k1);
  const int64_t channels = images.size(1);
  auto weight = k2.expand({channels, 1, kernel, kernel}).contiguous();
  const int64_t pad = kernel / 2;
  auto padded = F::pad(images, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReflect));
  return F::conv2d(padded, weight, F::Conv2dFuncOptions().groups(channels));
}

}  // namespace imuge
