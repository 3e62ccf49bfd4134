#include "imuge/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "imuge/errors.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {

namespace {

torch::Tensor as_batch(const torch::Tensor& t) {
  if (!t.defined()) throw ShapeError("metric: undefined tensor");
  if (t.dim() == 3) return t.unsqueeze(0);
  if (t.dim() != 4) throw ShapeError("metric: expected [C,H,W] or [N,C,H,W]");
  return t;
}

double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

torch::Tensor luminance(const torch::Tensor& x) {
  if (x.size(1) == 1) return x;
  if (x.size(1) != 3) throw ShapeError("ssim: expected 1 or 3 channels");
  return (0.299 * x.select(1, 0) + 0.587 * x.select(1, 1) + 0.114 * x.select(1, 2)).unsqueeze(1);
}

torch::Tensor gaussian_window() {
  constexpr int kSize = 11;
  constexpr double kSigma = 1.5;
  std::vector<double> taps(kSize);
  double sum = 0.0;
  for (int i = 0; i < kSize; ++i) {
    const double d = i - kSize / 2;
    taps[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += taps[i];
  }
  auto g = torch::tensor(taps, torch::kFloat64) / sum;
  return torch::outer(g, g).view({1, 1, kSize, kSize});
}

}  // namespace

double psnr(const torch::Tensor& a, const torch::Tensor& b, double peak) {
  require_same_shape(a, b, "psnr");
  const auto diff = a.detach().to(torch::kFloat64) - b.detach().to(torch::kFloat64);
  // sum / count (not mean()) so a full-mask local_psnr reproduces this value bit for bit
  return psnr_from_mse(diff.pow(2).sum().item<double>() / static_cast<double>(diff.numel()), peak);
}

std::optional<double> local_psnr(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask,
                                 double peak) {
  require_same_shape(a, b, "local_psnr");
  const auto x = as_batch(a.detach().to(torch::kFloat64));
  const auto y = as_batch(b.detach().to(torch::kFloat64));
  auto m = as_batch(mask.detach().to(torch::kFloat64));
  require_channels(m, 1, "local_psnr mask");
  require_same_spatial(x, m, "local_psnr");
  const double pixels = m.sum().item<double>();
  if (pixels <= 0.0) return std::nullopt;
  const double sse = ((x - y).pow(2) * m).sum().item<double>();
  return psnr_from_mse(sse / (pixels * static_cast<double>(x.size(1))), peak);
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, double peak) {
  require_same_shape(a, b, "ssim");
  const auto x = luminance(as_batch(a.detach().to(torch::kFloat64)));
  const auto y = luminance(as_batch(b.detach().to(torch::kFloat64)));
  if (x.size(2) < 11 || x.size(3) < 11) throw ContractError("ssim: images smaller than the 11x11 window");
  const auto window = gaussian_window();
  auto blur = [&](const torch::Tensor& t) { return torch::conv2d(t, window); };
  const double c1 = std::pow(0.01 * peak, 2), c2 = std::pow(0.03 * peak, 2);
  const auto mu_x = blur(x), mu_y = blur(y);
  const auto sxx = blur(x * x) - mu_x * mu_x;
  const auto syy = blur(y * y) - mu_y * mu_y;
  const auto sxy = blur(x * y) - mu_x * mu_y;
  const auto map = ((2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)) /
                   ((mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2));
  return map.mean().item<double>();
}

double mask_bce(const torch::Tensor& predicted, const torch::Tensor& target, double eps) {
  require_same_shape(predicted, target, "mask_bce");
  const auto p = torch::clamp(predicted.detach().to(torch::kFloat64), eps, 1.0 - eps);
  const auto t = target.detach().to(torch::kFloat64);
  return -(t * torch::log(p) + (1.0 - t) * torch::log(1.0 - p)).mean().item<double>();
}

}  // namespace imuge
