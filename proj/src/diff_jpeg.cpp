#include "imuge/diff_jpeg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "imuge/errors.hpp"
#include "imuge/resample.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {

namespace F = torch::nn::functional;

namespace {

constexpr std::array<int, 64> kLuminanceBase = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChrominanceBase = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

torch::Tensor dct_matrix(torch::ScalarType dtype) {
  auto m = torch::empty({8, 8}, torch::kFloat64);
  auto a = m.accessor<double, 2>();
  for (int u = 0; u < 8; ++u) {
    const double scale = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int x = 0; x < 8; ++x) a[u][x] = scale * std::cos((2.0 * x + 1.0) * u * M_PI / 16.0);
  }
  return m.to(dtype);
}

torch::Tensor table_tensor(bool luminance, int quality, torch::ScalarType dtype) {
  const auto table = quantization_table(luminance, quality);
  std::vector<double> values(table.begin(), table.end());
  return torch::tensor(values, torch::kFloat64).reshape({8, 8}).to(dtype);
}

torch::Tensor round_with(const torch::Tensor& x, RoundingSurrogate mode) {
  switch (mode) {
    case RoundingSurrogate::straight_through:
      return x + (torch::round(x) - x).detach();
    case RoundingSurrogate::cubic: {
      const auto r = torch::round(x).detach();
      return r + torch::pow(x - r, 3);
    }
    case RoundingSurrogate::none:
      break;
  }
  return x;
}

// Lossy round trip of one [N, C, H, W] plane group (level-shifted by 128) through the
// block DCT and the given quantization table.
torch::Tensor code_planes(const torch::Tensor& planes, const torch::Tensor& table, const torch::Tensor& dct,
                          RoundingSurrogate mode) {
  const int64_t n = planes.size(0), c = planes.size(1), h = planes.size(2), w = planes.size(3);
  auto blocks = (planes - 128.0).reshape({n, c, h / 8, 8, w / 8, 8}).permute({0, 1, 2, 4, 3, 5});
  auto coeffs = torch::matmul(torch::matmul(dct, blocks), dct.t());
  auto restored = round_with(coeffs / table, mode) * table;
  auto spatial = torch::matmul(torch::matmul(dct.t(), restored), dct);
  return spatial.permute({0, 1, 2, 4, 3, 5}).reshape({n, c, h, w}) + 128.0;
}

}  // namespace

std::array<int, 64> quantization_table(bool luminance, int quality) {
  quality = std::clamp(quality, 1, 100);
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const auto& base = luminance ? kLuminanceBase : kChrominanceBase;
  std::array<int, 64> out{};
  for (size_t i = 0; i < 64; ++i) out[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  return out;
}

torch::Tensor diff_jpeg(const torch::Tensor& images, int quality, const DiffJpegOptions& options) {
  require_channels(images, 3, "diff_jpeg");
  if (quality < 10 || quality > 100) {
    throw ContractError("diff_jpeg: quality factor " + std::to_string(quality) + " outside [10, 100]");
  }
  const auto dtype = images.scalar_type();
  const int64_t h = images.size(2), w = images.size(3);
  const int64_t block = options.chroma_subsampling ? 16 : 8;
  const int64_t pad_h = (block - h % block) % block, pad_w = (block - w % block) % block;

  auto px = (images + 1.0) * 127.5;
  if (pad_h != 0 || pad_w != 0) {
    px = F::pad(px, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReflect));
  }
  const auto r = px.select(1, 0), g = px.select(1, 1), b = px.select(1, 2);
  auto y = (0.299 * r + 0.587 * g + 0.114 * b).unsqueeze(1);
  auto cb = (-0.168736 * r - 0.331264 * g + 0.5 * b + 128.0).unsqueeze(1);
  auto cr = (0.5 * r - 0.418688 * g - 0.081312 * b + 128.0).unsqueeze(1);
  auto chroma = torch::cat({cb, cr}, 1);

  const auto dct = dct_matrix(dtype);
  y = code_planes(y, table_tensor(true, quality, dtype), dct, options.rounding);
  if (options.chroma_subsampling) {
    chroma = code_planes(torch::avg_pool2d(chroma, 2), table_tensor(false, quality, dtype), dct, options.rounding);
    chroma = resize_bilinear(chroma, px.size(2), px.size(3));
  } else {
    chroma = code_planes(chroma, table_tensor(false, quality, dtype), dct, options.rounding);
  }

  const auto yy = y.select(1, 0), cbb = chroma.select(1, 0) - 128.0, crr = chroma.select(1, 1) - 128.0;
  auto rgb = torch::stack({yy + 1.402 * crr, yy - 0.344136 * cbb - 0.714136 * crr, yy + 1.772 * cbb}, 1);
  rgb = rgb.narrow(2, 0, h).narrow(3, 0, w);
  return torch::clamp(rgb / 127.5 - 1.0, -1.0, 1.0);
}

}  // namespace imuge
