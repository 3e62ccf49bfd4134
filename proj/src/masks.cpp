#include "imuge/masks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "imuge/errors.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {

using torch::indexing::None;
using torch::indexing::Slice;

void MaskSpec::validate() const {
  auto check = [](const Interval& iv, const char* name) {
    if (!(iv.lo >= 0.0 && iv.lo <= iv.hi && iv.hi <= 1.0)) {
      throw ConfigError(std::string("mask spec: ") + name + " must satisfy 0 <= lo <= hi <= 1");
    }
  };
  check(rst, "rst");
  check(rlt, "rlt");
  if (rlt.lo > rst.hi) throw ConfigError("mask spec: rlt range lies above the rst range");
  if (min_regions < 1 || max_regions < min_regions) throw ConfigError("mask spec: bad region count range");
}

MaskSpec MaskSpec::field_study() {
  MaskSpec spec;
  spec.rst = {0.10, 0.50};
  spec.rlt = {0.10, 0.25};
  spec.min_regions = 1;
  spec.max_regions = 5;
  return spec;
}

namespace {

struct Box {
  int64_t y0, x0, h, w;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Region footprint of `pixels` area with a random aspect ratio in [0.5, 2].
Box shape_box(std::mt19937_64& rng, double pixels, RegionShape shape, int64_t height, int64_t width) {
  if (shape == RegionShape::ellipse) pixels *= 4.0 / M_PI;
  const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
  int64_t h = std::clamp<int64_t>(std::llround(std::sqrt(pixels * aspect)), 1, height);
  int64_t w = std::clamp<int64_t>(std::llround(pixels / static_cast<double>(h)), 1, width);
  return {0, 0, h, w};
}

bool touches(const Box& a, const Box& b) {
  // Boxes one pixel apart would merge under 4-connectivity only if they share an edge;
  // keeping a one-pixel gap keeps them as separate components.
  return a.y0 <= b.y0 + b.h && b.y0 <= a.y0 + a.h && a.x0 <= b.x0 + b.w && b.x0 <= a.x0 + a.w;
}

void paint(std::vector<float>& canvas, int64_t width, const Box& box, RegionShape shape) {
  const double cy = box.y0 + (box.h - 1) / 2.0, cx = box.x0 + (box.w - 1) / 2.0;
  const double ry = box.h / 2.0, rx = box.w / 2.0;
  for (int64_t y = box.y0; y < box.y0 + box.h; ++y) {
    for (int64_t x = box.x0; x < box.x0 + box.w; ++x) {
      if (shape == RegionShape::ellipse) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        if (dy * dy + dx * dx > 1.0) continue;
      }
      canvas[y * width + x] = 1.0f;
    }
  }
}

std::vector<double> region_fractions(std::mt19937_64& rng, const MaskSpec& spec) {
  const double total = uniform(rng, spec.rst.lo, spec.rst.hi);
  const double largest_lo = std::max(spec.rlt.lo, total / spec.max_regions);
  const double largest_hi = std::min(spec.rlt.hi, total);
  if (largest_lo > largest_hi) return {};
  const double largest = uniform(rng, largest_lo, largest_hi);
  const double rest = total - largest;

  const int min_extra = std::max(spec.min_regions - 1, rest > 0.0 ? static_cast<int>(std::ceil(rest / largest - 1e-12)) : 0);
  const int max_extra = spec.max_regions - 1;
  if (min_extra > max_extra) return {};
  if (rest <= 0.0 && min_extra > 0) return {};
  const int extra = std::uniform_int_distribution<int>(min_extra, max_extra)(rng);
  if (extra == 0) return rest > 0.0 ? std::vector<double>{} : std::vector<double>{largest};

  std::vector<double> weights(extra);
  for (auto& w : weights) w = uniform(rng, 0.5, 1.5);
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<double> fractions{largest};
  for (double w : weights) {
    const double f = rest * w / sum;
    if (f > largest) return {};
    fractions.push_back(f);
  }
  return fractions;
}

}  // namespace

torch::Tensor sample_tamper_mask(std::mt19937_64& rng, const MaskSpec& spec, int64_t height, int64_t width) {
  spec.validate();
  if (height <= 0 || width <= 0) throw ShapeError("sample_tamper_mask: empty image");
  if (spec.rst.hi == 0.0) return torch::zeros({1, 1, height, width});

  const double area = static_cast<double>(height * width);
  constexpr int kAttempts = 4000;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const auto fractions = region_fractions(rng, spec);
    if (fractions.empty()) continue;

    std::vector<Box> placed;
    bool ok = true;
    for (double f : fractions) {
      Box box = shape_box(rng, f * area, spec.shape, height, width);
      bool fitted = false;
      for (int tries = 0; tries < 64 && !fitted; ++tries) {
        box.y0 = std::uniform_int_distribution<int64_t>(0, height - box.h)(rng);
        box.x0 = std::uniform_int_distribution<int64_t>(0, width - box.w)(rng);
        fitted = std::none_of(placed.begin(), placed.end(), [&](const Box& b) { return touches(box, b); });
      }
      if (!fitted) {
        ok = false;
        break;
      }
      placed.push_back(box);
    }
    if (!ok) continue;

    std::vector<float> canvas(static_cast<size_t>(height * width), 0.0f);
    for (const auto& box : placed) paint(canvas, width, box, spec.shape);
    auto mask = torch::from_blob(canvas.data(), {1, 1, height, width}, torch::kFloat32).clone();
    const MaskStats stats = mask_stats(mask);
    if (spec.rst.contains(stats.total_fraction) && spec.rlt.contains(stats.largest_fraction) &&
        stats.regions >= spec.min_regions && stats.regions <= spec.max_regions) {
      return mask;
    }
  }
  throw ConfigError("sample_tamper_mask: no mask satisfied the spec within the retry budget");
}

MaskStats mask_stats(const torch::Tensor& mask) {
  if (!mask.defined() || mask.dim() < 2) throw ShapeError("mask_stats: expected at least a 2-D mask");
  const int64_t h = mask.size(-2), w = mask.size(-1);
  auto plane = mask.reshape({-1, h, w})[0].to(torch::kFloat32).contiguous();
  const float* px = plane.data_ptr<float>();
  const int64_t n = h * w;

  std::vector<int64_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int64_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  };
  auto unite = [&](int64_t a, int64_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };

  int64_t ones = 0;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int64_t i = y * w + x;
      if (px[i] <= 0.5f) continue;
      ++ones;
      if (x > 0 && px[i - 1] > 0.5f) unite(i, i - 1);
      if (y > 0 && px[i - w] > 0.5f) unite(i, i - w);
    }
  }
  std::vector<int64_t> sizes(n, 0);
  MaskStats stats;
  int64_t largest = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (px[i] <= 0.5f) continue;
    const int64_t root = find(i);
    if (sizes[root]++ == 0) ++stats.regions;
    largest = std::max(largest, sizes[root]);
  }
  stats.total_fraction = static_cast<double>(ones) / static_cast<double>(n);
  stats.largest_fraction = static_cast<double>(largest) / static_cast<double>(n);
  return stats;
}

OtsuResult binarize_otsu(const torch::Tensor& soft) {
  if (!soft.defined() || soft.numel() == 0) throw ShapeError("binarize_otsu: empty mask");
  auto values = soft.detach().to(torch::kFloat64).contiguous().reshape({-1});
  const double* v = values.data_ptr<double>();
  const int64_t n = values.numel();

  std::array<int64_t, 256> hist{};
  std::vector<uint8_t> levels(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const auto q = static_cast<uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
    levels[i] = q;
    ++hist[q];
  }
  int64_t total_sum = 0;
  for (int q = 0; q < 256; ++q) total_sum += q * hist[q];

  OtsuResult result;
  int64_t count0 = 0, sum0 = 0;
  const double nn = static_cast<double>(n);
  for (int k = 0; k < 255; ++k) {
    count0 += hist[k];
    sum0 += static_cast<int64_t>(k) * hist[k];
    const int64_t count1 = n - count0;
    if (count0 == 0 || count1 == 0) continue;
    const double mean0 = static_cast<double>(sum0) / static_cast<double>(count0);
    const double mean1 = static_cast<double>(total_sum - sum0) / static_cast<double>(count1);
    const double variance =
        (static_cast<double>(count0) / nn) * (static_cast<double>(count1) / nn) * (mean0 - mean1) * (mean0 - mean1);
    if (variance > result.between_class_variance) {
      result.between_class_variance = variance;
      result.level = k;
    }
  }

  auto out = torch::zeros({n}, torch::kFloat32);
  if (result.level >= 0) {
    float* o = out.data_ptr<float>();
    for (int64_t i = 0; i < n; ++i) o[i] = levels[i] > result.level ? 1.0f : 0.0f;
  }
  result.mask = out.reshape(soft.sizes()).to(soft.scalar_type());
  return result;
}

torch::Tensor binarize_otsu_batch(const torch::Tensor& soft) {
  require_channels(soft, 1, "binarize_otsu_batch");
  std::vector<torch::Tensor> out;
  out.reserve(soft.size(0));
  for (int64_t i = 0; i < soft.size(0); ++i) out.push_back(binarize_otsu(soft[i]).mask);
  return torch::stack(out);
}

namespace {

// One separable pass of a square min/max filter along rows (axis 1) or columns (axis 0).
// Offsets run over [lo, hi]; out-of-range neighbours are skipped.
void filter_pass(const float* src, float* dst, int64_t h, int64_t w, int axis, int lo, int hi, bool take_min) {
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      float acc = take_min ? 1.0f : 0.0f;
      for (int d = lo; d <= hi; ++d) {
        const int64_t yy = axis == 0 ? y + d : y;
        const int64_t xx = axis == 1 ? x + d : x;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const float s = src[yy * w + xx];
        acc = take_min ? std::min(acc, s) : std::max(acc, s);
      }
      dst[y * w + x] = acc;
    }
  }
}

torch::Tensor morph(const torch::Tensor& mask, int k, bool erosion) {
  if (k < 1) throw ContractError("morphology: kernel size must be positive");
  if (!mask.defined() || mask.dim() < 2) throw ShapeError("morphology: expected at least a 2-D mask");
  const int64_t h = mask.size(-2), w = mask.size(-1);
  auto planes = mask.detach().to(torch::kFloat32).contiguous().reshape({-1, h, w});
  auto out = torch::empty_like(planes);
  std::vector<float> tmp(static_cast<size_t>(h * w));
  const int anchor = k / 2;
  // erosion looks at p + d, dilation at p - d, for d in [-anchor, k - 1 - anchor]
  const int lo = erosion ? -anchor : -(k - 1 - anchor);
  const int hi = erosion ? k - 1 - anchor : anchor;
  for (int64_t i = 0; i < planes.size(0); ++i) {
    const float* src = planes[i].data_ptr<float>();
    float* dst = out[i].data_ptr<float>();
    filter_pass(src, tmp.data(), h, w, 1, lo, hi, erosion);
    filter_pass(tmp.data(), dst, h, w, 0, lo, hi, erosion);
  }
  return out.reshape(mask.sizes()).to(mask.scalar_type());
}

}  // namespace

torch::Tensor erode(const torch::Tensor& mask, int k) { return morph(mask, k, true); }
torch::Tensor dilate(const torch::Tensor& mask, int k) { return morph(mask, k, false); }
torch::Tensor opening(const torch::Tensor& mask, int k) { return dilate(erode(mask, k), k); }
torch::Tensor refine_mask(const torch::Tensor& mask, int k) { return dilate(opening(mask, k), k); }

torch::Tensor rectify(const torch::Tensor& attacked, const torch::Tensor& mask, double fill) {
  require_same_spatial(attacked, mask, "rectify");
  require_channels(mask, 1, "rectify mask");
  return attacked * (1.0 - mask) + mask * fill;
}

torch::Tensor downsample_mask(const torch::Tensor& mask, int level) {
  if (level < 1 || level > 4) throw ContractError("downsample_mask: level must be in 1..4");
  if (level == 1) return mask;
  const int64_t step = int64_t{1} << (level - 1);
  return mask.index({"...", Slice(None, None, step), Slice(None, None, step)});
}

}  // namespace imuge
