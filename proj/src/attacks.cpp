#include "imuge/attacks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>

#include "imuge/errors.hpp"
#include "imuge/masks.hpp"
#include "imuge/resample.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {

std::string to_string(TamperMode mode) {
  switch (mode) {
    case TamperMode::replace_image: return "replace_image";
    case TamperMode::fill_color: return "fill_color";
    case TamperMode::clone_stamp: return "clone_stamp";
    case TamperMode::none: return "none";
  }
  return "none";
}

std::string to_string(BenignKind kind) {
  switch (kind) {
    case BenignKind::awgn: return "awgn";
    case BenignKind::blur: return "blur";
    case BenignKind::rescale: return "rescale";
    case BenignKind::jpeg: return "jpeg";
    case BenignKind::crop: return "crop";
    case BenignKind::identity: return "identity";
  }
  return "identity";
}

TamperMode parse_tamper_mode(std::string_view name) {
  for (auto m : {TamperMode::replace_image, TamperMode::fill_color, TamperMode::clone_stamp, TamperMode::none}) {
    if (to_string(m) == name) return m;
  }
  throw ContractError("unknown tamper mode '" + std::string(name) + "'");
}

BenignKind parse_benign_kind(std::string_view name) {
  for (auto k : {BenignKind::awgn, BenignKind::blur, BenignKind::rescale, BenignKind::jpeg, BenignKind::crop,
                 BenignKind::identity}) {
    if (to_string(k) == name) return k;
  }
  throw ContractError("unknown benign attack '" + std::string(name) + "'");
}

void AttackPlan::validate() const {
  if (sigma < 0.0) throw ContractError("attack plan: sigma must be non-negative");
  if (kernel < 1 || kernel % 2 == 0) throw ContractError("attack plan: blur kernel must be odd");
  if (!(scale >= 0.5 && scale <= 2.0)) throw ContractError("attack plan: scale ratio outside [0.5, 2]");
  if (quality < 10 || quality > 100) throw ContractError("attack plan: quality factor outside [10, 100]");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ContractError("attack plan: keep fraction outside (0, 1]");
}

void AttackSamplerConfig::validate() const {
  if (benign_kinds.empty()) throw ConfigError("attack sampler: no benign attack enabled");
  if (tamper_modes.empty()) throw ConfigError("attack sampler: no tamper mode enabled");
  if (!(p_skip >= 0.0 && p_skip <= 1.0)) throw ConfigError("attack sampler: p_skip outside [0, 1]");
  if (quality_min < 10 || quality_max > 100 || quality_min > quality_max) {
    throw ConfigError("attack sampler: bad quality range");
  }
  if (!(scale_min >= 0.5 && scale_max <= 2.0 && scale_min <= scale_max)) {
    throw ConfigError("attack sampler: bad scale range");
  }
  if (kernels.empty()) throw ConfigError("attack sampler: no blur kernel sizes");
  if (std::find(benign_kinds.begin(), benign_kinds.end(), BenignKind::crop) != benign_kinds.end()) {
    throw ConfigError("attack sampler: cropping is an evaluation-only attack");
  }
}

AttackPlan sample_attack_plan(std::mt19937_64& rng, const AttackSamplerConfig& config, int64_t height,
                              int64_t width) {
  config.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AttackPlan plan;
  plan.seed = rng();
  // Every parameter is drawn on every call so the stream position does not depend on the kinds chosen.
  const bool skip = unit(rng) < config.p_skip;
  const auto benign = config.benign_kinds[std::uniform_int_distribution<size_t>(0, config.benign_kinds.size() - 1)(rng)];
  const auto tamper = config.tamper_modes[std::uniform_int_distribution<size_t>(0, config.tamper_modes.size() - 1)(rng)];
  plan.sigma = config.sigma;
  plan.kernel = config.kernels[std::uniform_int_distribution<size_t>(0, config.kernels.size() - 1)(rng)];
  plan.scale = std::exp(std::uniform_real_distribution<double>(std::log(config.scale_min), std::log(config.scale_max))(rng));
  plan.scale = std::clamp(plan.scale, config.scale_min, config.scale_max);
  plan.quality = std::uniform_int_distribution<int>(config.quality_min, config.quality_max)(rng);
  const auto shift_in = [&](int64_t extent) {
    return std::uniform_int_distribution<int64_t>(std::max<int64_t>(1, extent / 8), std::max<int64_t>(1, extent / 2))(rng);
  };
  plan.shift = {shift_in(height), shift_in(width)};
  for (auto& c : plan.fill_color) c = static_cast<float>(unit(rng) * 2.0 - 1.0);

  if (skip) {
    plan.tamper = TamperMode::none;
    plan.benign = BenignKind::identity;
  } else {
    plan.tamper = tamper;
    plan.benign = benign;
  }
  return plan;
}

torch::Tensor apply_tamper(const torch::Tensor& immunized, const torch::Tensor& irrelevant,
                           const torch::Tensor& mask) {
  require_4d(immunized, "apply_tamper");
  require_same_shape(immunized, irrelevant, "apply_tamper irrelevant image");
  require_channels(mask, 1, "apply_tamper mask");
  require_same_spatial(immunized, mask, "apply_tamper mask");
  if (!is_binary(mask)) throw ContractError("apply_tamper: the tamper mask must be binary");
  return irrelevant * mask + immunized * (1.0 - mask);
}

torch::Tensor tamper_source(const torch::Tensor& immunized, const torch::Tensor& donor, const AttackPlan& plan) {
  require_channels(immunized, 3, "tamper_source");
  switch (plan.tamper) {
    case TamperMode::replace_image:
      require_same_shape(immunized, donor, "tamper_source donor");
      return donor;
    case TamperMode::fill_color: {
      auto color = torch::tensor(std::vector<float>(plan.fill_color.begin(), plan.fill_color.end()))
                       .to(immunized.scalar_type())
                       .view({1, 3, 1, 1});
      return color.expand_as(immunized).contiguous();
    }
    case TamperMode::clone_stamp:
      return torch::roll(immunized, {plan.shift[0], plan.shift[1]}, {2, 3});
    case TamperMode::none:
      break;
  }
  return immunized;
}

torch::Tensor awgn_noise(const torch::IntArrayRef sizes, double sigma, uint64_t seed, torch::ScalarType dtype) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn(sizes, gen, torch::TensorOptions().dtype(dtype)) * sigma;
}

torch::Tensor apply_benign(const torch::Tensor& images, const AttackPlan& plan, const DiffJpegOptions& jpeg) {
  require_channels(images, 3, "apply_benign");
  plan.validate();
  switch (plan.benign) {
    case BenignKind::identity:
      return images;
    case BenignKind::awgn:
      return torch::clamp(images + awgn_noise(images.sizes(), plan.sigma, plan.seed, images.scalar_type()), -1.0, 1.0);
    case BenignKind::blur:
      return torch::clamp(gaussian_blur(images, plan.kernel, plan.kernel / 3.0), -1.0, 1.0);
    case BenignKind::rescale: {
      const int64_t h = images.size(2), w = images.size(3);
      const int64_t sh = std::max<int64_t>(1, std::llround(h * plan.scale));
      const int64_t sw = std::max<int64_t>(1, std::llround(w * plan.scale));
      return torch::clamp(resize_bilinear(resize_bilinear(images, sh, sw), h, w), -1.0, 1.0);
    }
    case BenignKind::jpeg:
      return diff_jpeg(images, plan.quality, jpeg);
    case BenignKind::crop:
      break;
  }
  throw ContractError("apply_benign: " + to_string(plan.benign) + " is not a shape-preserving benign attack");
}

CropResult crop_attack(const torch::Tensor& images, double keep_fraction, std::mt19937_64& rng) {
  require_4d(images, "crop_attack");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ContractError("crop_attack: keep fraction outside (0, 1]");
  const int64_t h = images.size(2), w = images.size(3);
  const double target = keep_fraction * static_cast<double>(h * w);
  const int64_t wh = std::clamp<int64_t>(std::llround(h * std::sqrt(keep_fraction)), 1, h);
  const int64_t ww = std::clamp<int64_t>(std::llround(target / static_cast<double>(wh)), 1, w);
  const int64_t y0 = std::uniform_int_distribution<int64_t>(0, h - wh)(rng);
  const int64_t x0 = std::uniform_int_distribution<int64_t>(0, w - ww)(rng);

  auto mask = torch::ones({images.size(0), 1, h, w}, images.options());
  using torch::indexing::Slice;
  mask.index_put_({Slice(), Slice(), Slice(y0, y0 + wh), Slice(x0, x0 + ww)}, 0.0);
  return {rectify(images, mask, 0.0), mask, {y0, x0, wh, ww}};
}

AttackOutcome execute_plan(const torch::Tensor& immunized, const torch::Tensor& donor,
                           const torch::Tensor& tamper_mask, const AttackPlan& plan, const DiffJpegOptions& jpeg,
                           const std::function<void(std::string_view)>& on_stage) {
  require_channels(immunized, 3, "execute_plan");
  plan.validate();
  AttackOutcome out;
  if (plan.tamper != TamperMode::none) {
    if (on_stage) on_stage("tamper");
    out.attacked = apply_tamper(immunized, tamper_source(immunized, donor, plan), tamper_mask);
    out.ground_truth = tamper_mask;
  } else {
    out.attacked = immunized;
    out.ground_truth = torch::zeros({immunized.size(0), 1, immunized.size(2), immunized.size(3)}, immunized.options());
  }
  if (plan.benign == BenignKind::identity) return out;
  if (on_stage) on_stage(to_string(plan.benign));
  if (plan.benign == BenignKind::crop) {
    std::mt19937_64 rng(plan.seed);
    auto crop = crop_attack(out.attacked, plan.keep_fraction, rng);
    out.attacked = crop.image;
    out.ground_truth = torch::maximum(out.ground_truth, crop.mask);
  } else {
    out.attacked = apply_benign(out.attacked, plan, jpeg);
  }
  return out;
}

}  // namespace imuge
