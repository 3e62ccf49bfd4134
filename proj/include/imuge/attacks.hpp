#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "imuge/diff_jpeg.hpp"

namespace imuge {

enum class TamperMode { replace_image, fill_color, clone_stamp, none };
enum class BenignKind { awgn, blur, rescale, jpeg, crop, identity };

std::string to_string(TamperMode mode);
std::string to_string(BenignKind kind);
TamperMode parse_tamper_mode(std::string_view name);
BenignKind parse_benign_kind(std::string_view name);

/// One sampled attack: a malicious tamper followed by a benign distortion.
struct AttackPlan {
  TamperMode tamper = TamperMode::none;
  BenignKind benign = BenignKind::identity;
  double sigma = 0.1;            // awgn, in the [-1, 1] value domain
  int kernel = 3;                // blur, odd size in {3, 5}
  double scale = 1.0;            // rescale ratio in [0.5, 2]
  int quality = 90;              // jpeg quality factor
  double keep_fraction = 1.0;    // crop
  std::array<int64_t, 2> shift{0, 0};              // clone stamp (rows, cols)
  std::array<float, 3> fill_color{0.f, 0.f, 0.f};  // fill_color tamper, in [-1, 1]
  uint64_t seed = 0;             // drives noise and crop placement

  bool skipped() const { return tamper == TamperMode::none && benign == BenignKind::identity; }
  /// Throws ContractError when a parameter is outside its documented range.
  void validate() const;
};

struct AttackSamplerConfig {
  std::vector<BenignKind> benign_kinds{BenignKind::awgn, BenignKind::blur, BenignKind::rescale, BenignKind::jpeg,
                                       BenignKind::identity};
  std::vector<TamperMode> tamper_modes{TamperMode::replace_image, TamperMode::fill_color, TamperMode::clone_stamp};
  double p_skip = 0.2;
  int quality_min = 50;
  int quality_max = 95;
  double scale_min = 0.5;
  double scale_max = 2.0;
  std::vector<int> kernels{3, 5};
  double sigma = 0.1;
  DiffJpegOptions jpeg{};

  void validate() const;
};

/// Uniform choice over the enabled benign kinds and tamper modes; with probability
/// p_skip the plan is (none, identity). Throws ConfigError on empty sets.
AttackPlan sample_attack_plan(std::mt19937_64& rng, const AttackSamplerConfig& config, int64_t height,
                              int64_t width);

/// Tamper composition: irrelevant * mask + immunized * (1 - mask). The mask must be binary.
torch::Tensor apply_tamper(const torch::Tensor& immunized, const torch::Tensor& irrelevant,
                           const torch::Tensor& mask);

/// The irrelevant content a plan pastes in: the donor image, a constant colour, or a
/// circular shift of the immunized image itself.
torch::Tensor tamper_source(const torch::Tensor& immunized, const torch::Tensor& donor, const AttackPlan& plan);

/// Benign distortion of [N, 3, H, W] images; output clamped to [-1, 1], same size.
/// Crop is not handled here (it changes the ground truth); use crop_attack.
torch::Tensor apply_benign(const torch::Tensor& images, const AttackPlan& plan,
                           const DiffJpegOptions& jpeg = {});

/// Additive Gaussian noise before clamping, drawn from a generator seeded with `seed`.
torch::Tensor awgn_noise(const torch::IntArrayRef sizes, double sigma, uint64_t seed, torch::ScalarType dtype);

struct CropResult {
  torch::Tensor image;  // pixels outside the kept window set to mid-gray (0)
  torch::Tensor mask;   // [N, 1, H, W], 1 outside the window
  std::array<int64_t, 4> window{0, 0, 0, 0};  // y0, x0, h, w
};

/// Keeps a random window of about keep_fraction * H * W pixels (aspect of the image).
CropResult crop_attack(const torch::Tensor& images, double keep_fraction, std::mt19937_64& rng);

struct AttackOutcome {
  torch::Tensor attacked;      // I_A
  torch::Tensor ground_truth;  // M_G: tamper mask, plus cropped-away pixels
};

/// Runs one plan: tamper first, then the benign distortion. `on_stage` (optional) is
/// told the name of each stage as it runs.
AttackOutcome execute_plan(const torch::Tensor& immunized, const torch::Tensor& donor,
                           const torch::Tensor& tamper_mask, const AttackPlan& plan,
                           const DiffJpegOptions& jpeg = {},
                           const std::function<void(std::string_view)>& on_stage = {});

}  // namespace imuge
