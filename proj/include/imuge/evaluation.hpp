#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "imuge/attacks.hpp"
#include "imuge/masks.hpp"
#include "imuge/models.hpp"

namespace imuge {

struct GridConfig {
  std::vector<int> jpeg_qualities{90, 70, 50};
  std::vector<double> scales{1.5, 0.7, 0.5};
  std::vector<double> crop_fractions{0.9, 0.7, 0.5};
  int blur_kernel = 5;
  double awgn_sigma = 0.1;
  MaskSpec mask = MaskSpec::field_study();
  std::vector<TamperMode> tamper_modes{TamperMode::replace_image, TamperMode::fill_color, TamperMode::clone_stamp};
  int refine_kernel = 4;
  bool stratified = true;
  uint64_t seed = 0;
};

/// One evaluation condition: a benign attack with its parameter, or a tamper-size band.
struct GridCell {
  std::string name;
  BenignKind kind = BenignKind::identity;
  double parameter = 0.0;
  std::optional<MaskSpec> mask_override;
};

struct CellMetrics {
  std::string cell;
  double bce = 0.0;
  std::optional<double> l_psnr;   // mean over images with a non-empty ground truth
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> rectified_l_psnr;  // L-PSNR of the rectified input (recovery baseline)
  int64_t samples = 0;
};

struct CleanMetrics {
  double immunized_psnr = 0.0;
  double immunized_ssim = 0.0;
  double bce_untampered = 0.0;  // verifier on unattacked immunized images vs the zero mask
};

struct MetricsReport {
  std::vector<CellMetrics> grid;        // the twelve attack cells, in table order
  std::vector<CellMetrics> stratified;  // tamper-size bands, no benign attack
  CleanMetrics clean;
  int64_t sample_count = 0;
  std::string config_hash;
};

/// jpeg@90,70,50  scale@1.5,0.7,0.5  crop@0.9,0.7,0.5  blur  awgn  none
std::vector<GridCell> table_cells(const GridConfig& config);
/// (RST, RLT) bands: 10/6, 25/6, 10/16, 30/16 percent.
std::vector<GridCell> stratified_cells();

/// Runs immunize -> 8-bit save -> tamper -> attack (real JPEG codec) -> verify ->
/// Otsu + refine -> rectify -> recover on every image for every cell. Deterministic
/// for a fixed seed. Throws ContractError on an empty image set.
MetricsReport evaluate_grid(ImugeModel& model, const std::vector<torch::Tensor>& images, const GridConfig& config,
                            const std::string& config_hash = "");

/// "# config_hash=..." line, header "cell,BCE,L-PSNR,PSNR,SSIM", fixed 6-decimal
/// formatting; undefined cells are blank.
std::string metrics_csv(const std::vector<CellMetrics>& rows, const std::string& config_hash);
std::string metrics_json(const MetricsReport& report);

}  // namespace imuge
