#include "imuge/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "imuge/errors.hpp"
#include "imuge/image_io.hpp"
#include "imuge/metrics.hpp"
#include "imuge/resample.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {
namespace {

uint64_t mix(uint64_t seed, uint64_t a, uint64_t b) {
  uint64_t z = seed ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xC2B2AE3D27D4EB4FULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

// Attacked images leave the pipeline as 8-bit files.
torch::Tensor as_saved(const torch::Tensor& batch1) {
  return bytes_to_image(quantize_to_bytes(batch1[0]), batch1.size(2), batch1.size(3), 3).unsqueeze(0);
}

struct Accumulator {
  double bce = 0, psnr = 0, ssim = 0, l_psnr = 0, rect_l_psnr = 0;
  int64_t n = 0, n_local = 0;

  CellMetrics finish(const std::string& name) const {
    CellMetrics m;
    m.cell = name;
    m.samples = n;
    if (n > 0) {
      m.bce = bce / n;
      m.psnr = psnr / n;
      m.ssim = ssim / n;
    }
    if (n_local > 0) {
      m.l_psnr = l_psnr / n_local;
      m.rectified_l_psnr = rect_l_psnr / n_local;
    }
    return m;
  }
};

struct Prepared {
  torch::Tensor original;   // [1, 3, H, W]
  torch::Tensor immunized;  // 8-bit quantized I_M
};

AttackPlan tamper_plan(std::mt19937_64& rng, const GridConfig& grid, int64_t h, int64_t w) {
  AttackSamplerConfig cfg;
  cfg.benign_kinds = {BenignKind::identity};
  cfg.tamper_modes = grid.tamper_modes;
  cfg.p_skip = 0.0;
  return sample_attack_plan(rng, cfg, h, w);
}

void run_cell(ImugeModel& model, const std::vector<Prepared>& prepared, const GridConfig& grid, const GridCell& cell,
              uint64_t cell_key, Accumulator& acc) {
  const int64_t n = static_cast<int64_t>(prepared.size());
  for (int64_t i = 0; i < n; ++i) {
    const auto& p = prepared[static_cast<size_t>(i)];
    const int64_t h = p.original.size(2), w = p.original.size(3);
    // The tamper of image i is shared by all cells of the same mask spec.
    const auto& spec = cell.mask_override ? *cell.mask_override : grid.mask;
    std::mt19937_64 mask_rng(mix(grid.seed, cell.mask_override ? cell_key : 0, static_cast<uint64_t>(i)));
    auto tamper_mask = sample_tamper_mask(mask_rng, spec, h, w);
    auto plan = tamper_plan(mask_rng, grid, h, w);
    const auto& donor = prepared[static_cast<size_t>((i + 1) % n)].original;

    AttackOutcome out;
    out.attacked = as_saved(apply_tamper(p.immunized, tamper_source(p.immunized, donor, plan), tamper_mask));
    out.ground_truth = tamper_mask;

    std::mt19937_64 attack_rng(mix(grid.seed, cell_key + 1000, static_cast<uint64_t>(i)));
    AttackPlan benign;
    benign.seed = attack_rng();
    switch (cell.kind) {
      case BenignKind::jpeg:
        out.attacked = jpeg_roundtrip(out.attacked[0], static_cast<int>(cell.parameter)).unsqueeze(0);
        break;
      case BenignKind::rescale:
        benign.benign = BenignKind::rescale;
        benign.scale = cell.parameter;
        out.attacked = as_saved(apply_benign(out.attacked, benign));
        break;
      case BenignKind::crop: {
        auto crop = crop_attack(out.attacked, cell.parameter, attack_rng);
        out.attacked = as_saved(crop.image);
        out.ground_truth = torch::maximum(out.ground_truth, crop.mask);
        break;
      }
      case BenignKind::blur:
        benign.benign = BenignKind::blur;
        benign.kernel = grid.blur_kernel;
        out.attacked = as_saved(apply_benign(out.attacked, benign));
        break;
      case BenignKind::awgn:
        benign.benign = BenignKind::awgn;
        benign.sigma = grid.awgn_sigma;
        out.attacked = as_saved(apply_benign(out.attacked, benign));
        break;
      case BenignKind::identity:
        break;
    }

    auto soft = model->verify(out.attacked);
    auto binary = refine_mask(binarize_otsu_batch(soft), grid.refine_kernel);
    auto rectified = rectify(out.attacked, binary);
    auto recovered = model->recover(rectified, binary);

    const auto truth = to_unit_range(p.original);
    const auto rec = to_unit_range(recovered);
    acc.bce += mask_bce(soft, out.ground_truth);
    acc.psnr += psnr(truth, rec);
    acc.ssim += ssim(truth, rec);
    if (auto lp = local_psnr(truth, rec, out.ground_truth)) {
      acc.l_psnr += *lp;
      acc.rect_l_psnr += local_psnr(truth, to_unit_range(rectified), out.ground_truth).value();
      ++acc.n_local;
    }
    ++acc.n;
  }
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
nlohmann::json number(const std::optional<double>& v) { return v ? number(*v) : nlohmann::json(nullptr); }

nlohmann::json cell_json(const CellMetrics& m) {
  return {{"cell", m.cell},
          {"bce", number(m.bce)},
          {"l_psnr", number(m.l_psnr)},
          {"psnr", number(m.psnr)},
          {"ssim", number(m.ssim)},
          {"rectified_l_psnr", number(m.rectified_l_psnr)},
          {"samples", m.samples}};
}

}  // namespace

std::vector<GridCell> table_cells(const GridConfig& config) {
  std::vector<GridCell> cells;
  for (int q : config.jpeg_qualities) cells.push_back({"jpeg@" + std::to_string(q), BenignKind::jpeg, double(q), {}});
  auto short_num = [](double v) {
    std::ostringstream s;
    s << v;
    return s.str();
  };
  for (double s : config.scales) cells.push_back({"scale@" + short_num(s), BenignKind::rescale, s, {}});
  for (double c : config.crop_fractions) cells.push_back({"crop@" + short_num(c), BenignKind::crop, c, {}});
  cells.push_back({"blur", BenignKind::blur, double(config.blur_kernel), {}});
  cells.push_back({"awgn", BenignKind::awgn, config.awgn_sigma, {}});
  cells.push_back({"none", BenignKind::identity, 0.0, {}});
  return cells;
}

std::vector<GridCell> stratified_cells() {
  struct Band {
    const char* name;
    double rst, rlt;
  };
  const Band bands[] = {{"rst@0.10/rlt@0.06", 0.10, 0.06},
                        {"rst@0.25/rlt@0.06", 0.25, 0.06},
                        {"rst@0.10/rlt@0.16", 0.10, 0.16},
                        {"rst@0.30/rlt@0.16", 0.30, 0.16}};
  std::vector<GridCell> cells;
  for (const auto& b : bands) {
    MaskSpec spec;
    spec.rst = {b.rst - 0.02, b.rst + 0.02};
    spec.rlt = {b.rlt - 0.02, b.rlt + 0.02};
    // The largest tamper cannot exceed the total; such a band is read as one region.
    if (spec.rlt.lo > spec.rst.hi) spec.rlt = spec.rst;
    spec.min_regions = 1;
    spec.max_regions = 8;
    cells.push_back({b.name, BenignKind::identity, 0.0, spec});
  }
  return cells;
}

MetricsReport evaluate_grid(ImugeModel& model, const std::vector<torch::Tensor>& images, const GridConfig& config,
                            const std::string& config_hash) {
  if (images.empty()) throw ContractError("evaluate_grid: no images");
  config.mask.validate();
  torch::NoGradGuard no_grad;
  model->eval();

  MetricsReport report;
  report.config_hash = config_hash;
  report.sample_count = static_cast<int64_t>(images.size());

  std::vector<Prepared> prepared;
  double clean_psnr = 0, clean_ssim = 0, clean_bce = 0;
  for (const auto& img : images) {
    auto original = img.dim() == 3 ? img.unsqueeze(0) : img;
    require_channels(original, 3, "evaluate_grid image");
    if (original.size(0) != 1) throw ShapeError("evaluate_grid: one image per tensor");
    auto immunized = as_saved(model->immunize(original).image);
    prepared.push_back({original, immunized});
    clean_psnr += psnr(to_unit_range(original), to_unit_range(immunized));
    clean_ssim += ssim(to_unit_range(original), to_unit_range(immunized));
    clean_bce += mask_bce(model->verify(immunized), torch::zeros({1, 1, original.size(2), original.size(3)}));
  }
  const double n = static_cast<double>(images.size());
  report.clean = {clean_psnr / n, clean_ssim / n, clean_bce / n};

  uint64_t key = 1;
  for (const auto& cell : table_cells(config)) {
    Accumulator acc;
    run_cell(model, prepared, config, cell, key++, acc);
    report.grid.push_back(acc.finish(cell.name));
  }
  if (config.stratified) {
    key = 101;
    for (const auto& cell : stratified_cells()) {
      Accumulator acc;
      run_cell(model, prepared, config, cell, key++, acc);
      report.stratified.push_back(acc.finish(cell.name));
    }
  }
  return report;
}

std::string metrics_csv(const std::vector<CellMetrics>& rows, const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << "\n";
  out << "cell,BCE,L-PSNR,PSNR,SSIM\n";
  for (const auto& r : rows) {
    out << r.cell << ',' << fmt("%.6f", r.bce) << ',' << (r.l_psnr ? fmt("%.6f", *r.l_psnr) : "") << ','
        << fmt("%.6f", r.psnr) << ',' << fmt("%.6f", r.ssim) << "\n";
  }
  return out.str();
}

std::string metrics_json(const MetricsReport& report) {
  nlohmann::json j;
  j["config_hash"] = report.config_hash;
  j["sample_count"] = report.sample_count;
  j["grid"] = nlohmann::json::array();
  for (const auto& c : report.grid) j["grid"].push_back(cell_json(c));
  j["stratified"] = nlohmann::json::array();
  for (const auto& c : report.stratified) j["stratified"].push_back(cell_json(c));
  j["clean"] = {{"immunized_psnr", number(report.clean.immunized_psnr)},
                {"immunized_ssim", number(report.clean.immunized_ssim)},
                {"bce_untampered", number(report.clean.bce_untampered)}};
  return j.dump(2);
}

}  // namespace imuge
