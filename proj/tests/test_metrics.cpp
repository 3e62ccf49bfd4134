#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
// torch first: its logging header defines a CHECK macro that must not shadow doctest's
#include <torch/torch.h>
#undef CHECK

#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "imuge/errors.hpp"
#include "imuge/evaluation.hpp"
#include "imuge/image_io.hpp"
#include "imuge/metrics.hpp"
#include "imuge/models.hpp"
#include "imuge/tensor_util.hpp"
#include "oracles.hpp"

using namespace imuge;

namespace {

torch::Tensor unit_image(int i) { return to_unit_range(load_image(oracle::fixture(i))); }

ImugeModel tiny_model() {
  torch::manual_seed(21);
  ModelConfig mc;
  mc.base_width = 4;
  mc.discriminator_width = 4;
  return ImugeModel(mc);
}

}  // namespace

TEST_CASE("psnr closed forms") {
  auto a = torch::rand({3, 16, 16}, torch::kFloat64);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a + 0.1) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, a + 2.0, 255.0) == doctest::Approx(10 * std::log10(255.0 * 255.0 / 4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, torch::rand({3, 16, 15})), ShapeError);
}

TEST_CASE("psnr and local psnr match scalar oracles") {
  for (int i = 0; i < 10; ++i) {
    auto a = torch::rand({3, 12, 10}, torch::kFloat64), b = torch::rand({3, 12, 10}, torch::kFloat64);
    auto m = (torch::rand({1, 12, 10}, torch::kFloat64) > 0.4).to(torch::kFloat64);
    CHECK(std::abs(psnr(a, b) - oracle::psnr(oracle::flat(a), oracle::flat(b))) <= 1e-9);
    CHECK(psnr(a, b) == psnr(b, a));
    auto lp = local_psnr(a, b, m);
    auto lo = oracle::local_psnr(oracle::flat(a), oracle::flat(b), oracle::flat(m), 3);
    REQUIRE(lp.has_value());
    CHECK(std::abs(*lp - *lo) <= 1e-9);
  }
}

TEST_CASE("local psnr sentinels and full-mask identity") {
  auto a = torch::rand({2, 3, 16, 16}), b = torch::rand({2, 3, 16, 16});
  CHECK(local_psnr(a, b, torch::ones({2, 1, 16, 16})).value() == psnr(a, b));
  CHECK(!local_psnr(a, b, torch::zeros({2, 1, 16, 16})).has_value());
  auto m = torch::zeros({2, 1, 16, 16});
  m.index_put_({torch::indexing::Slice(), 0, torch::indexing::Slice(0, 8)}, 1.0);
  auto c = a.clone();
  c.index_put_({torch::indexing::Slice(), torch::indexing::Slice(), torch::indexing::Slice(8, 16)}, 0.0);
  CHECK(std::isinf(local_psnr(a, c, m).value()));
}

TEST_CASE("ssim: identity, symmetry and bounds") {
  auto a = unit_image(0), b = unit_image(1);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-9);
  CHECK(ssim(a, b) <= 1.0);
  CHECK(ssim(a, b) >= -1.0);
  CHECK(ssim(a, 1.0 - a) < 0.5);
  CHECK_THROWS_AS(ssim(torch::rand({3, 10, 10}), torch::rand({3, 10, 10})), ContractError);
}

TEST_CASE("ssim matches the windowed scalar oracle") {
  for (int i = 0; i < 3; ++i) {
    auto x = torch::rand({1, 1, 24, 20}, torch::kFloat64), y = torch::rand({1, 1, 24, 20}, torch::kFloat64);
    CHECK(std::abs(ssim(x, y) - oracle::ssim(oracle::plane_of(x[0][0]), oracle::plane_of(y[0][0]))) <= 1e-9);
  }
}

TEST_CASE("ssim matches reference values computed with scikit-image") {
  // structural_similarity(gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
  // data_range=1) on BT.601 luminance of the fixture PNGs
  auto lum = [](int i) {
    auto u = unit_image(i).to(torch::kFloat64);
    return (0.299 * u[0] + 0.587 * u[1] + 0.114 * u[2]).view({1, 1, 64, 64});
  };
  CHECK(std::abs(ssim(lum(0), lum(1)) - 0.20133250362222846) <= 1e-6);
  CHECK(std::abs(ssim(lum(2), lum(3)) - 0.005297887136932166) <= 1e-6);
  CHECK(std::abs(ssim(lum(5), lum(6)) - 0.1222002184713149) <= 1e-6);
  CHECK(std::abs(ssim(lum(4), 1.0 - lum(4)) - (-0.42999216043204674)) <= 1e-6);
  auto y = lum(7);
  auto ii = torch::arange(64, torch::kFloat64).view({64, 1}), jj = torch::arange(64, torch::kFloat64).view({1, 64});
  auto z = y + 0.03 * torch::sin(0.7 * ii + 1.3 * jj);
  CHECK(std::abs(ssim(y, z) - 0.847133535957507) <= 1e-6);
  // RGB input goes through the same luminance conversion
  CHECK(std::abs(ssim(unit_image(0), unit_image(1)) - 0.20133250362222846) <= 1e-6);
}

TEST_CASE("mask bce matches the oracle and ln 2") {
  auto p = torch::rand({1, 1, 8, 8}, torch::kFloat64), t = (torch::rand({1, 1, 8, 8}) > 0.5).to(torch::kFloat64);
  CHECK(std::abs(mask_bce(p, t) - oracle::bce(oracle::flat(p), oracle::flat(t))) <= 1e-9);
  CHECK(mask_bce(torch::full({1, 1, 8, 8}, 0.5), t) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("grid cells follow the table layout") {
  auto cells = table_cells(GridConfig{});
  std::vector<std::string> names;
  for (const auto& c : cells) names.push_back(c.name);
  CHECK((names == std::vector<std::string>{"jpeg@90", "jpeg@70", "jpeg@50", "scale@1.5", "scale@0.7", "scale@0.5",
                                          "crop@0.9", "crop@0.7", "crop@0.5", "blur", "awgn", "none"}));
  CHECK(stratified_cells().size() == 4);
}

TEST_CASE("evaluation is deterministic and complete") {
  auto model = tiny_model();
  std::vector<torch::Tensor> images;
  for (int i = 0; i < 3; ++i) images.push_back(load_image(oracle::fixture(i)));
  GridConfig grid;
  grid.seed = 4;
  auto a = evaluate_grid(model, images, grid, "abc");
  auto b = evaluate_grid(model, images, grid, "abc");
  CHECK(metrics_csv(a.grid, a.config_hash) == metrics_csv(b.grid, b.config_hash));
  CHECK(metrics_csv(a.stratified, "abc") == metrics_csv(b.stratified, "abc"));
  CHECK(metrics_json(a) == metrics_json(b));
  CHECK(a.grid.size() == 12);
  CHECK(a.stratified.size() == 4);
  for (const auto& c : a.grid) {
    CHECK(c.samples == 3);
    CHECK(c.ssim >= -1.0);
    CHECK(c.ssim <= 1.0);
    CHECK(c.l_psnr.has_value());
  }
  // untrained model: immunization is the identity
  CHECK(std::isinf(a.clean.immunized_psnr));

  std::istringstream csv(metrics_csv(a.grid, "abc"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "# config_hash=abc");
  std::getline(csv, line);
  CHECK((line == "cell,BCE,L-PSNR,PSNR,SSIM"));
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 4);
  }
  CHECK(rows == 12);

  grid.seed = 5;
  auto c = evaluate_grid(model, images, grid, "abc");
  CHECK(metrics_csv(a.grid, "abc") != metrics_csv(c.grid, "abc"));
  CHECK_THROWS_AS(evaluate_grid(model, {}, grid), ContractError);
}

TEST_CASE("stratified bands draw masks inside their ranges") {
  std::mt19937_64 rng(3);
  for (const auto& cell : stratified_cells()) {
    REQUIRE(cell.mask_override.has_value());
    for (int i = 0; i < 5; ++i) {
      auto s = mask_stats(sample_tamper_mask(rng, *cell.mask_override, 64, 64));
      CHECK(cell.mask_override->rst.contains(s.total_fraction));
      CHECK(cell.mask_override->rlt.contains(s.largest_fraction));
    }
  }
}
