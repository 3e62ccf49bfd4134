#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
// torch first: its logging header defines a CHECK macro that must not shadow doctest's
#include <torch/torch.h>
#undef CHECK

#include "doctest.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "imuge/checkpoint.hpp"
#include "imuge/errors.hpp"
#include "imuge/schedule.hpp"
#include "imuge/trainer.hpp"
#include "test_common.hpp"

using namespace imuge;
using testing_util::hash_module;
using testing_util::hash_tensors;

namespace {

ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.base_width = 4;
  mc.discriminator_width = 4;
  return mc;
}

TrainConfig tiny_train_config() {
  TrainConfig tc;
  tc.epochs_total = 4;
  tc.epochs_per_phase = 1;
  tc.decoupling_lift_epoch = 3;
  tc.batch_size = 2;
  tc.learning_rate = 1e-3;
  tc.checkpoint_every = 0;
  tc.auto_lift = false;
  tc.seed = 11;
  return tc;
}

torch::Tensor pool(int64_t n = 6, int64_t size = 32) {
  torch::manual_seed(3);
  return torch::rand({n, 3, size, size}) * 2 - 1;
}

Trainer make_trainer(TrainConfig tc = tiny_train_config()) {
  torch::manual_seed(5);
  return Trainer(ImugeModel(tiny_model_config()), tc);
}

PhaseState stage4(bool decoupled) {
  PhaseState p;
  p.stage = 4;
  p.fade = 1.0;
  p.decoupled = decoupled;
  return p;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("phase schedule fixtures") {
  TrainConfig c;
  auto p0 = phase_for_epoch(0, c);
  CHECK(p0.stage == 1);
  CHECK(p0.fade == 1.0);
  CHECK(p0.decoupled);
  auto p20 = phase_for_epoch(20, c);
  CHECK(p20.stage == 2);
  CHECK(p20.fade == 0.0);
  CHECK(p20.decoupled);
  CHECK(phase_for_epoch(25, c).fade == doctest::Approx(0.5));
  CHECK(phase_for_epoch(30, c).fade == 1.0);
  CHECK(phase_for_epoch(40, c).stage == 3);
  CHECK(phase_for_epoch(60, c).stage == 4);
  CHECK(phase_for_epoch(99, c).decoupled);
  auto p100 = phase_for_epoch(100, c);
  CHECK(p100.stage == 4);
  CHECK(!p100.decoupled);
  CHECK(phase_for_step(20, 5, 10, c).fade == doctest::Approx(0.05));
  CHECK_THROWS_AS(phase_for_epoch(200, c), ContractError);
  CHECK_THROWS_AS(phase_for_epoch(-1, c), ContractError);

  c.task_decoupling = false;
  CHECK(!phase_for_epoch(0, c).decoupled);
  c.epochs_per_phase = 0;
  CHECK(phase_for_epoch(0, c).stage == 4);
}

TEST_CASE("phase schedule is monotone") {
  TrainConfig c;
  PhaseState prev = phase_for_epoch(0, c);
  for (int64_t e = 0; e < c.epochs_total; ++e) {
    for (int64_t s = 0; s < 4; ++s) {
      auto p = phase_for_step(e, s, 4, c);
      CHECK(p.stage >= prev.stage);
      if (p.stage == prev.stage) CHECK(p.fade >= prev.fade);
      CHECK((prev.decoupled || !p.decoupled));
      prev = p;
    }
  }
}

TEST_CASE("train config validation") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  auto bad = [](auto edit) {
    TrainConfig c;
    edit(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.epochs_total = 0; });
  bad([](TrainConfig& c) { c.epochs_per_phase = 70; });
  bad([](TrainConfig& c) { c.decoupling_lift_epoch = 40; });
  bad([](TrainConfig& c) { c.decoupling_lift_epoch = 300; });
  bad([](TrainConfig& c) { c.fade_fraction = 0.0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.p_skip = 1.5; });
  bad([](TrainConfig& c) { c.weights.alpha = -1; });
}

TEST_CASE("lift monitor reports a plateau") {
  LiftMonitor m(2, 2, 0.01);
  CHECK(!m.observe(1.0));
  CHECK(!m.observe(1.0));  // first window
  CHECK(!m.observe(0.5));
  CHECK(!m.observe(0.5));  // improving
  CHECK(!m.observe(0.5));
  CHECK(!m.observe(0.5));  // stale 1
  CHECK(!m.observe(0.5));
  CHECK(m.observe(0.5));  // stale 2
  CHECK(m.observe(10.0));
  LiftMonitor r(2, 2, 0.01);
  r.restore(m.state());
  CHECK(r.converged());
}

TEST_CASE("batches are deterministic per step") {
  auto t = make_trainer();
  auto p = pool();
  auto a = t.make_batch(p, 4), b = t.make_batch(p, 4), c = t.make_batch(p, 5);
  CHECK(testing_util::bit_equal(a.images, b.images));
  CHECK(testing_util::bit_equal(a.tamper_masks, b.tamper_masks));
  CHECK(testing_util::bit_equal(a.donors, b.donors));
  CHECK(!torch::equal(a.tamper_masks, c.tamper_masks));
  CHECK((a.images.sizes() == std::vector<int64_t>{2, 3, 32, 32}));
  CHECK(a.plans.size() == 2);
}

TEST_CASE("decoupled updates are isolated") {
  auto t = make_trainer();
  auto p = pool();
  auto batch = t.make_batch(p, 0);
  auto& m = t.model();
  const auto ver0 = hash_tensors(m->verifier_parameters());
  const auto gen0 = hash_tensors(m->generator_parameters());

  GeneratorPass pass;
  auto report = t.update_generator_decoupled(batch, stage4(true), pass);
  CHECK(hash_tensors(m->verifier_parameters()) == ver0);
  const auto gen1 = hash_tensors(m->generator_parameters());
  CHECK(gen1 != gen0);
  for (const auto& w : m->verifier_parameters()) CHECK((!w.grad().defined() || w.grad().abs().sum().item<double>() == 0.0));
  CHECK(report.losses.l_cls == 0.0);

  t.update_verifier_decoupled(pass.attacked, pass.ground_truth);
  CHECK(hash_tensors(m->generator_parameters()) == gen1);
  CHECK(hash_tensors(m->verifier_parameters()) != ver0);
}

TEST_CASE("coupled step updates every network") {
  auto tc = tiny_train_config();
  tc.p_skip = 0.0;
  auto t = make_trainer(tc);
  auto& m = t.model();
  auto batch = t.make_batch(pool(), 0);
  const auto enc = hash_module(*m->encoder), dec = hash_module(*m->decoder), ver = hash_module(*m->verifier);
  const auto dci = hash_module(*m->disc_immunized), dcr = hash_module(*m->disc_recovered);
  auto report = t.step_coupled(batch, stage4(false));
  CHECK(hash_module(*m->encoder) != enc);
  CHECK(hash_module(*m->decoder) != dec);
  CHECK(hash_module(*m->verifier) != ver);
  CHECK(hash_module(*m->disc_immunized) != dci);
  CHECK(hash_module(*m->disc_recovered) != dcr);
  CHECK(report.losses.l_cls > 0.0);
}

TEST_CASE("reported parts reproduce the applied objective") {
  auto t = make_trainer();
  auto p = pool();
  for (bool decoupled : {true, false}) {
    for (int64_t s = 0; s < 3; ++s) {
      auto r = t.step(t.make_batch(p, s), stage4(decoupled));
      CHECK(std::abs(loss_total(r.losses, t.config().weights, decoupled) - r.applied_objective) <= 1e-6);
      CHECK(std::abs(r.losses.l_total - r.applied_objective) <= 1e-6);
    }
  }
  PhaseState s2;
  s2.stage = 2;
  s2.fade = 0.3;
  s2.decoupled = true;
  auto r = t.step(t.make_batch(p, 7), s2);
  CHECK(std::abs(loss_total(r.losses, t.config().weights, true) - r.applied_objective) <= 1e-6);
}

TEST_CASE("skip probability one gives an untampered ground truth") {
  auto tc = tiny_train_config();
  tc.p_skip = 1.0;
  auto t = make_trainer(tc);
  for (int64_t s = 0; s < 3; ++s) {
    GeneratorPass pass;
    t.update_generator_decoupled(t.make_batch(pool(), s), stage4(true), pass);
    CHECK(pass.ground_truth.sum().item<double>() == 0.0);
  }
}

TEST_CASE("steps refuse the wrong phase") {
  auto t = make_trainer();
  auto batch = t.make_batch(pool(), 0);
  CHECK_THROWS_AS(t.step_coupled(batch, stage4(true)), ContractError);
  CHECK_THROWS_AS(t.step_decoupled(batch, stage4(false)), ContractError);
}

TEST_CASE("training walks every stage and is deterministic") {
  auto p = pool();
  auto d1 = testing_util::scratch_dir("train_a"), d2 = testing_util::scratch_dir("train_b");
  auto t1 = make_trainer();
  auto r1 = train(t1, p, {d1, "h", std::nullopt, -1, nullptr});
  auto t2 = make_trainer();
  auto r2 = train(t2, p, {d2, "h", std::nullopt, -1, nullptr});
  CHECK(r1.steps_run == 12);
  CHECK(r1.next_step == 12);
  CHECK(r1.last_phase.stage == 4);
  CHECK(!r1.last_phase.decoupled);
  CHECK(read_file(r1.log_path) == read_file(r2.log_path));
  CHECK(hash_module(*t1.model()) == hash_module(*t2.model()));
  for (const char* name : {"stage1_end.ckpt", "stage2_end.ckpt", "stage3_end.ckpt", "final.ckpt"}) {
    CHECK(std::filesystem::exists(d1 / name));
  }
  auto meta = read_checkpoint_meta(d1 / "stage2_end.ckpt");
  CHECK(meta.phase.stage == 2);
  CHECK(meta.next_step == 6);

  std::istringstream log(read_file(r1.log_path));
  std::string line;
  std::getline(log, line);
  CHECK(line == "# config_hash=h");
  std::getline(log, line);
  CHECK(line.rfind("step,epoch,stage,fade,decoupled,l_cls", 0) == 0);
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 12);
}

TEST_CASE("resume reproduces an uninterrupted run") {
  auto p = pool();
  auto full = testing_util::scratch_dir("resume_full"), part = testing_util::scratch_dir("resume_part");
  auto t1 = make_trainer();
  auto r1 = train(t1, p, {full, "h", std::nullopt, -1, nullptr});

  auto t2 = make_trainer();
  auto first = train(t2, p, {part, "h", std::nullopt, 7, nullptr});
  CHECK(first.steps_run == 7);
  auto meta = read_checkpoint_meta(part / "final.ckpt");
  CHECK(meta.next_step == 7);

  auto t3 = make_trainer();
  auto second = train(t3, p, {part, "h", part / "final.ckpt", -1, nullptr});
  CHECK(second.steps_run == 5);
  CHECK(second.last_phase == r1.last_phase);
  CHECK(hash_module(*t3.model()) == hash_module(*t1.model()));
  CHECK(read_file(second.log_path) == read_file(r1.log_path));
}

TEST_CASE("non-finite losses abort training") {
  auto p = pool();
  p[0].fill_(std::numeric_limits<float>::quiet_NaN());
  p[1].fill_(std::numeric_limits<float>::quiet_NaN());
  auto tc = tiny_train_config();
  tc.p_skip = 1.0;
  auto t = make_trainer(tc);
  auto dir = testing_util::scratch_dir("train_nan");
  CHECK_THROWS_AS(train(t, p, {dir, "h", std::nullopt, -1, nullptr}), TrainingError);
}
