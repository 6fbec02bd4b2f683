#include <doctest.h>

#include <fstream>

#include "test_util.hpp"
#include "umspu/evalbench.hpp"
#include "umspu/trainer.hpp"

using namespace umspu;

namespace {

synth::SynthConfig toy_synth(uint64_t seed, int samples_per_config = 8) {
  synth::SynthConfig cfg;
  cfg.sizes = {32, 64};
  cfg.fringe_targets = {{3, 2}};
  cfg.samples_per_config = samples_per_config;
  cfg.snr_db_range = {{10.0, 20.0}};
  cfg.seed = seed;
  return cfg;
}

train::TrainConfig toy_train(uint64_t seed, int epochs) {
  train::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.learning_rate = 2e-3;
  cfg.eval_every = 0;
  cfg.checkpoint_every = 0;
  cfg.reserve_fraction = 0.1;
  cfg.model.stages = 3;
  cfg.model.channels = {4, 8, 16};
  cfg.model.msd_pairs = {{1, 1}, {2, 2}, {3, 3}};
  cfg.model.r_min = 32;
  cfg.model.r_max = 64;
  return cfg;
}

}  // namespace

TEST_CASE("training is deterministic for a fixed seed") {
  testutil::TempDir data("toyds");
  auto manifest = synth::build_dataset(toy_synth(404), data.path);

  testutil::TempDir run1("run1");
  testutil::TempDir run2("run2");
  auto r1 = train::train(manifest, toy_train(9, 1), run1.path);
  auto r2 = train::train(manifest, toy_train(9, 1), run2.path);
  REQUIRE(r1.history.size() == 1);
  REQUIRE(r2.history.size() == 1);
  CHECK(r1.history[0].mean_loss.total == r2.history[0].mean_loss.total);
  CHECK(r1.history[0].alpha == r2.history[0].alpha);
}

TEST_CASE("loss trend: median over seeds is non-increasing over 5 epochs") {
  testutil::TempDir data("trendds");
  auto manifest = synth::build_dataset(toy_synth(505, 20), data.path);

  std::vector<std::vector<double>> totals;
  for (uint64_t seed : {1u, 2u, 3u}) {
    testutil::TempDir run("trend");
    auto cfg = toy_train(seed, 5);
    cfg.learning_rate = 3e-3;
    auto res = train::train(manifest, cfg, run.path);
    std::vector<double> t;
    for (const auto& e : res.history) t.push_back(e.mean_loss.total);
    totals.push_back(std::move(t));
  }
  for (int epoch = 1; epoch < 5; ++epoch) {
    auto median_at = [&](int e) {
      std::vector<double> v = {totals[0][e], totals[1][e], totals[2][e]};
      std::sort(v.begin(), v.end());
      return v[1];
    };
    CHECK(median_at(epoch) <= median_at(epoch - 1) + 1e-9);
  }
}

TEST_CASE("checkpoint reload reproduces evaluation exactly") {
  testutil::TempDir data("ckds");
  auto manifest = synth::build_dataset(toy_synth(606), data.path);
  testutil::TempDir run("ckrun");
  auto res = train::train(manifest, toy_train(42, 1), run.path);

  io::Checkpoint ck = io::load_checkpoint(res.checkpoint_path);
  REQUIRE_FALSE(ck.fused);

  const auto* rec = manifest.by_split("test").at(0);
  RasterF32 phi = io::read_raster_f32(manifest.resolve(rec->wrapped_path));
  RasterI32 k = raster_cast<int32_t>(
      io::read_raster_f32(manifest.resolve(rec->wrap_count_path)));

  // In-memory net state is not available here; compare two loads instead,
  // plus the stored ensemble weights.
  io::Checkpoint ck2 = io::load_checkpoint(res.checkpoint_path);
  auto labels1 = predict_labels(*ck.net, phi, ck.state.alpha);
  auto labels2 = predict_labels(*ck2.net, phi, ck2.state.alpha);
  CHECK(labels1.gx == labels2.gx);
  CHECK(labels1.gy == labels2.gy);

  auto u1 = unwrap_from_labels(phi, std::move(labels1), &k);
  auto u2 = unwrap_from_labels(phi, std::move(labels2), &k);
  const double r1 = num::rmse(u1.psi, reference_phase(phi, k), true);
  const double r2 = num::rmse(u2.psi, reference_phase(phi, k), true);
  CHECK(r1 == r2);  // bit-identical
}

TEST_CASE("epoch log carries boosting state and loss assembly held on every batch") {
  testutil::TempDir data("logds");
  auto manifest = synth::build_dataset(toy_synth(707), data.path);
  testutil::TempDir run("logrun");
  auto cfg = toy_train(7, 2);
  cfg.eval_every = 2;
  auto res = train::train(manifest, cfg, run.path);

  REQUIRE(res.history.size() == 2);
  for (const auto& e : res.history) {
    double sum = 0.0;
    for (double a : e.alpha) {
      CHECK(a > 0.0);
      sum += a;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::isfinite(e.mean_loss.total));
    CHECK(e.mean_loss.total >= 0.0);
  }
  CHECK_FALSE(res.history.back().val_rmse_by_size.empty());

  std::ifstream log(run.path / "train_log.jsonl");
  REQUIRE(log.good());
  int lines = 0;
  std::string line;
  while (std::getline(log, line)) {
    if (!line.empty()) ++lines;
  }
  CHECK(lines == 2);
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
  testutil::TempDir data("divds");
  auto manifest = synth::build_dataset(toy_synth(808, 8), data.path);

  // An absurd learning rate drives the weights to overflow within a couple
  // of optimizer steps; the first non-finite loss must abort with
  // diagnostics.
  testutil::TempDir run("divrun");
  auto cfg = toy_train(3, 8);
  cfg.learning_rate = 1e38;
  CHECK_THROWS_AS(train::train(manifest, cfg, run.path), train::TrainingDiverged);
  CHECK(std::filesystem::exists(run.path / "diverged_batch.json"));
}

TEST_CASE("train config json round trip") {
  testutil::TempDir tmp("tcfg");
  train::TrainConfig cfg = toy_train(123, 7);
  cfg.class_weights = {1.0f, 10.0f, 10.0f};
  save_train_config(cfg, tmp.path / "t.json");
  train::TrainConfig back = train::load_train_config(tmp.path / "t.json");
  CHECK(back.epochs == 7);
  CHECK(back.seed == 123);
  CHECK(back.class_weights == cfg.class_weights);
  CHECK(back.model.channels == cfg.model.channels);
  CHECK(back.learning_rate == doctest::Approx(cfg.learning_rate));
}
