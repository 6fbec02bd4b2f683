#include <doctest.h>

#include "test_util.hpp"
#include "umspu/evalbench.hpp"

using namespace umspu;

namespace {

io::DatasetManifest small_dataset(const std::filesystem::path& dir, uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.sizes = {64, 128};
  cfg.fringe_targets = {{4, 3}, {10, 3}};
  cfg.samples_per_config = 5;
  cfg.snr_db_range = {{8.0, 16.0}};
  cfg.seed = seed;
  return synth::build_dataset(cfg, dir);
}

}  // namespace

TEST_CASE("oracle bypass yields exactly zero RMSE in the resolution bench") {
  testutil::TempDir tmp("benchds");
  auto manifest = small_dataset(tmp.path, 31);
  auto report = bench::bench_resolutions(manifest, bench::make_oracle_predictor(), "test");
  CHECK_FALSE(report.rows.empty());
  for (const auto& row : report.rows) {
    CHECK(row.rmse_pc == 0.0);
    CHECK(row.rmse_raw == 0.0);
    CHECK(row.curl_ratio == 0.0);
  }
  for (const auto& [label, stats] : report.buckets) {
    CHECK(stats.mean == 0.0);
    CHECK(stats.peak_to_peak == 0.0);
  }
  // report carries the full-scale reference context and desk-scale protocol
  auto j = report.to_json();
  CHECK(j.contains("full_scale_reference"));
  CHECK(j["full_scale_reference"]["resolution_rmse"]["256"] == doctest::Approx(0.2954));
  CHECK(j["full_scale_reference"]["cost_1024"]["inference_ms"] == doctest::Approx(22.66));
}

TEST_CASE("density bench buckets rows in order") {
  testutil::TempDir tmp("densds");
  auto manifest = small_dataset(tmp.path, 32);
  auto report = bench::bench_density(manifest, bench::make_oracle_predictor(),
                                     {{4, 3}, {10, 3}}, "test");
  REQUIRE(report.buckets.size() == 2);
  CHECK(report.buckets[0].first.find("4") == 0);
  CHECK(report.buckets[1].first.find("10") == 0);
  for (const auto& [label, stats] : report.buckets) {
    if (stats.count > 0) CHECK(stats.mean == 0.0);
  }
  auto j = report.to_json();
  CHECK(j["full_scale_reference"]["density_rmse"]["70"] == doctest::Approx(0.3728));
}

TEST_CASE("zero-fringe bucket: all-zero predictions give zero RMSE") {
  testutil::TempDir tmp("zfds");
  synth::SynthConfig cfg;
  cfg.sizes = {64};
  cfg.fringe_targets = {{0, 0}};
  cfg.samples_per_config = 4;
  cfg.snr_db_range.reset();
  cfg.seed = 33;
  auto manifest = synth::build_dataset(cfg, tmp.path);

  bench::Predictor all_zero = [](const bench::PredictorCtx& ctx) {
    return GradientLabelPair{RasterI8(ctx.phi.height(), ctx.phi.width(), 0),
                             RasterI8(ctx.phi.height(), ctx.phi.width(), 0)};
  };
  auto report = bench::bench_density(manifest, all_zero, {{0, 0}}, "test");
  for (const auto& row : report.rows) CHECK(row.rmse_pc == doctest::Approx(0.0));
}

TEST_CASE("tile_and_stitch") {
  testutil::TempDir tmp("tileds");
  synth::SynthConfig cfg;
  cfg.sizes = {128};
  cfg.fringe_targets = {{6, 2}};
  cfg.samples_per_config = 1;
  cfg.snr_db_range.reset();
  cfg.seed = 34;
  Rng rng = Rng::for_sample(34, 0);
  auto sample = synth::make_sample(128, 6, 2, cfg, rng);

  SUBCASE("ground-truth tiles equal the full-image ground-truth unwrap exactly") {
    auto stitched =
        bench::tile_and_stitch(sample.phi, 32, bench::make_oracle_predictor(), &sample.k);
    auto full = unwrap_from_labels(sample.phi, sample.labels);
    const int32_t ds = stitched.k.at(0, 0);
    for (int i = 0; i < 128; ++i) {
      for (int j = 0; j < 128; ++j) {
        CHECK(stitched.k.at(i, j) - ds == full.k.at(i, j) - full.k.at(0, 0));
      }
    }
  }

  SUBCASE("single tile equals the direct path") {
    auto stitched =
        bench::tile_and_stitch(sample.phi, 128, bench::make_oracle_predictor(), &sample.k);
    auto direct = unwrap_from_labels(sample.phi, sample.labels);
    for (size_t i = 0; i < stitched.k.size(); ++i) {
      CHECK(stitched.k[i] - stitched.k[0] == direct.k[i] - direct.k[0]);
    }
  }

  SUBCASE("clean ramp stitches with zero seam discontinuity") {
    RasterF32 psi(64, 64);
    for (int i = 0; i < 64; ++i) {
      for (int j = 0; j < 64; ++j) psi.at(i, j) = static_cast<float>(0.35 * j + 0.1 * i);
    }
    auto wr = num::wrap(psi);
    auto stitched = bench::tile_and_stitch(wr.phi, 32, bench::make_oracle_predictor(), &wr.k);
    // seam scan: reconstructed phase must be Itoh-continuous across tile seams
    for (int i = 0; i < 64; ++i) {
      CHECK(std::abs(stitched.psi.at(i, 32) - stitched.psi.at(i, 31)) < M_PI);
    }
    for (int j = 0; j < 64; ++j) {
      CHECK(std::abs(stitched.psi.at(32, j) - stitched.psi.at(31, j)) < M_PI);
    }
    CHECK(num::rmse(stitched.psi, psi, true) < 1e-4);
  }

  SUBCASE("indivisible tile size is rejected") {
    CHECK_THROWS_AS(bench::tile_and_stitch(sample.phi, 48, bench::make_oracle_predictor()),
                    ValidationError);
  }
}

TEST_CASE("equivariance sweeps") {
  SUBCASE("translation of a constant field: zero RMSE, zero spread") {
    RasterF32 psi(96, 160, 0.37f);
    auto report = bench::equivariance_translation(psi, 64, 20,
                                                  bench::make_oracle_predictor());
    REQUIRE(report.buckets.size() == 1);
    const auto& stats = report.buckets[0].second;
    CHECK(stats.count == 20);
    CHECK(stats.mean == 0.0);
    CHECK(stats.stddev == 0.0);
    CHECK(stats.peak_to_peak == 0.0);
  }

  SUBCASE("50-step desk run produces complete statistics") {
    RasterF32 psi = bench::make_equivariance_field(320, 5, 99);
    auto report =
        bench::equivariance_translation(psi, 128, 50, bench::make_oracle_predictor());
    const auto& stats = report.buckets[0].second;
    CHECK(stats.count == 50);
    CHECK(stats.mean == 0.0);  // oracle bypass
    CHECK(report.meta["window"] == 128);
    CHECK(report.meta["steps"] == 50);
  }

  SUBCASE("rotation sweep: 3-degree steps make 120 evaluations; 0 degrees matches direct") {
    RasterF32 psi = bench::make_equivariance_field(160, 3, 17);
    auto report = bench::equivariance_rotation(psi, 64, 3, bench::make_oracle_predictor());
    CHECK(report.meta["evaluations"] == 120);
    CHECK(report.buckets[0].second.count == 120);
    CHECK(report.buckets[0].second.mean == 0.0);  // oracle stays exact under rotation
  }
}

TEST_CASE("cost report") {
  nn::ModelConfig cfg;
  cfg.stages = 3;
  cfg.channels = {4, 8, 16};
  cfg.msd_pairs = {{1, 1}};
  cfg.r_min = 32;
  cfg.r_max = 128;
  nn::MsdNet net(cfg, 2);
  nn::FusedNet fused = reparameterize(net);

  auto report = bench::cost_report(net, fused, 64, 5);
  CHECK(report.extra["fused"]["params"].get<size_t>() <
        report.extra["unfused"]["params"].get<size_t>());
  CHECK(report.extra["fused"]["median_ms"].get<double>() > 0.0);

  // doubling H and W quadruples the analytic MAC count
  CHECK(net.mac_count(128, 128) == 4 * net.mac_count(64, 64));
  CHECK(fused.mac_count(256, 256) == 4 * fused.mac_count(128, 128));
}
