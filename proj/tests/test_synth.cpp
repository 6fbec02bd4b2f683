#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "test_util.hpp"
#include "umspu/synth.hpp"

using namespace umspu;
using num::kTwoPi;

TEST_CASE("wrap: fixed points and the phase identity") {
  SUBCASE("psi = 0") {
    RasterF32 psi(2, 2, 0.0f);
    auto r = num::wrap(psi);
    CHECK(r.phi.at(0, 0) == 0.0f);
    CHECK(r.k.at(0, 0) == 0);
  }
  SUBCASE("psi = 3pi wraps to pi with k = 1 (exact in double)") {
    const double phi = num::wrap_scalar(3.0 * M_PI);
    CHECK(phi == doctest::Approx(M_PI).epsilon(1e-12));
    const long k = std::lround((3.0 * M_PI - phi) / num::kTwoPi);
    CHECK(k == 1);
  }
  SUBCASE("psi = 2.5pi wraps to pi/2 with k = 1") {
    RasterF32 psi(2, 2, static_cast<float>(2.5 * M_PI));
    auto r = num::wrap(psi);
    CHECK(r.phi.at(0, 0) == doctest::Approx(0.5 * M_PI).epsilon(1e-6));
    CHECK(r.k.at(0, 0) == 1);
  }
  SUBCASE("identity psi = phi + 2 pi k on random fields") {
    Rng rng(3);
    RasterF32 psi = testutil::random_raster(32, 48, rng, -200.0f, 200.0f);
    auto r = num::wrap(psi);
    double max_err = 0.0;
    for (size_t i = 0; i < psi.size(); ++i) {
      CHECK(r.phi[i] > -M_PI);
      CHECK(r.phi[i] <= M_PI + 1e-7);
      max_err = std::max(max_err,
                         std::abs(static_cast<double>(psi[i]) - (r.phi[i] + kTwoPi * r.k[i])));
    }
    CHECK(max_err < 1e-4);
  }
}

TEST_CASE("gen_unwrapped_phase hits the requested regime") {
  synth::SynthConfig cfg;
  cfg.sizes = {64, 128, 256};
  cfg.seed = 11;

  SUBCASE("zero fringe target with zero Gaussians gives a constant wrap count") {
    synth::SynthConfig flat = cfg;
    flat.gaussian_count_range = {0, 0};
    Rng rng(5);
    RasterF32 psi = synth::gen_unwrapped_phase(64, 0, flat, rng);
    auto r = num::wrap(psi);
    for (size_t i = 0; i < r.k.size(); ++i) CHECK(r.k[i] == r.k[0]);
    CHECK(synth::measure_fringe_count(psi) == 0);
  }

  SUBCASE("fringe target 10 on 256x256 spans about 10 cycles") {
    Rng rng(6);
    RasterF32 psi = synth::gen_unwrapped_phase(256, 10, cfg, rng);
    const int measured = synth::measure_fringe_count(psi);
    CHECK(measured >= 7);
    CHECK(measured <= 13);
  }

  SUBCASE("neighbour steps stay below pi (exhaustive scan)") {
    Rng rng(7);
    for (int rep = 0; rep < 5; ++rep) {
      const int size = rep % 2 == 0 ? 64 : 128;
      RasterF32 psi = synth::gen_unwrapped_phase(size, 6, cfg, rng);
      double max_step = 0.0;
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          if (j + 1 < size) {
            max_step = std::max(max_step,
                                std::abs(double(psi.at(i, j + 1)) - psi.at(i, j)));
          }
          if (i + 1 < size) {
            max_step = std::max(max_step,
                                std::abs(double(psi.at(i + 1, j)) - psi.at(i, j)));
          }
        }
      }
      CHECK(max_step < M_PI);
    }
  }

  SUBCASE("size outside the configured set is rejected") {
    Rng rng(8);
    CHECK_THROWS_AS(synth::gen_unwrapped_phase(96, 4, cfg, rng), ValidationError);
  }
}

TEST_CASE("add_noise") {
  Rng rng(21);

  SUBCASE("no-noise sentinel passes through") {
    RasterF32 phi = testutil::random_raster(16, 16, rng, -3.0f, 3.0f);
    RasterF32 out = synth::add_noise(phi, std::numeric_limits<double>::infinity(), rng);
    CHECK(out == phi);
  }

  SUBCASE("snr 0 dB adds noise with variance close to var(phi)") {
    // Small-amplitude field keeps the re-wrap inactive so the added noise is
    // directly measurable.
    RasterF32 phi(512, 512);
    Rng frng(22);
    for (size_t i = 0; i < phi.size(); ++i) {
      phi[i] = static_cast<float>(frng.uniform(-0.05, 0.05));
    }
    double mean = 0.0;
    for (size_t i = 0; i < phi.size(); ++i) mean += phi[i];
    mean /= phi.size();
    double var_phi = 0.0;
    for (size_t i = 0; i < phi.size(); ++i) var_phi += (phi[i] - mean) * (phi[i] - mean);
    var_phi /= phi.size();

    RasterF32 out = synth::add_noise(phi, 0.0, rng);
    double nmean = 0.0;
    for (size_t i = 0; i < phi.size(); ++i) nmean += out[i] - phi[i];
    nmean /= phi.size();
    double var_n = 0.0;
    for (size_t i = 0; i < phi.size(); ++i) {
      const double d = (out[i] - phi[i]) - nmean;
      var_n += d * d;
    }
    var_n /= phi.size();
    CHECK(var_n / var_phi == doctest::Approx(1.0).epsilon(0.05));
  }

  SUBCASE("output stays in (-pi, pi]") {
    RasterF32 phi = testutil::random_raster(64, 64, rng, -3.1f, 3.1f);
    RasterF32 out = synth::add_noise(phi, -2.0, rng);
    for (size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i] > -M_PI);
      CHECK(out[i] <= M_PI + 1e-7);
    }
  }
}

TEST_CASE("gradient_labels") {
  SUBCASE("constant wrap count gives all-zero labels") {
    RasterI32 k(8, 8, 3);
    auto labels = synth::gradient_labels(k);
    for (size_t i = 0; i < labels.gx.size(); ++i) {
      CHECK(labels.gx[i] == 0);
      CHECK(labels.gy[i] == 0);
    }
  }

  SUBCASE("column step produces a single +1 column") {
    RasterI32 k(256, 256);
    for (int i = 0; i < 256; ++i) {
      for (int j = 0; j < 256; ++j) k.at(i, j) = j < 128 ? 0 : 1;
    }
    auto labels = synth::gradient_labels(k);
    for (int i = 0; i < 256; ++i) {
      for (int j = 0; j < 256; ++j) {
        CHECK(labels.gx.at(i, j) == (j == 127 ? 1 : 0));
        CHECK(labels.gy.at(i, j) == 0);
      }
    }
  }

  SUBCASE("boundary convention: last gx column and last gy row are masked zeros") {
    Rng rng(9);
    synth::SynthConfig cfg;
    cfg.sizes = {64};
    RasterF32 psi = synth::gen_unwrapped_phase(64, 5, cfg, rng);
    auto labels = synth::gradient_labels(num::wrap(psi).k);
    labels.validate();
    auto mx = labels.mask_x();
    auto my = labels.mask_y();
    for (int i = 0; i < 64; ++i) CHECK(mx.at(i, 63) == 0);
    for (int j = 0; j < 64; ++j) CHECK(my.at(63, j) == 0);
  }

  SUBCASE("prefix-sum oracle reconstructs the wrap count up to the anchor") {
    Rng rng(10);
    synth::SynthConfig cfg;
    cfg.sizes = {64};
    RasterF32 psi = synth::gen_unwrapped_phase(64, 8, cfg, rng);
    RasterI32 k = num::wrap(psi).k;
    auto labels = synth::gradient_labels(k);
    // integrate: first column via gy, then rows via gx
    RasterI32 rec(64, 64, 0);
    for (int i = 1; i < 64; ++i) rec.at(i, 0) = rec.at(i - 1, 0) + labels.gy.at(i - 1, 0);
    for (int i = 0; i < 64; ++i) {
      for (int j = 1; j < 64; ++j) rec.at(i, j) = rec.at(i, j - 1) + labels.gx.at(i, j - 1);
    }
    for (int i = 0; i < 64; ++i) {
      for (int j = 0; j < 64; ++j) {
        CHECK(rec.at(i, j) == k.at(i, j) - k.at(0, 0));
      }
    }
  }

  SUBCASE("|delta k| >= 2 is rejected") {
    RasterI32 k(4, 4, 0);
    k.at(1, 2) = 5;
    CHECK_THROWS_AS(synth::gradient_labels(k), ValidationError);
  }
}

TEST_CASE("build_dataset: splits, determinism, coverage") {
  synth::SynthConfig cfg;
  cfg.sizes = {64};
  cfg.fringe_targets = {{4, 2}};
  cfg.samples_per_config = 10;
  cfg.snr_db_range = {{6.0, 14.0}};
  cfg.seed = 77;

  SUBCASE("10 samples split 8/1/1") {
    testutil::TempDir tmp("ds");
    auto m = synth::build_dataset(cfg, tmp.path);
    CHECK(m.samples.size() == 10);
    CHECK(m.by_split("train").size() == 8);
    CHECK(m.by_split("val").size() == 1);
    CHECK(m.by_split("test").size() == 1);
  }

  SUBCASE("same seed twice gives byte-identical rasters") {
    testutil::TempDir tmp1("ds1");
    testutil::TempDir tmp2("ds2");
    auto m1 = synth::build_dataset(cfg, tmp1.path);
    auto m2 = synth::build_dataset(cfg, tmp2.path);
    REQUIRE(m1.samples.size() == m2.samples.size());
    for (size_t i = 0; i < m1.samples.size(); ++i) {
      auto read_bytes = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
      };
      CHECK(read_bytes(tmp1.path / m1.samples[i].wrapped_path) ==
            read_bytes(tmp2.path / m2.samples[i].wrapped_path));
      CHECK(read_bytes(tmp1.path / m1.samples[i].label_gx_path) ==
            read_bytes(tmp2.path / m2.samples[i].label_gx_path));
    }
  }

  SUBCASE("all configured sizes appear") {
    synth::SynthConfig multi = cfg;
    multi.sizes = {64, 128, 256};
    multi.samples_per_config = 2;
    testutil::TempDir tmp("ds3");
    auto m = synth::build_dataset(multi, tmp.path);
    std::set<int> sizes;
    for (const auto& s : m.samples) sizes.insert(s.size);
    CHECK(sizes == std::set<int>{64, 128, 256});
  }

  SUBCASE("stored labels derive from the clean wrap count; fringe buckets hold") {
    testutil::TempDir tmp("ds4");
    synth::SynthConfig c = cfg;
    c.samples_per_config = 20;
    auto m = synth::build_dataset(c, tmp.path);
    int in_bucket = 0;
    for (const auto& rec : m.samples) {
      RasterF32 kf = io::read_raster_f32(tmp.path / rec.wrap_count_path);
      RasterI32 k = raster_cast<int32_t>(kf);
      auto labels = synth::gradient_labels(k);
      CHECK(io::read_raster_i8(tmp.path / rec.label_gx_path) == labels.gx);
      CHECK(io::read_raster_i8(tmp.path / rec.label_gy_path) == labels.gy);
      if (std::abs(rec.fringe_count - 4) <= 2) ++in_bucket;
    }
    CHECK(in_bucket >= static_cast<int>(0.95 * m.samples.size()));
  }
}
