#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "umspu/numerics.hpp"
#include "umspu/synth.hpp"

using namespace umspu;
using num::kTwoPi;

namespace {

/// Independent curl oracle: literal valid-mode 2x2 correlation with the
/// fixed kernels, no shortcuts shared with the implementation.
long brute_force_curl_count(const GradientLabelPair& labels) {
  const int kx[2][2] = {{1, 1}, {0, 0}};
  const int ky[2][2] = {{1, 0}, {1, 0}};
  const int h = labels.height(), w = labels.width();
  long count = 0;
  for (int i = 0; i + 1 < h; ++i) {
    for (int j = 0; j + 1 < w; ++j) {
      int fx = 0, fy = 0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          fx += kx[a][b] * labels.gx.at(i + a, j + b);
          fy += ky[a][b] * labels.gy.at(i + a, j + b);
        }
      }
      if (std::abs(fx) == 2 || std::abs(fy) == 2) ++count;
    }
  }
  return count;
}

synth::SynthConfig small_cfg(uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.sizes = {64, 128, 256, 512};
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("detect_curl") {
  SUBCASE("all-zero labels have no curl") {
    GradientLabelPair labels{RasterI8(16, 16, 0), RasterI8(16, 16, 0)};
    auto rep = num::detect_curl(labels);
    CHECK(rep.n_curl == 0);
    CHECK(rep.ratio == 0.0);
  }

  SUBCASE("two horizontally adjacent +1 in gx trigger one curl point") {
    GradientLabelPair labels{RasterI8(8, 8, 0), RasterI8(8, 8, 0)};
    labels.gx.at(3, 3) = 1;
    labels.gx.at(3, 4) = 1;
    auto rep = num::detect_curl(labels);
    CHECK(rep.n_curl == 1);
    CHECK(rep.curl_mask.at(3, 3) == 1);
    CHECK(rep.n_gradient == 2);
    CHECK(rep.ratio == doctest::Approx(0.5));
  }

  SUBCASE("random labels match the brute-force window oracle") {
    Rng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
      auto labels = testutil::random_label_pair(rng.uniform_int(4, 40),
                                                rng.uniform_int(4, 40), rng);
      auto report = num::detect_curl(labels);
      CHECK(report.n_curl == brute_force_curl_count(labels));
    }
  }

  SUBCASE("ground-truth labels from the generator are curl-free") {
    auto cfg = small_cfg(5);
    Rng rng(5);
    for (int rep = 0; rep < 10; ++rep) {
      RasterF32 psi = synth::gen_unwrapped_phase(64, 2 + rep, cfg, rng);
      auto labels = synth::gradient_labels(num::wrap(psi).k);
      CHECK(num::detect_curl(labels).ratio == 0.0);
    }
  }
}

TEST_CASE("dct_poisson_solve") {
  SUBCASE("zero gradients give the zero field") {
    GradientLabelPair labels{RasterI8(16, 16, 0), RasterI8(16, 16, 0)};
    RasterF32 sol = num::dct_poisson_solve(labels);
    for (size_t i = 0; i < sol.size(); ++i) CHECK(std::abs(sol[i]) < 1e-9);
  }

  SUBCASE("column step is reproduced exactly") {
    const int n = 32;
    GradientLabelPair labels{RasterI8(n, n, 0), RasterI8(n, n, 0)};
    for (int i = 0; i < n; ++i) labels.gx.at(i, 12) = 1;
    RasterF32 sol = num::dct_poisson_solve(labels);
    const double anchor = sol.at(0, 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const long got = std::lround(sol.at(i, j) - anchor);
        CHECK(got == (j >= 13 ? 1 : 0));
      }
    }
  }

  SUBCASE("generator ground truth is recovered at every pixel") {
    auto cfg = small_cfg(6);
    Rng rng(6);
    for (int rep = 0; rep < 8; ++rep) {
      const int size = rep % 2 == 0 ? 64 : 128;
      RasterF32 psi = synth::gen_unwrapped_phase(size, 3 + rep, cfg, rng);
      RasterI32 k = num::wrap(psi).k;
      auto labels = synth::gradient_labels(k);
      RasterF32 sol = num::dct_poisson_solve(labels);
      RasterI32 rec = num::round_and_anchor(sol, &k);
      long wrong = 0;
      for (size_t i = 0; i < k.size(); ++i) {
        if (rec[i] != k[i]) ++wrong;
      }
      CHECK(wrong == 0);
    }
  }

  SUBCASE("linearity within 1e-4") {
    Rng rng(7);
    const int n = 48;
    RasterF32 g1x = testutil::random_raster(n, n, rng, -1, 1);
    RasterF32 g1y = testutil::random_raster(n, n, rng, -1, 1);
    RasterF32 g2x = testutil::random_raster(n, n, rng, -1, 1);
    RasterF32 g2y = testutil::random_raster(n, n, rng, -1, 1);
    RasterF32 sx(n, n), sy(n, n);
    for (size_t i = 0; i < sx.size(); ++i) {
      sx[i] = g1x[i] + g2x[i];
      sy[i] = g1y[i] + g2y[i];
    }
    RasterF32 a = num::dct_poisson_solve(g1x, g1y);
    RasterF32 b = num::dct_poisson_solve(g2x, g2y);
    RasterF32 sum = num::dct_poisson_solve(sx, sy);
    for (size_t i = 0; i < sum.size(); ++i) {
      CHECK(std::abs(sum[i] - (a[i] + b[i])) < 1e-4);
    }
  }
}

TEST_CASE("round_and_anchor") {
  SUBCASE("identity on integral fields without reference") {
    RasterF32 kf(4, 4);
    for (size_t i = 0; i < kf.size(); ++i) kf[i] = static_cast<float>(static_cast<int>(i % 5) - 2);
    RasterI32 out = num::round_and_anchor(kf);
    for (size_t i = 0; i < kf.size(); ++i) CHECK(out[i] == static_cast<int>(kf[i]));
  }

  SUBCASE("constant offset to the reference is removed") {
    RasterF32 kf(4, 4, 2.0f);
    RasterI32 ref(4, 4, 5);
    RasterI32 out = num::round_and_anchor(kf, &ref);
    for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 5);
  }

  SUBCASE("anchor constant is optimal under a local scan") {
    Rng rng(8);
    for (int rep = 0; rep < 20; ++rep) {
      RasterF32 kf = testutil::random_raster(8, 8, rng, -6.0f, 6.0f);
      RasterI32 ref(8, 8);
      for (size_t i = 0; i < ref.size(); ++i) ref[i] = rng.uniform_int(-5, 5);
      RasterI32 anchored = num::round_and_anchor(kf, &ref);

      auto rmse_int = [&](int extra) {
        double acc = 0.0;
        for (size_t i = 0; i < ref.size(); ++i) {
          const double d = anchored[i] + extra - ref[i];
          acc += d * d;
        }
        return acc;
      };
      const double best = rmse_int(0);
      for (int extra = -2; extra <= 2; ++extra) {
        CHECK(best <= rmse_int(extra) + 1e-9);
      }
    }
  }
}

TEST_CASE("reconstruct_phase") {
  SUBCASE("k = 0 returns phi") {
    RasterF32 phi(4, 4, 1.25f);
    RasterI32 k(4, 4, 0);
    CHECK(num::reconstruct_phase(phi, k) == phi);
  }
  SUBCASE("phi = pi, k = 1 gives 3pi") {
    RasterF32 phi(2, 2, static_cast<float>(M_PI));
    RasterI32 k(2, 2, 1);
    RasterF32 psi = num::reconstruct_phase(phi, k);
    CHECK(psi.at(0, 0) == doctest::Approx(3.0 * M_PI));
  }
  SUBCASE("generator identity") {
    auto cfg = small_cfg(9);
    Rng rng(9);
    RasterF32 psi = synth::gen_unwrapped_phase(128, 7, cfg, rng);
    auto wr = num::wrap(psi);
    RasterF32 back = num::reconstruct_phase(wr.phi, wr.k);
    CHECK(num::rmse(back, psi, false) < 1e-4);
  }
  SUBCASE("shape mismatch throws") {
    RasterF32 phi(4, 4);
    RasterI32 k(4, 5, 0);
    CHECK_THROWS_AS(num::reconstruct_phase(phi, k), ValidationError);
  }
}

TEST_CASE("itoh_unwrap_oracle") {
  SUBCASE("constant input is unchanged") {
    RasterF32 phi(8, 8, 0.7f);
    CHECK(num::itoh_unwrap_oracle(phi) == phi);
  }
  SUBCASE("clean generated sample matches psi up to a global 2pi multiple") {
    auto cfg = small_cfg(10);
    Rng rng(10);
    RasterF32 psi = synth::gen_unwrapped_phase(64, 6, cfg, rng);
    RasterF32 phi = num::wrap(psi).phi;
    RasterF32 un = num::itoh_unwrap_oracle(phi);
    CHECK(num::rmse(un, psi, true) < 1e-4);
  }
  SUBCASE("single wrap on a ramp is removed") {
    RasterF32 psi(2, 64);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 64; ++j) psi.at(i, j) = static_cast<float>(0.15 * j);
    }
    RasterF32 phi = num::wrap(psi).phi;
    RasterF32 un = num::itoh_unwrap_oracle(phi);
    CHECK(num::rmse(un, psi, true) < 1e-5);
  }
}

TEST_CASE("rmse") {
  RasterF32 a(4, 4, 1.0f);
  SUBCASE("identical inputs give 0") { CHECK(num::rmse(a, a, false) == 0.0); }
  SUBCASE("2pi offset vanishes only with piston correction") {
    RasterF32 b(4, 4, static_cast<float>(1.0 + kTwoPi));
    CHECK(num::rmse(b, a, true) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(num::rmse(b, a, false) == doctest::Approx(kTwoPi));
  }
  SUBCASE("non-2pi constant offset stays") {
    RasterF32 b(4, 4, 2.0f);
    CHECK(num::rmse(b, a, true) == doctest::Approx(1.0));
    CHECK(num::rmse(b, a, false) == doctest::Approx(1.0));
  }
}
