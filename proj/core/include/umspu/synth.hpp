#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "umspu/field_io.hpp"
#include "umspu/labels.hpp"
#include "umspu/numerics.hpp"
#include "umspu/raster.hpp"
#include "umspu/rng.hpp"

namespace umspu::synth {

/// Recipe for the synthetic dataset: planar ramps plus random Gaussians,
/// wrapped with additive Gaussian noise, labelled from the clean wrap count.
struct SynthConfig {
  std::vector<int> sizes = {64, 128, 256};
  /// Variance-ratio SNR in dB drawn uniformly per sample; nullopt = no noise.
  std::optional<std::pair<double, double>> snr_db_range = {{4.0, 16.0}};
  /// (mean, tolerance) fringe buckets; per-sample target drawn uniformly in
  /// [mean - tol, mean + tol].
  std::vector<std::pair<int, int>> fringe_targets = {{4, 3}, {10, 3}, {16, 3}, {24, 3}};
  std::pair<int, int> gaussian_count_range = {2, 8};
  std::pair<double, double> gaussian_amp_range_rad = {5.0, 50.0};
  std::pair<double, double> gaussian_sigma_range_frac = {1.0 / 16.0, 0.5};
  int samples_per_config = 10;
  uint64_t seed = 0;

  void validate() const;
};

SynthConfig load_synth_config(const std::filesystem::path& json_path);
void save_synth_config(const SynthConfig& cfg, const std::filesystem::path& json_path);

/// Unwrapped phase: ramp a*x + b*y + c plus Gaussians, regenerated until the
/// max 4-neighbour |delta psi| is below pi. That bound keeps |delta k| <= 1
/// and rules out adjacent same-sign wrap fronts, so ground-truth labels are
/// always curl-free under the fixed-kernel detector. Throws after
/// max_retries failures.
RasterF32 gen_unwrapped_phase(int size, int fringe_target, const SynthConfig& cfg, Rng& rng,
                              int max_retries = 100);

/// Nearest-integer count of 2*pi cycles spanned by the field.
int measure_fringe_count(const RasterF32& psi);

/// Gaussian noise with variance var(phi) / 10^(snr_db/10), re-wrapped into
/// (-pi, pi]. +infinity passes the input through unchanged.
RasterF32 add_noise(const RasterF32& phi, double snr_db, Rng& rng);

/// Forward differences of the wrap count, masked at the boundary. Throws if
/// any 4-neighbour difference falls outside {-1, 0, +1}.
GradientLabelPair gradient_labels(const RasterI32& k);

/// Complete in-memory sample, before persistence.
struct Sample {
  RasterF32 psi;       // clean unwrapped phase
  RasterF32 phi;       // noisy wrapped phase (model input)
  RasterI32 k;         // clean wrap count
  GradientLabelPair labels;
  int fringe_target = 0;
  std::optional<double> snr_db;
};

Sample make_sample(int size, int fringe_bucket_mean, int fringe_bucket_tol,
                   const SynthConfig& cfg, Rng& rng);

/// Generates the full dataset under out_dir (rasters/ + manifest.json),
/// deterministically from cfg.seed, split 80/10/10.
io::DatasetManifest build_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace umspu::synth
