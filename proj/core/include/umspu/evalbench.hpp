#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "umspu/checkpoint.hpp"
#include "umspu/field_io.hpp"
#include "umspu/synth.hpp"
#include "umspu/unwrap.hpp"

namespace umspu::bench {

/// What a predictor may look at. Model predictors read only `phi`; the
/// oracle-bypass predictor reads the ground truth, validating the harness
/// independently of any model.
struct PredictorCtx {
  const RasterF32& phi;
  const GradientLabelPair* true_labels = nullptr;
  const RasterI32* true_k = nullptr;
};

using Predictor = std::function<GradientLabelPair(const PredictorCtx&)>;

Predictor make_model_predictor(std::shared_ptr<io::Checkpoint> ck);
Predictor make_oracle_predictor();

struct SampleRow {
  std::string id;
  int size = 0;
  int fringe_count = 0;
  double rmse_raw = 0, rmse_pc = 0;
  double curl_ratio = 0;
  double ms = 0;
};

struct BucketStats {
  int count = 0;
  double mean = 0, median = 0, stddev = 0, peak_to_peak = 0;
};

BucketStats stats_of(std::vector<double> values);

struct BenchReport {
  std::string kind;
  nlohmann::json meta;   // desk-scale protocol parameters, always explicit
  nlohmann::json extra;  // context rows, cost numbers
  std::vector<SampleRow> rows;
  std::vector<std::pair<std::string, BucketStats>> buckets;  // emitted in order

  nlohmann::json to_json() const;
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;
};

/// Unwraps one sample and scores it against phi + 2*pi*k_true.
SampleRow eval_sample(const io::SampleRecord& rec, const RasterF32& phi,
                      const RasterI32& k_true, const GradientLabelPair& true_labels,
                      const Predictor& predictor);

/// Per-size-bucket RMSE over a manifest split.
BenchReport bench_resolutions(const io::DatasetManifest& manifest, const Predictor& predictor,
                              const std::string& split = "test");

/// Per-fringe-density-bucket RMSE. Samples are grouped into the given
/// (mean, tolerance) buckets by their recorded fringe count.
BenchReport bench_density(const io::DatasetManifest& manifest, const Predictor& predictor,
                          std::vector<std::pair<int, int>> buckets = {},
                          const std::string& split = "test");

struct StitchResult {
  RasterI32 k;
  RasterF32 psi;
};

/// Per-tile prediction, then integer seam reconciliation: the offset between
/// adjacent tiles is the mode over the seam of
/// round((psi_left - psi_right) / 2pi), propagated from the top-left tile.
StitchResult tile_and_stitch(const RasterF32& phi, int tile, const Predictor& predictor,
                             const RasterI32* k_true = nullptr);

/// Slides a window across a large clean field in 1-pixel steps and reports
/// the RMSE distribution (mean/median/std/peak-to-peak).
BenchReport equivariance_translation(const RasterF32& psi_big, int window, int steps,
                                     const Predictor& predictor);

/// Rotates the field in step_deg increments (bilinear, unwrapped domain,
/// re-wrapped input), evaluating a centered window each time.
BenchReport equivariance_rotation(const RasterF32& psi_big, int window, int step_deg,
                                  const Predictor& predictor);

/// Bilinear rotation about the field center; every sampled point must fall
/// inside the source (callers keep the window inside the safe disc).
RasterF32 rotate_bilinear(const RasterF32& field, double degrees);

/// Parameter counts, analytic multiply-accumulates and timed median
/// inference for the trainable and fused variants.
BenchReport cost_report(nn::MsdNet& net, const nn::FusedNet& fused, int size,
                        int timing_reps = 20);

/// Deterministic large clean field for the equivariance protocols (gentle
/// slopes so rotated views stay curl-free).
RasterF32 make_equivariance_field(int size, int fringe_target, uint64_t seed);

}  // namespace umspu::bench
