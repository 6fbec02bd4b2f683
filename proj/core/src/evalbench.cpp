#include "umspu/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace umspu::bench {

using nlohmann::json;
using num::kTwoPi;

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Reference values reported for the original full-scale configuration;
// desk-scale runs are not directly comparable and reports say so.
const json kFullScaleReference = {
    {"note", "published full-scale UMSPU reference values; desk-scale runs below are "
             "reduced protocols and are not directly comparable"},
    {"resolution_rmse", {{"256", 0.2954}, {"512", 0.3392}, {"1024", 0.3429}, {"2048", 0.3483}}},
    {"density_rmse", {{"10", 0.2911}, {"30", 0.2957}, {"50", 0.3316}, {"70", 0.3728}}},
    {"translation", {{"mean", 0.3476}, {"median", 0.3404}, {"std", 0.0128}, {"peak_to_peak", 0.0638}}},
    {"rotation_std", 0.0105},
    {"cost_1024", {{"gflops", 41.64}, {"params_m", 7.68}, {"inference_ms", 22.66}}}};

}  // namespace

Predictor make_model_predictor(std::shared_ptr<io::Checkpoint> ck) {
  if (!ck) throw ValidationError("make_model_predictor: null checkpoint");
  return [ck](const PredictorCtx& ctx) {
    if (ck->fused) {
      return predict_labels(*ck->fused_net, ctx.phi, ck->state.alpha);
    }
    return predict_labels(*ck->net, ctx.phi, ck->state.alpha);
  };
}

Predictor make_oracle_predictor() {
  return [](const PredictorCtx& ctx) {
    if (ctx.true_labels != nullptr) return *ctx.true_labels;
    if (ctx.true_k != nullptr) return synth::gradient_labels(*ctx.true_k);
    throw ValidationError("oracle predictor: no ground truth in context");
  };
}

BucketStats stats_of(std::vector<double> values) {
  BucketStats s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / values.size();
  s.median = values.size() % 2 == 1
                 ? values[values.size() / 2]
                 : 0.5 * (values[values.size() / 2 - 1] + values[values.size() / 2]);
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / values.size());
  s.peak_to_peak = values.back() - values.front();
  return s;
}

json BenchReport::to_json() const {
  json j;
  j["kind"] = kind;
  j["meta"] = meta;
  if (!extra.is_null()) j["extra"] = extra;
  j["full_scale_reference"] = kFullScaleReference;
  j["rows"] = json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"id", r.id},
                         {"size", r.size},
                         {"fringe_count", r.fringe_count},
                         {"rmse_raw", r.rmse_raw},
                         {"rmse_pc", r.rmse_pc},
                         {"curl_ratio", r.curl_ratio},
                         {"ms", r.ms}});
  }
  j["buckets"] = json::array();
  for (const auto& [label, s] : buckets) {
    j["buckets"].push_back({{"bucket", label},
                            {"count", s.count},
                            {"mean", s.mean},
                            {"median", s.median},
                            {"std", s.stddev},
                            {"peak_to_peak", s.peak_to_peak}});
  }
  return j;
}

std::string BenchReport::to_text() const {
  std::ostringstream out;
  out << "== " << kind << " ==\n";
  out << "protocol: " << meta.dump() << "\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %6s %12s %12s %12s %12s\n", "bucket", "n", "mean",
                "median", "std", "ptp");
  out << line;
  for (const auto& [label, s] : buckets) {
    std::snprintf(line, sizeof(line), "%-12s %6d %12.6f %12.6f %12.6f %12.6f\n", label.c_str(),
                  s.count, s.mean, s.median, s.stddev, s.peak_to_peak);
    out << line;
  }
  if (!extra.is_null()) out << "extra: " << extra.dump() << "\n";
  return out.str();
}

void BenchReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("BenchReport::save: cannot open " + path.string());
  out << to_json().dump(2) << "\n";
}

SampleRow eval_sample(const io::SampleRecord& rec, const RasterF32& phi,
                      const RasterI32& k_true, const GradientLabelPair& true_labels,
                      const Predictor& predictor) {
  SampleRow row;
  row.id = rec.id;
  row.size = rec.size;
  row.fringe_count = rec.fringe_count;

  const double t0 = now_ms();
  GradientLabelPair pred = predictor({phi, &true_labels, &k_true});
  // Anchor against the reference so the unobservable piston never enters.
  auto unwrapped = unwrap_from_labels(phi, std::move(pred), &k_true);
  row.ms = now_ms() - t0;

  const RasterF32 psi_ref = reference_phase(phi, k_true);
  row.rmse_raw = num::rmse(unwrapped.psi, psi_ref, false);
  row.rmse_pc = num::rmse(unwrapped.psi, psi_ref, true);
  row.curl_ratio = num::detect_curl(unwrapped.labels).ratio;
  return row;
}

namespace {

SampleRow eval_record(const io::DatasetManifest& manifest, const io::SampleRecord& rec,
                      const Predictor& predictor) {
  RasterF32 phi = io::read_raster_f32(manifest.resolve(rec.wrapped_path));
  RasterI32 k = raster_cast<int32_t>(io::read_raster_f32(manifest.resolve(rec.wrap_count_path)));
  GradientLabelPair labels;
  labels.gx = io::read_raster_i8(manifest.resolve(rec.label_gx_path));
  labels.gy = io::read_raster_i8(manifest.resolve(rec.label_gy_path));
  return eval_sample(rec, phi, k, labels, predictor);
}

}  // namespace

BenchReport bench_resolutions(const io::DatasetManifest& manifest, const Predictor& predictor,
                              const std::string& split) {
  BenchReport report;
  report.kind = "resolutions";
  report.meta = {{"split", split}, {"metric", "piston-corrected unwrap RMSE (rad)"}};

  std::map<int, std::vector<double>> by_size;
  for (const auto* rec : manifest.by_split(split)) {
    SampleRow row = eval_record(manifest, *rec, predictor);
    by_size[row.size].push_back(row.rmse_pc);
    report.rows.push_back(std::move(row));
  }
  for (const auto& [size, vals] : by_size) {
    report.buckets.emplace_back(std::to_string(size) + "x" + std::to_string(size),
                                stats_of(vals));
  }
  return report;
}

BenchReport bench_density(const io::DatasetManifest& manifest, const Predictor& predictor,
                          std::vector<std::pair<int, int>> buckets, const std::string& split) {
  if (buckets.empty()) buckets = {{4, 3}, {10, 3}, {16, 3}, {24, 3}};
  std::sort(buckets.begin(), buckets.end());

  BenchReport report;
  report.kind = "density";
  json jb = json::array();
  for (auto [m, t] : buckets) jb.push_back({m, t});
  report.meta = {{"split", split},
                 {"buckets", jb},
                 {"metric", "piston-corrected unwrap RMSE (rad)"}};

  std::map<int, std::vector<double>> by_bucket;
  int skipped = 0;
  for (const auto* rec : manifest.by_split(split)) {
    int bucket = -1;
    for (auto [mean, tol] : buckets) {
      if (std::abs(rec->fringe_count - mean) <= tol) {
        bucket = mean;
        break;
      }
    }
    if (bucket < 0) {
      ++skipped;
      continue;
    }
    SampleRow row = eval_record(manifest, *rec, predictor);
    by_bucket[bucket].push_back(row.rmse_pc);
    report.rows.push_back(std::move(row));
  }
  for (auto [mean, tol] : buckets) {
    auto it = by_bucket.find(mean);
    report.buckets.emplace_back(std::to_string(mean) + "(+-" + std::to_string(tol) + ")",
                                it == by_bucket.end() ? BucketStats{} : stats_of(it->second));
  }
  if (skipped > 0) report.meta["skipped_out_of_bucket"] = skipped;
  return report;
}

StitchResult tile_and_stitch(const RasterF32& phi, int tile, const Predictor& predictor,
                             const RasterI32* k_true) {
  const int h = phi.height(), w = phi.width();
  if (h % tile != 0 || w % tile != 0) {
    throw ValidationError("tile_and_stitch: image " + std::to_string(h) + "x" +
                          std::to_string(w) + " not divisible by tile " + std::to_string(tile));
  }
  const int th = h / tile, tw = w / tile;

  auto crop_f32 = [&](const RasterF32& src, int ti, int tj) {
    RasterF32 out(tile, tile);
    for (int i = 0; i < tile; ++i) {
      for (int j = 0; j < tile; ++j) out.at(i, j) = src.at(ti * tile + i, tj * tile + j);
    }
    return out;
  };

  std::vector<RasterI32> tiles_k;
  tiles_k.reserve(static_cast<size_t>(th) * tw);
  for (int ti = 0; ti < th; ++ti) {
    for (int tj = 0; tj < tw; ++tj) {
      RasterF32 phi_tile = crop_f32(phi, ti, tj);
      RasterI32 k_tile_true(tile, tile);
      if (k_true != nullptr) {
        for (int i = 0; i < tile; ++i) {
          for (int j = 0; j < tile; ++j) {
            k_tile_true.at(i, j) = k_true->at(ti * tile + i, tj * tile + j);
          }
        }
      }
      PredictorCtx ctx{phi_tile, nullptr, k_true != nullptr ? &k_tile_true : nullptr};
      GradientLabelPair labels = predictor(ctx);
      auto solved = unwrap_from_labels(phi_tile, std::move(labels));
      tiles_k.push_back(std::move(solved.k));
    }
  }

  // Integer offsets between adjacent tiles from wrapped-phase continuity at
  // the seam, spread from tile (0,0) row by row.
  auto psi_at = [&](int ti, int tj, int i, int j) {
    return phi.at(ti * tile + i, tj * tile + j) +
           kTwoPi * tiles_k[static_cast<size_t>(ti) * tw + tj].at(i, j);
  };
  auto seam_offset = [&](auto left_val, auto right_val, int count) {
    std::map<long, int> votes;
    for (int s = 0; s < count; ++s) {
      const long d = std::lround((left_val(s) - right_val(s)) / kTwoPi);
      ++votes[d];
    }
    long best = 0;
    int best_n = -1;
    for (const auto& [d, n] : votes) {
      if (n > best_n) {
        best = d;
        best_n = n;
      }
    }
    return best;
  };

  std::vector<long> offset(static_cast<size_t>(th) * tw, 0);
  for (int ti = 0; ti < th; ++ti) {
    for (int tj = 0; tj < tw; ++tj) {
      if (ti == 0 && tj == 0) continue;
      if (tj > 0) {
        // left neighbour, vertical seam
        const long d = seam_offset(
            [&](int s) { return psi_at(ti, tj - 1, s, tile - 1) +
                                kTwoPi * offset[static_cast<size_t>(ti) * tw + tj - 1]; },
            [&](int s) { return psi_at(ti, tj, s, 0); }, tile);
        offset[static_cast<size_t>(ti) * tw + tj] = d;
      } else {
        // top neighbour, horizontal seam
        const long d = seam_offset(
            [&](int s) { return psi_at(ti - 1, tj, tile - 1, s) +
                                kTwoPi * offset[static_cast<size_t>(ti - 1) * tw + tj]; },
            [&](int s) { return psi_at(ti, tj, 0, s); }, tile);
        offset[static_cast<size_t>(ti) * tw + tj] = d;
      }
    }
  }

  StitchResult out{RasterI32(h, w), RasterF32(h, w)};
  for (int ti = 0; ti < th; ++ti) {
    for (int tj = 0; tj < tw; ++tj) {
      const long off = offset[static_cast<size_t>(ti) * tw + tj];
      const RasterI32& kt = tiles_k[static_cast<size_t>(ti) * tw + tj];
      for (int i = 0; i < tile; ++i) {
        for (int j = 0; j < tile; ++j) {
          out.k.at(ti * tile + i, tj * tile + j) = kt.at(i, j) + static_cast<int32_t>(off);
        }
      }
    }
  }
  out.psi = num::reconstruct_phase(phi, out.k);
  return out;
}

namespace {

BenchReport sweep_report(const std::string& kind, json meta, std::vector<double> rmses) {
  BenchReport report;
  report.kind = kind;
  report.meta = std::move(meta);
  report.buckets.emplace_back("all_steps", stats_of(std::move(rmses)));
  return report;
}

double eval_window(const RasterF32& psi_win, const Predictor& predictor) {
  auto wrapped = num::wrap(psi_win);
  PredictorCtx ctx{wrapped.phi, nullptr, &wrapped.k};
  GradientLabelPair labels = predictor(ctx);
  auto unwrapped = unwrap_from_labels(wrapped.phi, std::move(labels), &wrapped.k);
  return num::rmse(unwrapped.psi, reference_phase(wrapped.phi, wrapped.k), true);
}

}  // namespace

BenchReport equivariance_translation(const RasterF32& psi_big, int window, int steps,
                                     const Predictor& predictor) {
  const int h = psi_big.height(), w = psi_big.width();
  if (window > h || window + steps - 1 > w) {
    throw ValidationError("equivariance_translation: window+steps exceed the field");
  }
  const int y0 = (h - window) / 2;
  std::vector<double> rmses;
  std::vector<SampleRow> rows;
  for (int s = 0; s < steps; ++s) {
    RasterF32 win(window, window);
    for (int i = 0; i < window; ++i) {
      for (int j = 0; j < window; ++j) win.at(i, j) = psi_big.at(y0 + i, s + j);
    }
    rmses.push_back(eval_window(win, predictor));
  }
  BenchReport report = sweep_report(
      "equivariance_translation",
      {{"field", std::to_string(h) + "x" + std::to_string(w)},
       {"window", window},
       {"steps", steps},
       {"step_px", 1},
       {"metric", "piston-corrected unwrap RMSE (rad)"}},
      rmses);
  for (int s = 0; s < steps; ++s) {
    SampleRow row;
    row.id = "step" + std::to_string(s);
    row.size = window;
    row.rmse_pc = rmses[s];
    report.rows.push_back(row);
  }
  return report;
}

RasterF32 rotate_bilinear(const RasterF32& field, double degrees) {
  const int h = field.height(), w = field.width();
  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  RasterF32 out(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      // inverse rotation of the output grid point
      const double dy = i - cy, dx = j - cx;
      const double sy = cy + (c * dy + s * dx);
      const double sx = cx + (-s * dy + c * dx);
      const int i0 = static_cast<int>(std::floor(sy));
      const int j0 = static_cast<int>(std::floor(sx));
      if (i0 < 0 || j0 < 0 || i0 + 1 >= h || j0 + 1 >= w) {
        out.at(i, j) = 0.0f;
        continue;
      }
      const double fy = sy - i0, fx = sx - j0;
      const double v = (1 - fy) * ((1 - fx) * field.at(i0, j0) + fx * field.at(i0, j0 + 1)) +
                       fy * ((1 - fx) * field.at(i0 + 1, j0) + fx * field.at(i0 + 1, j0 + 1));
      out.at(i, j) = static_cast<float>(v);
    }
  }
  return out;
}

BenchReport equivariance_rotation(const RasterF32& psi_big, int window, int step_deg,
                                  const Predictor& predictor) {
  const int h = psi_big.height(), w = psi_big.width();
  if (window * window * 2 > h * h) {
    throw ValidationError("equivariance_rotation: window diagonal exceeds the safe disc");
  }
  const int y0 = (h - window) / 2, x0 = (w - window) / 2;
  std::vector<double> rmses;
  const int count = 360 / step_deg;
  for (int step = 0; step < count; ++step) {
    RasterF32 rotated = rotate_bilinear(psi_big, step * step_deg);
    RasterF32 win(window, window);
    for (int i = 0; i < window; ++i) {
      for (int j = 0; j < window; ++j) win.at(i, j) = rotated.at(y0 + i, x0 + j);
    }
    rmses.push_back(eval_window(win, predictor));
  }
  return sweep_report("equivariance_rotation",
                      {{"field", std::to_string(h) + "x" + std::to_string(w)},
                       {"window", window},
                       {"step_deg", step_deg},
                       {"evaluations", count},
                       {"metric", "piston-corrected unwrap RMSE (rad)"}},
                      rmses);
}

BenchReport cost_report(nn::MsdNet& net, const nn::FusedNet& fused, int size,
                        int timing_reps) {
  BenchReport report;
  report.kind = "cost";
  report.meta = {{"input", std::to_string(size) + "x" + std::to_string(size)},
                 {"timing_reps", timing_reps}};

  nn::Tensor x(1, 1, size, size);
  Rng rng(7);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform(-M_PI, M_PI));

  auto time_median = [&](auto&& run) {
    run();  // warm-up
    std::vector<double> ms;
    for (int r = 0; r < timing_reps; ++r) {
      const double t0 = now_ms();
      run();
      ms.push_back(now_ms() - t0);
    }
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
  };

  const double unfused_ms = time_median([&] { (void)net.infer_all_heads(x); });
  const double fused_ms = time_median([&] { (void)fused.infer_all_heads(x); });

  const double unfused_mac = static_cast<double>(net.mac_count(size, size));
  const double fused_mac = static_cast<double>(fused.mac_count(size, size));
  report.extra = {
      {"unfused",
       {{"params", net.param_count()},
        {"mac", unfused_mac},
        {"gflops", 2.0 * unfused_mac / 1e9},
        {"median_ms", unfused_ms}}},
      {"fused",
       {{"params", fused.param_count()},
        {"mac", fused_mac},
        {"gflops", 2.0 * fused_mac / 1e9},
        {"median_ms", fused_ms}}}};
  return report;
}

RasterF32 make_equivariance_field(int size, int fringe_target, uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.sizes = {size};
  cfg.snr_db_range.reset();
  // Gentle morphology: rotated views must stay below the neighbour-step
  // bound, so amplitudes and ramp slopes are kept well under the generator
  // defaults.
  cfg.fringe_targets = {{fringe_target, 0}};
  cfg.gaussian_count_range = {2, 4};
  cfg.gaussian_amp_range_rad = {3.0, 12.0};
  cfg.gaussian_sigma_range_frac = {0.2, 0.5};
  cfg.samples_per_config = 1;
  cfg.seed = seed;
  Rng rng = Rng::for_sample(seed, 0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    RasterF32 psi = synth::gen_unwrapped_phase(size, fringe_target, cfg, rng);
    // Keep a margin below pi so bilinear resampling cannot push neighbour
    // steps over the bound.
    bool ok = true;
    for (int i = 0; i < size && ok; ++i) {
      for (int j = 0; j < size && ok; ++j) {
        if (j + 1 < size && std::abs(psi.at(i, j + 1) - psi.at(i, j)) >= 0.45 * M_PI) ok = false;
        if (i + 1 < size && std::abs(psi.at(i + 1, j) - psi.at(i, j)) >= 0.45 * M_PI) ok = false;
      }
    }
    if (ok) return psi;
  }
  throw ValidationError("make_equivariance_field: could not draw a gentle field");
}

}  // namespace umspu::bench
