#include "umspu/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace umspu::synth {

namespace fs = std::filesystem;
using nlohmann::json;
using num::kTwoPi;

void SynthConfig::validate() const {
  if (sizes.empty()) throw ValidationError("SynthConfig: sizes empty");
  for (int s : sizes) {
    if (s < 32) throw ValidationError("SynthConfig: size " + std::to_string(s) + " below 32");
  }
  if (snr_db_range && snr_db_range->first > snr_db_range->second) {
    throw ValidationError("SynthConfig: inverted snr_db_range");
  }
  if (fringe_targets.empty()) throw ValidationError("SynthConfig: fringe_targets empty");
  for (auto [mean, tol] : fringe_targets) {
    if (mean < 0 || tol < 0) throw ValidationError("SynthConfig: negative fringe bucket");
  }
  if (gaussian_count_range.first < 0 ||
      gaussian_count_range.first > gaussian_count_range.second) {
    throw ValidationError("SynthConfig: bad gaussian_count_range");
  }
  if (gaussian_sigma_range_frac.first <= 0.0 || gaussian_sigma_range_frac.second > 1.0 ||
      gaussian_sigma_range_frac.first > gaussian_sigma_range_frac.second) {
    throw ValidationError("SynthConfig: gaussian_sigma_range_frac must lie in (0, 1]");
  }
  if (samples_per_config < 1) throw ValidationError("SynthConfig: samples_per_config < 1");
}

SynthConfig load_synth_config(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("load_synth_config: cannot open " + json_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("load_synth_config: invalid JSON: " + std::string(e.what()));
  }
  SynthConfig cfg;
  if (j.contains("sizes")) cfg.sizes = j["sizes"].get<std::vector<int>>();
  if (j.contains("snr_db_range")) {
    if (j["snr_db_range"].is_null()) {
      cfg.snr_db_range.reset();
    } else {
      auto v = j["snr_db_range"].get<std::vector<double>>();
      if (v.size() != 2) throw IoError("load_synth_config: snr_db_range needs 2 entries");
      cfg.snr_db_range = {{v[0], v[1]}};
    }
  }
  if (j.contains("fringe_targets")) {
    cfg.fringe_targets.clear();
    for (const auto& p : j["fringe_targets"]) {
      cfg.fringe_targets.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    }
  }
  auto pair_of = [&](const char* key, auto& dst) {
    if (j.contains(key)) {
      auto v = j[key];
      dst = {v.at(0), v.at(1)};
    }
  };
  pair_of("gaussian_count_range", cfg.gaussian_count_range);
  pair_of("gaussian_amp_range_rad", cfg.gaussian_amp_range_rad);
  pair_of("gaussian_sigma_range_frac", cfg.gaussian_sigma_range_frac);
  if (j.contains("samples_per_config")) cfg.samples_per_config = j["samples_per_config"];
  if (j.contains("seed")) cfg.seed = j["seed"];
  cfg.validate();
  return cfg;
}

void save_synth_config(const SynthConfig& cfg, const fs::path& json_path) {
  json j;
  j["sizes"] = cfg.sizes;
  if (cfg.snr_db_range) {
    j["snr_db_range"] = {cfg.snr_db_range->first, cfg.snr_db_range->second};
  } else {
    j["snr_db_range"] = nullptr;
  }
  j["fringe_targets"] = json::array();
  for (auto [mean, tol] : cfg.fringe_targets) j["fringe_targets"].push_back({mean, tol});
  j["gaussian_count_range"] = {cfg.gaussian_count_range.first, cfg.gaussian_count_range.second};
  j["gaussian_amp_range_rad"] = {cfg.gaussian_amp_range_rad.first,
                                 cfg.gaussian_amp_range_rad.second};
  j["gaussian_sigma_range_frac"] = {cfg.gaussian_sigma_range_frac.first,
                                    cfg.gaussian_sigma_range_frac.second};
  j["samples_per_config"] = cfg.samples_per_config;
  j["seed"] = cfg.seed;
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw IoError("save_synth_config: cannot open " + json_path.string());
  out << j.dump(2) << "\n";
}

namespace {

// Neighbour differences must stay strictly below this so the 3-class label
// space is representable and wrap fronts are never adjacent (no curl in
// ground truth).
constexpr double kMaxStep = M_PI;

double max_neighbor_step(const std::vector<double>& f, int h, int w) {
  double m = 0.0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double v = f[static_cast<size_t>(i) * w + j];
      if (j + 1 < w) m = std::max(m, std::abs(f[static_cast<size_t>(i) * w + j + 1] - v));
      if (i + 1 < h) m = std::max(m, std::abs(f[static_cast<size_t>(i + 1) * w + j] - v));
    }
  }
  return m;
}

struct FieldDraw {
  std::vector<double> gauss;  // sum of Gaussians
  std::vector<double> ramp;   // unit-slope ramp along the drawn direction
};

FieldDraw draw_components(int size, const SynthConfig& cfg, Rng& rng) {
  const int h = size, w = size;
  FieldDraw d;
  d.gauss.assign(static_cast<size_t>(h) * w, 0.0);
  d.ramp.assign(static_cast<size_t>(h) * w, 0.0);

  const int n_gauss = rng.uniform_int(cfg.gaussian_count_range.first,
                                      cfg.gaussian_count_range.second);
  for (int g = 0; g < n_gauss; ++g) {
    const double amp = rng.uniform(cfg.gaussian_amp_range_rad.first,
                                   cfg.gaussian_amp_range_rad.second) *
                       (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const double cx = rng.uniform(0.1, 0.9) * w;
    const double cy = rng.uniform(0.1, 0.9) * h;
    const double sigma = rng.uniform(cfg.gaussian_sigma_range_frac.first,
                                     cfg.gaussian_sigma_range_frac.second) *
                         w;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int i = 0; i < h; ++i) {
      const double dy = i - cy;
      for (int j = 0; j < w; ++j) {
        const double dx = j - cx;
        d.gauss[static_cast<size_t>(i) * w + j] += amp * std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
    }
  }

  const double theta = rng.uniform(0.0, kTwoPi);
  const double ux = std::cos(theta), uy = std::sin(theta);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      d.ramp[static_cast<size_t>(i) * w + j] = ux * j + uy * i;
    }
  }
  return d;
}

double span_of(const std::vector<double>& f) {
  auto [lo, hi] = std::minmax_element(f.begin(), f.end());
  return *hi - *lo;
}

void scale_in_place(std::vector<double>& f, double s) {
  for (double& v : f) v *= s;
}

}  // namespace

int measure_fringe_count(const RasterF32& psi) {
  auto [lo, hi] = std::minmax_element(psi.data(), psi.data() + psi.size());
  return static_cast<int>(std::lround((*hi - *lo) / kTwoPi));
}

RasterF32 gen_unwrapped_phase(int size, int fringe_target, const SynthConfig& cfg, Rng& rng,
                              int max_retries) {
  if (std::find(cfg.sizes.begin(), cfg.sizes.end(), size) == cfg.sizes.end()) {
    throw ValidationError("gen_unwrapped_phase: size " + std::to_string(size) +
                          " not in configured sizes");
  }
  if (fringe_target < 0) throw ValidationError("gen_unwrapped_phase: negative fringe target");

  const int h = size, w = size;
  const size_t n = static_cast<size_t>(h) * w;
  double worst_step = 0.0;

  for (int attempt = 0; attempt < max_retries; ++attempt) {
    FieldDraw d = draw_components(size, cfg, rng);
    std::vector<double> psi(n, 0.0);

    if (fringe_target == 0) {
      // Wrap-free bucket: shrink the Gaussians well below one cycle and keep
      // the value range inside a single wrap interval, so the wrap count is
      // constant.
      const double gspan = span_of(d.gauss);
      const double span = rng.uniform(0.25, 0.45) * kTwoPi;
      if (gspan > 0.0) scale_in_place(d.gauss, span / gspan);
      psi = d.gauss;
      auto [mn, mx] = std::minmax_element(psi.begin(), psi.end());
      const double mid = 0.5 * (*mn + *mx);
      const double room = M_PI - 0.5 * (*mx - *mn) - 0.1;
      const double offset = rng.uniform(-0.8, 0.8) * std::max(room, 0.0);
      for (double& v : psi) v += offset - mid;
      const double step0 = max_neighbor_step(psi, h, w);
      worst_step = std::max(worst_step, step0);
      if (step0 < kMaxStep) {
        RasterF32 out(h, w);
        for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(psi[i]);
        return out;
      }
      continue;
    }
    {
      const double target_span = kTwoPi * (fringe_target + rng.uniform(0.05, 0.45));
      // Gaussians contribute a bounded share of the span; the ramp supplies
      // the rest so the bucket is hit.
      const double gspan = span_of(d.gauss);
      if (gspan > 0.0) {
        const double share = rng.uniform(0.2, 0.55);
        scale_in_place(d.gauss, share * target_span / gspan);
      }

      // Bisect the ramp slope until the combined span matches the target.
      auto span_at = [&](double s) {
        double lo = 1e300, hi = -1e300;
        for (size_t i = 0; i < n; ++i) {
          const double v = d.gauss[i] + s * d.ramp[i];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        return hi - lo;
      };
      double s_hi = target_span / (std::sqrt(2.0) * w);
      while (span_at(s_hi) < target_span) s_hi *= 2.0;
      double s_lo = 0.0;
      for (int it = 0; it < 48; ++it) {
        const double mid = 0.5 * (s_lo + s_hi);
        (span_at(mid) < target_span ? s_lo : s_hi) = mid;
      }
      const double slope = 0.5 * (s_lo + s_hi);
      for (size_t i = 0; i < n; ++i) psi[i] = d.gauss[i] + slope * d.ramp[i];
    }

    // Center mid-range at a mild random offset so wrap boundaries are not
    // systematically aligned with psi = 0.
    auto [mn, mx] = std::minmax_element(psi.begin(), psi.end());
    const double mid = 0.5 * (*mn + *mx);
    const double offset = rng.uniform(-M_PI, M_PI);
    for (double& v : psi) v += offset - mid;

    const double step = max_neighbor_step(psi, h, w);
    worst_step = std::max(worst_step, step);
    if (step < kMaxStep) {
      RasterF32 out(h, w);
      for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(psi[i]);
      return out;
    }
  }
  throw ValidationError("gen_unwrapped_phase: failed to satisfy the neighbour-step bound after " +
                        std::to_string(max_retries) + " retries (size " + std::to_string(size) +
                        ", fringe target " + std::to_string(fringe_target) +
                        ", worst step " + std::to_string(worst_step) + " rad)");
}

RasterF32 add_noise(const RasterF32& phi, double snr_db, Rng& rng) {
  if (std::isinf(snr_db)) return phi;
  double mean = 0.0;
  for (size_t i = 0; i < phi.size(); ++i) mean += phi[i];
  mean /= static_cast<double>(phi.size());
  double var = 0.0;
  for (size_t i = 0; i < phi.size(); ++i) {
    const double d = phi[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(phi.size());

  const double noise_std = std::sqrt(var * std::pow(10.0, -snr_db / 10.0));
  RasterF32 out(phi.height(), phi.width());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(num::wrap_scalar(phi[i] + noise_std * rng.normal()));
  }
  return out;
}

GradientLabelPair gradient_labels(const RasterI32& k) {
  const int h = k.height(), w = k.width();
  GradientLabelPair labels{RasterI8(h, w, 0), RasterI8(h, w, 0)};
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (j < w - 1) {
        const int d = k.at(i, j + 1) - k.at(i, j);
        if (d < -1 || d > 1) {
          throw ValidationError("gradient_labels: |delta k| >= 2 at (" + std::to_string(i) +
                                "," + std::to_string(j) + "); generator contract violated");
        }
        labels.gx.at(i, j) = static_cast<int8_t>(d);
      }
      if (i < h - 1) {
        const int d = k.at(i + 1, j) - k.at(i, j);
        if (d < -1 || d > 1) {
          throw ValidationError("gradient_labels: |delta k| >= 2 at (" + std::to_string(i) +
                                "," + std::to_string(j) + "); generator contract violated");
        }
        labels.gy.at(i, j) = static_cast<int8_t>(d);
      }
    }
  }
  return labels;
}

Sample make_sample(int size, int fringe_bucket_mean, int fringe_bucket_tol,
                   const SynthConfig& cfg, Rng& rng) {
  const int lo = std::max(0, fringe_bucket_mean - fringe_bucket_tol);
  const int hi = fringe_bucket_mean + fringe_bucket_tol;
  const int target = rng.uniform_int(lo, hi);

  Sample s;
  s.fringe_target = target;
  s.psi = gen_unwrapped_phase(size, target, cfg, rng);
  auto wr = num::wrap(s.psi);
  s.k = std::move(wr.k);
  s.labels = gradient_labels(s.k);
  if (cfg.snr_db_range) {
    s.snr_db = rng.uniform(cfg.snr_db_range->first, cfg.snr_db_range->second);
    s.phi = add_noise(wr.phi, *s.snr_db, rng);
  } else {
    s.phi = std::move(wr.phi);
  }
  return s;
}

io::DatasetManifest build_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir / "rasters");

  struct Job {
    int size;
    int bucket_mean, bucket_tol;
  };
  std::vector<Job> jobs;
  for (int size : cfg.sizes) {
    for (auto [mean, tol] : cfg.fringe_targets) {
      for (int r = 0; r < cfg.samples_per_config; ++r) {
        jobs.push_back({size, mean, tol});
      }
    }
  }

  const size_t n = jobs.size();
  std::vector<std::string> splits(n, "train");
  {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 shuf(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
    for (size_t i = n; i > 1; --i) {
      const size_t j = shuf() % i;
      std::swap(order[i - 1], order[j]);
    }
    const size_t n_train = static_cast<size_t>(static_cast<double>(n) * 0.8);
    const size_t n_val = static_cast<size_t>(static_cast<double>(n) * 0.1);
    for (size_t idx = 0; idx < n; ++idx) {
      splits[order[idx]] = idx < n_train ? "train" : (idx < n_train + n_val ? "val" : "test");
    }
  }

  io::DatasetManifest m;
  m.seed = cfg.seed;
  m.root = out_dir;

  char idbuf[32];
  for (size_t idx = 0; idx < n; ++idx) {
    const Job& job = jobs[idx];
    Rng rng = Rng::for_sample(cfg.seed, idx);
    Sample s = make_sample(job.size, job.bucket_mean, job.bucket_tol, cfg, rng);

    std::snprintf(idbuf, sizeof(idbuf), "s%06zu", idx);
    io::SampleRecord rec;
    rec.id = idbuf;
    rec.size = job.size;
    rec.snr_db = s.snr_db;
    rec.fringe_count = s.fringe_target;
    rec.seed = idx;
    rec.split = splits[idx];
    rec.wrapped_path = "rasters/" + rec.id + "_phi.umsp";
    rec.wrap_count_path = "rasters/" + rec.id + "_k.umsp";
    rec.label_gx_path = "rasters/" + rec.id + "_gx.umsp";
    rec.label_gy_path = "rasters/" + rec.id + "_gy.umsp";

    io::write_raster(s.phi, out_dir / rec.wrapped_path);
    // Wrap counts persist as f32 (exact for the magnitudes involved); the
    // container's integer dtype is reserved for {-1,0,+1} class maps.
    io::write_raster(raster_cast<float>(s.k), out_dir / rec.wrap_count_path);
    io::write_raster(s.labels.gx, out_dir / rec.label_gx_path);
    io::write_raster(s.labels.gy, out_dir / rec.label_gy_path);
    m.samples.push_back(std::move(rec));
  }

  io::save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace umspu::synth
