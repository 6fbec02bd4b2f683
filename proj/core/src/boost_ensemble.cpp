#include "umspu/boost_ensemble.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace umspu::ensemble {

using nlohmann::json;

void EnsembleState::init_uniform_weights() {
  weights.assign(sample_ids.size(), sample_ids.empty() ? 0.0 : 1.0 / sample_ids.size());
}

void EnsembleState::validate() const {
  double sum = 0.0;
  for (double a : alpha) {
    if (a <= 0.0) throw ValidationError("EnsembleState: alpha must be positive");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("EnsembleState: alpha must sum to 1");
  if (sample_ids.size() != weights.size()) {
    throw ValidationError("EnsembleState: id/weight table size mismatch");
  }
  if (!weights.empty()) {
    double wsum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw ValidationError("EnsembleState: negative sample weight");
      wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-6) {
      throw ValidationError("EnsembleState: sample weights must sum to 1");
    }
  }
}

std::string EnsembleState::to_json() const {
  json j;
  j["alpha"] = alpha;
  j["epoch"] = epoch;
  j["discard_threshold"] = discard_threshold;
  j["rng_seed"] = rng_seed;
  j["alpha_history"] = json::array();
  for (const auto& a : alpha_history) j["alpha_history"].push_back(a);
  j["samples"] = json::array();
  for (size_t i = 0; i < sample_ids.size(); ++i) {
    j["samples"].push_back({{"id", sample_ids[i]}, {"w", weights[i]}});
  }
  j["pool"] = replacement_pool;
  return j.dump();
}

EnsembleState EnsembleState::from_json(const std::string& text) {
  json j = json::parse(text);
  EnsembleState s;
  s.alpha = j.at("alpha").get<std::array<double, 3>>();
  s.epoch = j.at("epoch").get<int>();
  s.discard_threshold = j.at("discard_threshold").get<double>();
  s.rng_seed = j.value("rng_seed", uint64_t{0});
  if (j.contains("alpha_history")) {
    for (const auto& a : j["alpha_history"]) {
      s.alpha_history.push_back(a.get<std::array<double, 3>>());
    }
  }
  for (const auto& rec : j.at("samples")) {
    s.sample_ids.push_back(rec.at("id").get<std::string>());
    s.weights.push_back(rec.at("w").get<double>());
  }
  if (j.contains("pool")) s.replacement_pool = j["pool"].get<std::vector<std::string>>();
  return s;
}

std::pair<int, int> pair_schedule(long batch_index) {
  static constexpr std::pair<int, int> kPairs[3] = {{0, 1}, {1, 2}, {0, 2}};
  return kPairs[batch_index % 3];
}

double per_sample_error(const GradientLabelPair& pred, const GradientLabelPair& truth) {
  require_same_shape(pred.gx, truth.gx, "per_sample_error");
  require_same_shape(pred.gy, truth.gy, "per_sample_error");
  long masked = 0, wrong = 0;
  for (size_t i = 0; i < truth.gx.size(); ++i) {
    if (truth.gx[i] != 0) {
      ++masked;
      if (pred.gx[i] != truth.gx[i]) ++wrong;
    }
    if (truth.gy[i] != 0) {
      ++masked;
      if (pred.gy[i] != truth.gy[i]) ++wrong;
    }
  }
  if (masked == 0) return 0.0;
  return static_cast<double>(wrong) / static_cast<double>(masked);
}

double segmenter_error(const std::vector<double>& eps, const std::vector<double>& weights) {
  if (eps.size() != weights.size()) {
    throw ValidationError("segmenter_error: eps/weights length mismatch");
  }
  double r = 0.0;
  for (size_t i = 0; i < eps.size(); ++i) r += weights[i] * eps[i];
  return r;
}

std::array<double, 3> update_alpha(const std::array<double, 3>& error_rates) {
  // Eq. 12 diverges at R=0 and flips sign at R>=0.5; clamp first.
  constexpr double kLo = 1e-6;
  constexpr double kHi = 0.5 - 1e-6;
  std::array<double, 3> raw{};
  double sum = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double r = std::clamp(error_rates[k], kLo, kHi);
    raw[k] = 0.5 * std::log((1.0 - r) / r);
    sum += raw[k];
  }
  for (int k = 0; k < 3; ++k) raw[k] /= sum;
  return raw;
}

GradientLabelPair aggregate(const std::array<ClassProbPair, 3>& probs,
                            const std::array<double, 3>& alpha) {
  const nn::Tensor& ref = probs[0].px;
  for (int k = 1; k < 3; ++k) {
    nn::require_shape(probs[k].px, ref, "aggregate");
    nn::require_shape(probs[k].py, ref, "aggregate");
  }
  const int h = ref.h, w = ref.w;
  GradientLabelPair out{RasterI8(h, w, 0), RasterI8(h, w, 0)};

  auto vote = [&](auto pick_dir, RasterI8& dst) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        double best = -1.0;
        int best_ch = 0;
        for (int ch = 0; ch < 3; ++ch) {
          double p = 0.0;
          for (int k = 0; k < 3; ++k) p += alpha[k] * pick_dir(k).at(0, ch, i, j);
          if (p > best) {  // strict: ties keep the lowest channel index
            best = p;
            best_ch = ch;
          }
        }
        dst.at(i, j) = static_cast<int8_t>(channel_to_class(best_ch));
      }
    }
  };
  vote([&](int k) -> const nn::Tensor& { return probs[k].px; }, out.gx);
  vote([&](int k) -> const nn::Tensor& { return probs[k].py; }, out.gy);

  // Structural boundary positions carry no difference by construction.
  for (int i = 0; i < h; ++i) out.gx.at(i, w - 1) = 0;
  for (int j = 0; j < w; ++j) out.gy.at(h - 1, j) = 0;
  return out;
}

std::vector<double> update_sample_weights(const std::vector<double>& weights,
                                          const std::vector<double>& eps_ensemble) {
  if (weights.size() != eps_ensemble.size()) {
    throw ValidationError("update_sample_weights: length mismatch");
  }
  // Shift by the max error before exponentiating; the normalization cancels
  // the shift and equal errors reduce to exp(0) = 1 exactly.
  double eps_max = 0.0;
  for (double e : eps_ensemble) eps_max = std::max(eps_max, e);
  std::vector<double> out(weights.size());
  double sum = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    out[i] = weights[i] * std::exp(2.0 * (eps_ensemble[i] - eps_max));
    sum += out[i];
  }
  for (double& w : out) w /= sum;
  return out;
}

ResampleOutcome resample(EnsembleState& state) {
  ResampleOutcome outcome;
  const size_t n_before = state.sample_ids.size();

  std::vector<std::string> kept_ids;
  std::vector<double> kept_w;
  kept_ids.reserve(n_before);
  kept_w.reserve(n_before);
  for (size_t i = 0; i < n_before; ++i) {
    if (state.weights[i] < state.discard_threshold) {
      ++outcome.discarded;
    } else {
      kept_ids.push_back(state.sample_ids[i]);
      kept_w.push_back(state.weights[i]);
    }
  }

  // Newcomers enter at the mean weight 1/N (N = set size before discards).
  const double newcomer_w = n_before > 0 ? 1.0 / static_cast<double>(n_before) : 0.0;
  for (int r = 0; r < outcome.discarded; ++r) {
    if (state.replacement_pool.empty()) {
      outcome.pool_exhausted = true;
      break;
    }
    kept_ids.push_back(state.replacement_pool.front());
    state.replacement_pool.erase(state.replacement_pool.begin());
    kept_w.push_back(newcomer_w);
    ++outcome.replaced;
  }

  double sum = 0.0;
  for (double w : kept_w) sum += w;
  if (sum > 0.0) {
    for (double& w : kept_w) w /= sum;
  }
  state.sample_ids = std::move(kept_ids);
  state.weights = std::move(kept_w);
  return outcome;
}

}  // namespace umspu::ensemble
