#pragma once

#include <array>
#include <string>
#include <vector>

#include "umspu/labels.hpp"
#include "umspu/tensor.hpp"

namespace umspu::ensemble {

/// Per-direction 3-class probability maps for one sample (softmax outputs of
/// a segmenter head). Channel order: class 0, +1, -1.
struct ClassProbPair {
  nn::Tensor px;  // (1,3,H,W)
  nn::Tensor py;  // (1,3,H,W)
};

/// Adaptive-boosting bookkeeping: segmenter weights on the 3-simplex, the
/// per-sample weight table over the active training set, and the replacement
/// pool for discarded samples.
struct EnsembleState {
  std::array<double, 3> alpha = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  std::vector<std::string> sample_ids;
  std::vector<double> weights;  // parallel to sample_ids, sums to 1
  std::vector<std::string> replacement_pool;
  int epoch = 0;
  double discard_threshold = 5e-5;
  uint64_t rng_seed = 0;
  std::vector<std::array<double, 3>> alpha_history;

  void init_uniform_weights();
  void validate() const;
  std::string to_json() const;
  static EnsembleState from_json(const std::string& text);
};

/// Cross-training schedule: batches cycle through head pairs
/// (0,1), (1,2), (0,2) with period 3 (heads reported 1-based in tooling).
std::pair<int, int> pair_schedule(long batch_index);

/// Masked pixel error rate: fraction of wrong predictions over pixels whose
/// true label is nonzero, pooling both directions. 0 on an empty mask.
double per_sample_error(const GradientLabelPair& pred, const GradientLabelPair& truth);

/// R_k = sum_i w_i * eps_{i,k}; weights must sum to 1.
double segmenter_error(const std::vector<double>& eps, const std::vector<double>& weights);

/// alpha_k proportional to 0.5*ln((1-R_k)/R_k), normalized to sum 1. R is
/// clamped into [1e-6, 0.5 - 1e-6] first.
std::array<double, 3> update_alpha(const std::array<double, 3>& error_rates);

/// Soft aggregation: per-direction class probabilities combined as
/// sum_k alpha_k * p_k, then per-pixel argmax (ties broken toward the lowest
/// channel index). The structural boundary mask is applied to the result.
GradientLabelPair aggregate(const std::array<ClassProbPair, 3>& probs,
                            const std::array<double, 3>& alpha);

/// w'_i proportional to w_i * exp(2 * eps_i), renormalized.
std::vector<double> update_sample_weights(const std::vector<double>& weights,
                                          const std::vector<double>& eps_ensemble);

struct ResampleOutcome {
  int discarded = 0;
  int replaced = 0;
  bool pool_exhausted = false;
};

/// Discards active samples whose weight fell below the threshold, promotes
/// replacements from the pool at weight 1/N, renormalizes. When the pool
/// runs dry the set shrinks and the outcome carries a warning flag.
ResampleOutcome resample(EnsembleState& state);

}  // namespace umspu::ensemble
