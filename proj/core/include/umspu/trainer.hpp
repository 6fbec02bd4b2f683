#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "umspu/checkpoint.hpp"
#include "umspu/field_io.hpp"
#include "umspu/losses.hpp"
#include "umspu/msdnet.hpp"

namespace umspu::train {

struct TrainConfig {
  int batch_size = 4;
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  int epochs = 30;
  std::array<float, 3> class_weights = {1.0f, 10.0f, 10.0f};
  float curl_tau = 10.0f;
  double discard_threshold = 5e-5;
  /// Share of the train split held back as the boosting replacement pool.
  double reserve_fraction = 0.1;
  uint64_t seed = 0;
  int eval_every = 1;        // epochs between held-out evaluations (0 = never)
  int checkpoint_every = 5;  // epochs between numbered checkpoints
  nn::ModelConfig model;

  void validate() const;
};

TrainConfig load_train_config(const std::filesystem::path& json_path);
void save_train_config(const TrainConfig& cfg, const std::filesystem::path& json_path);

/// Component values for one batch; total = sum over scheduled heads of
/// alpha_k * (wmse_k + wce_k + kl + curl_k).
struct LossBreakdown {
  double wmse = 0, wce = 0, kl = 0, curl = 0;
  std::array<double, 3> head_loss = {0, 0, 0};
  double total = 0;
  double curl_hard = 0;
};

struct EpochStats {
  int epoch = 0;
  LossBreakdown mean_loss;
  std::array<double, 3> alpha = {0, 0, 0};
  std::array<double, 3> head_error = {0, 0, 0};
  double ensemble_error = 0;
  int discarded = 0, replaced = 0;
  std::map<int, double> val_rmse_by_size;  // piston-corrected
  double seconds = 0;
};

/// Thrown when a batch produces a non-finite loss; diagnostics are written
/// next to the checkpoints before throwing.
class TrainingDiverged : public std::runtime_error {
public:
  explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainResult {
  std::filesystem::path checkpoint_path;  // latest.umck
  std::vector<EpochStats> history;
};

/// Full training loop: cross-trained head pairs with 3-batch gradient
/// accumulation, per-batch distillation weights from the batch size, and
/// end-of-epoch boosting updates (error rates, alpha, sample weights,
/// resampling). Writes latest.umck, numbered checkpoints and train_log.jsonl
/// under out_dir.
TrainResult train(const io::DatasetManifest& manifest, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir);

}  // namespace umspu::train
