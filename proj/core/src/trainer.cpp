#include "umspu/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "umspu/unwrap.hpp"

namespace umspu::train {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("TrainConfig: batch_size < 1");
  if (learning_rate <= 0.0) throw ValidationError("TrainConfig: learning_rate <= 0");
  if (epochs < 1) throw ValidationError("TrainConfig: epochs < 1");
  for (float b : class_weights) {
    if (b <= 0.0f) throw ValidationError("TrainConfig: class weights must be positive");
  }
  if (reserve_fraction < 0.0 || reserve_fraction >= 1.0) {
    throw ValidationError("TrainConfig: reserve_fraction must be in [0, 1)");
  }
  model.validate();
}

TrainConfig load_train_config(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("load_train_config: cannot open " + json_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("load_train_config: invalid JSON: " + std::string(e.what()));
  }
  TrainConfig cfg;
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.epochs = j.value("epochs", cfg.epochs);
  if (j.contains("class_weights")) {
    auto v = j["class_weights"].get<std::vector<float>>();
    if (v.size() != 3) throw IoError("load_train_config: class_weights needs 3 entries");
    cfg.class_weights = {v[0], v[1], v[2]};
  }
  cfg.curl_tau = j.value("curl_tau", cfg.curl_tau);
  cfg.discard_threshold = j.value("discard_threshold", cfg.discard_threshold);
  cfg.reserve_fraction = j.value("reserve_fraction", cfg.reserve_fraction);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  if (j.contains("model")) {
    cfg.model = nn::model_config_from_json(j["model"].dump());
  }
  cfg.validate();
  return cfg;
}

void save_train_config(const TrainConfig& cfg, const fs::path& json_path) {
  json j;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["weight_decay"] = cfg.weight_decay;
  j["momentum"] = cfg.momentum;
  j["epochs"] = cfg.epochs;
  j["class_weights"] = cfg.class_weights;
  j["curl_tau"] = cfg.curl_tau;
  j["discard_threshold"] = cfg.discard_threshold;
  j["reserve_fraction"] = cfg.reserve_fraction;
  j["seed"] = cfg.seed;
  j["eval_every"] = cfg.eval_every;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["model"] = json::parse(nn::model_config_to_json(cfg.model));
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw IoError("save_train_config: cannot open " + json_path.string());
  out << j.dump(2) << "\n";
}

namespace {

struct Sgd {
  std::vector<nn::Var> params;
  std::vector<nn::Tensor> velocity;
  double lr, momentum, weight_decay;

  Sgd(std::vector<nn::Var> p, double lr_, double mu, double wd)
      : params(std::move(p)), lr(lr_), momentum(mu), weight_decay(wd) {
    velocity.reserve(params.size());
    for (const auto& p : params) {
      velocity.emplace_back(p->val.n, p->val.c, p->val.h, p->val.w);
    }
  }

  void step() {
    for (size_t i = 0; i < params.size(); ++i) {
      nn::Node& p = *params[i];
      p.ensure_grad();
      float* g = p.grad.v.data();
      float* th = p.val.v.data();
      float* v = velocity[i].v.data();
      const float wd = static_cast<float>(weight_decay);
      const float mu = static_cast<float>(momentum);
      const float step_lr = static_cast<float>(lr);
      for (size_t k = 0; k < p.val.count(); ++k) {
        const float grad = g[k] + wd * th[k];
        v[k] = mu * v[k] + grad;
        th[k] -= step_lr * v[k];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params) {
      if (p->grad.count() > 0) p->grad.fill(0.0f);
    }
  }
};

struct CachedSample {
  const io::SampleRecord* rec = nullptr;
  RasterF32 phi;
  GradientLabelPair labels;
};

class SampleCache {
public:
  explicit SampleCache(const io::DatasetManifest& manifest) : manifest_(manifest) {
    for (const auto& rec : manifest.samples) by_id_[rec.id] = &rec;
  }

  const CachedSample& get(const std::string& id) {
    auto it = cache_.find(id);
    if (it != cache_.end()) return it->second;
    auto rit = by_id_.find(id);
    if (rit == by_id_.end()) throw ValidationError("SampleCache: unknown sample id " + id);
    const io::SampleRecord& rec = *rit->second;
    CachedSample s;
    s.rec = &rec;
    s.phi = io::read_raster_f32(manifest_.resolve(rec.wrapped_path));
    s.labels.gx = io::read_raster_i8(manifest_.resolve(rec.label_gx_path));
    s.labels.gy = io::read_raster_i8(manifest_.resolve(rec.label_gy_path));
    return cache_.emplace(id, std::move(s)).first->second;
  }

  const io::SampleRecord& record(const std::string& id) const {
    return *by_id_.at(id);
  }

private:
  const io::DatasetManifest& manifest_;
  std::map<std::string, const io::SampleRecord*> by_id_;
  std::map<std::string, CachedSample> cache_;
};

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
void shuffle_det(std::vector<T>& v, std::mt19937_64& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

nn::Tensor batch_input(const std::vector<const CachedSample*>& batch) {
  const int h = batch[0]->phi.height(), w = batch[0]->phi.width();
  nn::Tensor x(static_cast<int>(batch.size()), 1, h, w);
  for (size_t b = 0; b < batch.size(); ++b) {
    std::copy(batch[b]->phi.data(), batch[b]->phi.data() + batch[b]->phi.size(), x.ptr(b));
  }
  return x;
}

nn::Tensor batch_onehot(const std::vector<const CachedSample*>& batch, bool x_dir) {
  const int h = batch[0]->phi.height(), w = batch[0]->phi.width();
  nn::Tensor t(static_cast<int>(batch.size()), 3, h, w);
  for (size_t b = 0; b < batch.size(); ++b) {
    const RasterI8& lab = x_dir ? batch[b]->labels.gx : batch[b]->labels.gy;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        t.at(static_cast<int>(b), class_to_channel(lab.at(i, j)), i, j) = 1.0f;
      }
    }
  }
  return t;
}

ensemble::ClassProbPair probs_pair_from_tensor(const nn::Tensor& probs, int ni) {
  ensemble::ClassProbPair out;
  out.px = nn::Tensor(1, 3, probs.h, probs.w);
  out.py = nn::Tensor(1, 3, probs.h, probs.w);
  const size_t plane = probs.plane();
  std::copy(probs.ptr(ni, 0), probs.ptr(ni, 0) + 3 * plane, out.px.v.begin());
  std::copy(probs.ptr(ni, 3), probs.ptr(ni, 3) + 3 * plane, out.py.v.begin());
  return out;
}

}  // namespace

TrainResult train(const io::DatasetManifest& manifest, const TrainConfig& cfg,
                  const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);

  SampleCache cache(manifest);
  auto train_recs = manifest.by_split("train");
  if (train_recs.empty()) throw ValidationError("train: manifest has no train split");
  {
    std::set<int> sizes;
    for (const auto* r : train_recs) sizes.insert(r->size);
    if (sizes.size() < 2) {
      std::cerr << "[train] warning: single-size train split; the distillation weight "
                   "schedule will stay at one endpoint\n";
    }
  }

  // Active set vs replacement pool, deterministic in the seed.
  ensemble::EnsembleState state;
  state.discard_threshold = cfg.discard_threshold;
  state.rng_seed = cfg.seed;
  {
    std::vector<std::string> ids;
    for (const auto* r : train_recs) ids.push_back(r->id);
    std::mt19937_64 rng(mix_seed(cfg.seed, 0xb00157ULL));
    shuffle_det(ids, rng);
    const size_t n_pool = static_cast<size_t>(ids.size() * cfg.reserve_fraction);
    const size_t n_active = ids.size() - n_pool;
    state.sample_ids.assign(ids.begin(), ids.begin() + n_active);
    state.replacement_pool.assign(ids.begin() + n_active, ids.end());
  }
  state.init_uniform_weights();

  nn::MsdNet net(cfg.model, cfg.seed);
  Sgd sgd(net.parameters(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);

  std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw IoError("train: cannot open training log in " + out_dir.string());

  TrainResult result;
  result.checkpoint_path = out_dir / "latest.umck";
  long batch_counter = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    // Same-size batches, order shuffled across sizes.
    std::map<int, std::vector<std::string>> by_size;
    for (const auto& id : state.sample_ids) {
      by_size[cache.record(id).size].push_back(id);
    }
    std::mt19937_64 erng(mix_seed(cfg.seed, 1000 + epoch));
    std::vector<std::vector<std::string>> batches;
    for (auto& [size, ids] : by_size) {
      shuffle_det(ids, erng);
      for (size_t i = 0; i < ids.size(); i += cfg.batch_size) {
        const size_t end = std::min(ids.size(), i + cfg.batch_size);
        batches.emplace_back(ids.begin() + i, ids.begin() + end);
      }
    }
    shuffle_det(batches, erng);

    LossBreakdown accum;
    long n_batches = 0;
    sgd.zero_grad();

    for (const auto& batch_ids : batches) {
      std::vector<const CachedSample*> batch;
      for (const auto& id : batch_ids) batch.push_back(&cache.get(id));

      const auto [head_a, head_b] = ensemble::pair_schedule(batch_counter);
      nn::Tensor x = batch_input(batch);
      nn::Tensor onehot_x = batch_onehot(batch, true);
      nn::Tensor onehot_y = batch_onehot(batch, false);

      auto fwd = net.forward_train(x);

      // Distillation loss with per-batch weights from the batch's image size.
      double lambda1 = 0.0, lambda2 = 0.0;
      nn::msd_lambdas(std::max(x.h, x.w), cfg.model.r_min, cfg.model.r_max, &lambda1, &lambda2);
      std::vector<std::pair<nn::Var, float>> msd_terms;
      for (auto [es, ds] : cfg.model.msd_pairs) {
        nn::Var att_e = nn::spatial_softmax(nn::attention_l2(fwd.taps.enc[es - 1]));
        nn::Var att_d = nn::spatial_softmax(nn::attention_l2(fwd.taps.dec[ds - 1]));
        msd_terms.emplace_back(nn::kl_attention(att_e, att_d), static_cast<float>(lambda1));
        msd_terms.emplace_back(nn::kl_attention(att_d, att_e), static_cast<float>(lambda2));
      }
      nn::Var msd = nn::wsum(msd_terms);

      LossBreakdown bd;
      bd.kl = msd->scalar();
      std::array<nn::Var, 2> head_losses;
      const int scheduled[2] = {head_a, head_b};
      for (int hi = 0; hi < 2; ++hi) {
        nn::Var logits = net.head_fwd(fwd.features, scheduled[hi], true);
        nn::Var probs = nn::softmax_groups(logits, 3);
        nn::Var px = nn::slice_channels(probs, 0, 3);
        nn::Var py = nn::slice_channels(probs, 3, 6);
        nn::Var wmse = nn::wsum({{nn::wmse_loss(px, onehot_x, cfg.class_weights), 0.5f},
                                 {nn::wmse_loss(py, onehot_y, cfg.class_weights), 0.5f}});
        nn::Var wce = nn::wsum({{nn::wce_loss(px, onehot_x, cfg.class_weights), 0.5f},
                                {nn::wce_loss(py, onehot_y, cfg.class_weights), 0.5f}});
        nn::Var curl = nn::curl_surrogate(px, py, cfg.curl_tau);
        head_losses[hi] = nn::wsum({{wmse, 1.0f}, {wce, 1.0f}, {msd, 1.0f}, {curl, 1.0f}});

        bd.wmse += 0.5 * wmse->scalar();
        bd.wce += 0.5 * wce->scalar();
        bd.curl += 0.5 * curl->scalar();
        bd.head_loss[scheduled[hi]] = head_losses[hi]->scalar();
        if (hi == 0) {
          bd.curl_hard = curl_hard_ratio(probs_pair_from_tensor(probs->val, 0));
        }
      }

      nn::Var total =
          nn::wsum({{head_losses[0], static_cast<float>(state.alpha[head_a])},
                    {head_losses[1], static_cast<float>(state.alpha[head_b])}});
      bd.total = total->scalar();

      // Eq.-20 linearity must hold exactly on every batch.
      const double recombined = state.alpha[head_a] * head_losses[0]->scalar() +
                                state.alpha[head_b] * head_losses[1]->scalar();
      if (std::abs(recombined - bd.total) > 1e-6 * std::max(1.0, std::abs(bd.total))) {
        throw TrainingDiverged("loss assembly mismatch: total " + std::to_string(bd.total) +
                               " vs recombined " + std::to_string(recombined));
      }
      if (!std::isfinite(bd.total)) {
        json diag;
        diag["epoch"] = epoch;
        diag["batch_index"] = batch_counter;
        diag["sample_ids"] = batch_ids;
        diag["wmse"] = bd.wmse;
        diag["wce"] = bd.wce;
        diag["kl"] = bd.kl;
        diag["curl"] = bd.curl;
        std::ofstream dump(out_dir / "diverged_batch.json", std::ios::trunc);
        dump << diag.dump(2) << "\n";
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_counter) +
                               "; diagnostics in diverged_batch.json");
      }

      nn::backward(total);
      ++batch_counter;
      ++n_batches;
      accum.wmse += bd.wmse;
      accum.wce += bd.wce;
      accum.kl += bd.kl;
      accum.curl += bd.curl;
      accum.curl_hard += bd.curl_hard;
      accum.total += bd.total;
      for (int k = 0; k < 3; ++k) accum.head_loss[k] += bd.head_loss[k];

      // Trunk gradients accumulate over three batches; heads only ever see
      // their own batches' gradients.
      if (batch_counter % 3 == 0) {
        sgd.step();
        sgd.zero_grad();
      }
    }
    if (batch_counter % 3 != 0) {
      sgd.step();
      sgd.zero_grad();
    }

    // ---- end of epoch: Eqs. 10-14 on the active training set ----
    const size_t n_active = state.sample_ids.size();
    std::array<std::vector<double>, 3> head_eps;
    for (auto& v : head_eps) v.assign(n_active, 0.0);
    std::vector<double> ens_eps(n_active, 0.0);

    {
      std::map<int, std::vector<size_t>> eval_by_size;
      for (size_t i = 0; i < n_active; ++i) {
        eval_by_size[cache.record(state.sample_ids[i]).size].push_back(i);
      }
      const int eval_batch = 8;
      for (const auto& [size, idxs] : eval_by_size) {
        for (size_t start = 0; start < idxs.size(); start += eval_batch) {
          const size_t end = std::min(idxs.size(), start + eval_batch);
          std::vector<const CachedSample*> batch;
          for (size_t i = start; i < end; ++i) {
            batch.push_back(&cache.get(state.sample_ids[idxs[i]]));
          }
          auto logits = net.infer_all_heads(batch_input(batch));
          std::array<nn::Tensor, 3> probs;
          for (int k = 0; k < 3; ++k) probs[k] = nn::softmax_channel_groups(logits[k], 3);
          for (size_t b = 0; b < batch.size(); ++b) {
            std::array<ensemble::ClassProbPair, 3> pp = {
                probs_pair_from_tensor(probs[0], static_cast<int>(b)),
                probs_pair_from_tensor(probs[1], static_cast<int>(b)),
                probs_pair_from_tensor(probs[2], static_cast<int>(b))};
            const size_t sample_idx = idxs[start + b];
            for (int k = 0; k < 3; ++k) {
              head_eps[k][sample_idx] =
                  ensemble::per_sample_error(argmax_labels(pp[k]), batch[b]->labels);
            }
            ens_eps[sample_idx] = ensemble::per_sample_error(
                ensemble::aggregate(pp, state.alpha), batch[b]->labels);
          }
        }
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    std::array<double, 3> error_rates;
    for (int k = 0; k < 3; ++k) {
      error_rates[k] = ensemble::segmenter_error(head_eps[k], state.weights);
      stats.head_error[k] = error_rates[k];
    }
    stats.ensemble_error = ensemble::segmenter_error(ens_eps, state.weights);
    state.alpha = ensemble::update_alpha(error_rates);
    state.weights = ensemble::update_sample_weights(state.weights, ens_eps);
    auto outcome = ensemble::resample(state);
    if (outcome.pool_exhausted) {
      std::cerr << "[train] warning: replacement pool exhausted; continuing with "
                << state.sample_ids.size() << " samples\n";
    }
    state.alpha_history.push_back(state.alpha);
    state.epoch = epoch + 1;

    stats.alpha = state.alpha;
    stats.discarded = outcome.discarded;
    stats.replaced = outcome.replaced;
    if (n_batches > 0) {
      stats.mean_loss = accum;
      stats.mean_loss.wmse /= n_batches;
      stats.mean_loss.wce /= n_batches;
      stats.mean_loss.kl /= n_batches;
      stats.mean_loss.curl /= n_batches;
      stats.mean_loss.curl_hard /= n_batches;
      stats.mean_loss.total /= n_batches;
      for (auto& h : stats.mean_loss.head_loss) h /= n_batches;
    }

    // Held-out unwrap RMSE, piston-corrected, per size bucket.
    if (cfg.eval_every > 0 &&
        ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)) {
      std::map<int, std::pair<double, int>> by_size_acc;
      for (const auto* rec : manifest.by_split("val")) {
        RasterF32 phi = io::read_raster_f32(manifest.resolve(rec->wrapped_path));
        RasterI32 k = raster_cast<int32_t>(
            io::read_raster_f32(manifest.resolve(rec->wrap_count_path)));
        GradientLabelPair pred = predict_labels(net, phi, state.alpha);
        auto unwrapped = unwrap_from_labels(phi, std::move(pred), &k);
        const double r = num::rmse(unwrapped.psi, reference_phase(phi, k), true);
        auto& [sum, count] = by_size_acc[rec->size];
        sum += r;
        ++count;
      }
      for (const auto& [size, acc] : by_size_acc) {
        stats.val_rmse_by_size[size] = acc.first / acc.second;
      }
    }

    io::save_checkpoint(out_dir / "latest.umck", net, state);
    if (cfg.checkpoint_every > 0 &&
        ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.umck", epoch + 1);
      io::save_checkpoint(out_dir / name, net, state);
    }

    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json line;
    line["epoch"] = stats.epoch;
    line["loss"] = {{"wmse", stats.mean_loss.wmse},
                    {"wce", stats.mean_loss.wce},
                    {"kl", stats.mean_loss.kl},
                    {"curl", stats.mean_loss.curl},
                    {"curl_hard", stats.mean_loss.curl_hard},
                    {"head", stats.mean_loss.head_loss},
                    {"total", stats.mean_loss.total}};
    line["alpha"] = stats.alpha;
    line["head_error"] = stats.head_error;
    line["ensemble_error"] = stats.ensemble_error;
    line["discarded"] = stats.discarded;
    line["replaced"] = stats.replaced;
    if (!stats.val_rmse_by_size.empty()) {
      json v;
      for (const auto& [size, r] : stats.val_rmse_by_size) v[std::to_string(size)] = r;
      line["val_rmse"] = v;
    }
    line["seconds"] = stats.seconds;
    log << line.dump() << "\n";
    log.flush();

    result.history.push_back(std::move(stats));
  }

  return result;
}

}  // namespace umspu::train
