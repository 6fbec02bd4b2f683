#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "umspu/autodiff.hpp"
#include "umspu/raster.hpp"
#include "umspu/rng.hpp"
#include "umspu/tensor.hpp"

namespace umspu::nn {

struct ModelConfig {
  int stages = 4;
  std::vector<int> channels = {32, 64, 128, 256};
  /// Mutual-distillation pairs (encoder stage, decoder stage); equal stages
  /// share a spatial size in this topology. Default: every scale.
  std::vector<std::pair<int, int>> msd_pairs = {{1, 1}, {2, 2}, {3, 3}, {4, 4}};
  /// Preset min/max input sizes for the distillation weight schedule.
  int r_min = 64, r_max = 256;

  void validate() const;
  int size_multiple() const { return 1 << (stages - 1); }
};

ModelConfig model_config_from_json(const std::string& json_text);
std::string model_config_to_json(const ModelConfig& cfg);

/// Raw or spatially normalized attention map of a feature tensor.
struct AttentionMap {
  RasterF32 values;
  bool normalized = false;
};

/// Channel L2 norm of a single-sample feature tensor.
AttentionMap attention_map(const Tensor& feature);
/// Spatial softmax of a raw attention map; sums to 1.
AttentionMap attention_soft(const AttentionMap& raw);
/// (1/(H*W)) * sum p*log(p/q), eps-floored. Both maps must be normalized.
double kl_attention_value(const AttentionMap& p, const AttentionMap& q);

/// Distillation weights for input size R, clamped to [r_min, r_max].
void msd_lambdas(int r, int r_min, int r_max, double* lambda1, double* lambda2);

struct Conv2dLayer {
  Var w;  // (co, ci, kh, kw)
  Var b;  // (1, co, 1, 1) or null
  int stride = 1, pad = 1, dil = 1;

  Var fwd(const Var& x) const { return nn::conv2d(x, w, b, stride, pad, dil); }
  Tensor infer(const Tensor& x) const {
    return conv2d_fwd(x, w->val, b ? &b->val.v : nullptr, stride, pad, dil);
  }
};

struct BnLayer {
  Var gamma, beta;
  BnRunning running;
  float eps = 1e-5f;
  float momentum = 0.1f;

  Var fwd(const Var& x) { return batchnorm_train(x, gamma, beta, running, eps, momentum); }
  Tensor infer(const Tensor& x) const {
    return bn_apply(x, running.mean, running.var, gamma->val.v, beta->val.v, eps);
  }
};

/// conv + BN + ReLU, the plain (non-branched) unit.
struct ConvBnRelu {
  Conv2dLayer conv;
  BnLayer bn;
  Var fwd(const Var& x, bool train);
  Tensor infer(const Tensor& x) const;
};

/// Multi-branch trainable block: 3x3 + 1x1 + identity branches, each with
/// its own normalization, summed and rectified. Structurally
/// re-parameterizable into a single 3x3 convolution.
struct FusibleBlock {
  Conv2dLayer c3, c1;
  BnLayer b3, b1, bid;
  bool has_identity = false;

  Var fwd(const Var& x, bool train);
  Tensor infer(const Tensor& x) const;

  /// Equivalent single 3x3 kernel + bias from the branch weights and their
  /// normalization statistics.
  void fuse_into(Tensor& weight, std::vector<float>& bias) const;
};

/// One dilated weak segmenter: 3x3 dilated conv + BN + ReLU, then 1x1 to two
/// 3-class logit maps (channels 0-2: x direction, 3-5: y direction).
struct SegmenterHead {
  int dilation = 1;
  ConvBnRelu pre;
  Conv2dLayer out;

  Var fwd(const Var& features, bool train);
  Tensor infer(const Tensor& features) const;
};

class FusedNet;

/// Encoder-decoder with fusible blocks, skip connections and per-stage
/// taps for mutual self-distillation, plus the three segmenter heads.
class MsdNet {
public:
  MsdNet(ModelConfig cfg, uint64_t seed);

  struct Taps {
    std::vector<Var> enc, dec;  // index 0 = stage 1
  };
  struct TrainOut {
    Var features;  // final decoder features, input to the heads
    Taps taps;
  };
  TrainOut forward_train(const Tensor& x);

  struct InferOut {
    Tensor features;
    std::vector<Tensor> enc, dec;
  };
  InferOut infer_features(const Tensor& x, bool want_taps = false) const;

  Var head_fwd(const Var& features, int head, bool train);
  Tensor head_infer(const Tensor& features, int head) const;

  /// Head logits for a batch, all three heads (inference mode).
  std::array<Tensor, 3> infer_all_heads(const Tensor& x) const;

  const ModelConfig& config() const { return cfg_; }

  /// Trainable parameters in a stable order.
  std::vector<Var> parameters();
  /// Visits every stored tensor (weights + running stats) by stable name.
  void visit_tensors(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit_tensors(const std::function<void(const std::string&, const Tensor&)>& fn) const;

  size_t param_count() const;
  /// Analytic multiply-accumulate count for one HxW single-channel input.
  size_t mac_count(int h, int w) const;

  void check_input(const Tensor& x) const;

  friend FusedNet reparameterize(const MsdNet& net);

private:
  ModelConfig cfg_;
  ConvBnRelu stem_;
  std::vector<FusibleBlock> enc_blocks_;   // stage s block
  std::vector<ConvBnRelu> down_;           // stage s -> s+1
  std::vector<FusibleBlock> dec_blocks_;   // stage s block
  std::vector<ConvBnRelu> up_;             // stage s+1 -> s
  std::array<SegmenterHead, 3> heads_;
};

/// Inference-only model produced by structural re-parameterization: every
/// block collapsed to one convolution, every BN folded away.
class FusedNet {
public:
  struct FusedConv {
    Tensor w;
    std::vector<float> b;
    int stride = 1, pad = 1, dil = 1;
  };

  Tensor infer_features(const Tensor& x) const;
  Tensor head_infer(const Tensor& features, int head) const;
  std::array<Tensor, 3> infer_all_heads(const Tensor& x) const;

  const ModelConfig& config() const { return cfg_; }
  size_t param_count() const;
  size_t mac_count(int h, int w) const;
  void check_input(const Tensor& x) const;

  void visit_tensors(const std::function<void(const std::string&, Tensor&)>& fn);

  friend FusedNet reparameterize(const MsdNet& net);
  friend FusedNet fused_from_tensors(const ModelConfig& cfg,
                                     std::map<std::string, Tensor>& tensors);

private:
  explicit FusedNet(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  ModelConfig cfg_;
  FusedConv stem_;
  std::vector<FusedConv> enc_, down_, dec_, up_;
  struct FusedHead {
    FusedConv pre, out;
  };
  std::array<FusedHead, 3> heads_;
};

/// Collapses the trained multi-branch model into its single-branch
/// inference form. Forward outputs agree within float tolerance.
FusedNet reparameterize(const MsdNet& net);

/// Rebuilds a fused model from a checkpoint's tensor table.
FusedNet fused_from_tensors(const ModelConfig& cfg, std::map<std::string, Tensor>& tensors);

}  // namespace umspu::nn
