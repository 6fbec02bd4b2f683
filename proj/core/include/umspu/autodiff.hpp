#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "umspu/kernels.hpp"
#include "umspu/tensor.hpp"

namespace umspu::nn {

constexpr float kLogEps = 1e-8f;  // floor inside every log for f32 stability

struct Node;
using Var = std::shared_ptr<Node>;

/// One vertex of the reverse-mode tape. Gradients accumulate into `grad`
/// (allocated lazily); `backward_fn` scatters this node's grad to parents.
struct Node {
  Tensor val;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
  /// Scalar outputs keep a double-precision copy so loss values survive
  /// finite-difference comparisons.
  double dval = std::numeric_limits<double>::quiet_NaN();

  float* grad_data() { return grad.v.data(); }
  void ensure_grad() {
    if (grad.count() != val.count()) {
      grad = Tensor(val.n, val.c, val.h, val.w);
    }
  }
  double scalar() const { return std::isnan(dval) ? val.v[0] : dval; }
};

Var leaf(Tensor value, bool requires_grad = false);

/// Running statistics owned by a batch-norm layer.
struct BnRunning {
  std::vector<float> mean, var;
  explicit BnRunning(int channels = 0)
      : mean(channels, 0.0f), var(channels, 1.0f) {}
};

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad, int dil);

/// Training-mode batch norm: normalizes with batch statistics and updates
/// `running` as a side effect.
Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, BnRunning& running,
                    float eps, float momentum);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var upsample2x(const Var& x);

/// Per-pixel channel L2 norm (raw attention map).
Var attention_l2(const Var& x);

/// Softmax over spatial positions (soft attention label).
Var spatial_softmax(const Var& x);

/// (1/(H*W)) * sum p*log(p/q) with eps-floored logs, averaged over batch.
Var kl_attention(const Var& p, const Var& q);

/// Channel softmax in consecutive groups of `group_size`.
Var softmax_groups(const Var& x, int group_size);

/// Copies channels [c0, c1) into a new tensor.
Var slice_channels(const Var& x, int c0, int c1);

/// Weighted MSE over 3-class probabilities vs one-hot targets (Eq.-style
/// 1/(C*H*W) normalization, averaged over batch).
Var wmse_loss(const Var& probs, const Tensor& onehot, const std::array<float, 3>& beta);

/// Weighted cross entropy, 1/(H*W) normalization, eps-floored log.
Var wce_loss(const Var& probs, const Tensor& onehot, const std::array<float, 3>& beta);

/// Differentiable curl ratio: soft count of fixed-kernel responses near +-2
/// over the soft count of gradient points. See losses.hpp for the reported
/// hard counterpart.
Var curl_surrogate(const Var& probs_x, const Var& probs_y, float tau);

/// sum_i coeff_i * v_i over scalar nodes.
Var wsum(const std::vector<std::pair<Var, float>>& terms);

/// Reverse-mode sweep from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

}  // namespace umspu::nn
