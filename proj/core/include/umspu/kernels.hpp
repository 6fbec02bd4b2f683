#pragma once

#include "umspu/tensor.hpp"

namespace umspu::nn {

/// Output spatial extent of a convolution along one axis.
int conv_out_extent(int in, int k, int stride, int pad, int dil);

/// im2col + SGEMM convolution. weight is (c_out, c_in, kh, kw); bias may be
/// null. All kernels are deterministic single-thread code paths.
Tensor conv2d_fwd(const Tensor& x, const Tensor& weight, const std::vector<float>* bias,
                  int stride, int pad, int dil);

/// Gradients for conv2d. Any of dx/dweight/dbias may be null; non-null
/// buffers are accumulated into (+=).
void conv2d_bwd(const Tensor& x, const Tensor& weight, const Tensor& dy, int stride, int pad,
                int dil, Tensor* dx, Tensor* dweight, std::vector<float>* dbias);

struct BnStats {
  std::vector<float> mean, var;  // per channel
};

/// Batch statistics over N*H*W per channel.
BnStats bn_batch_stats(const Tensor& x);

/// y = gamma * (x - mean) / sqrt(var + eps) + beta.
Tensor bn_apply(const Tensor& x, const std::vector<float>& mean, const std::vector<float>& var,
                const std::vector<float>& gamma, const std::vector<float>& beta, float eps);

Tensor relu_fwd(const Tensor& x);
Tensor upsample2x_fwd(const Tensor& x);

/// Channel-group softmax (group_size consecutive channels per group).
Tensor softmax_channel_groups(const Tensor& x, int group_size);

/// Per-pixel channel L2 norm: (N,C,H,W) -> (N,1,H,W).
Tensor attention_l2_fwd(const Tensor& x);

/// Softmax over all H*W positions, per (n, c) plane.
Tensor spatial_softmax_fwd(const Tensor& x);

}  // namespace umspu::nn
