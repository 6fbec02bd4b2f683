#pragma once

#include <array>

#include "umspu/autodiff.hpp"
#include "umspu/boost_ensemble.hpp"
#include "umspu/labels.hpp"

namespace umspu::train {

/// One-hot (3,H,W) encoding of a label raster, channel order 0/+1/-1.
nn::Tensor onehot_from_labels(const RasterI8& labels);

/// Plain-value loss evaluations (the same code paths the trainer
/// differentiates, read out as scalars).
double wmse_value(const ensemble::ClassProbPair& probs, const GradientLabelPair& truth,
                  const std::array<float, 3>& beta);
double wce_value(const ensemble::ClassProbPair& probs, const GradientLabelPair& truth,
                 const std::array<float, 3>& beta);
double curl_surrogate_value(const ensemble::ClassProbPair& probs, float tau);

/// Hard Eq.-18-style counterpart reported next to the differentiable
/// surrogate: curl ratio of the argmax label maps.
double curl_hard_ratio(const ensemble::ClassProbPair& probs);

/// Plain sum of the four terms (weighted MSE, weighted CE, distillation KL,
/// curl) for one segmenter.
double segmenter_loss_value(double wmse, double wce, double kl, double curl);

}  // namespace umspu::train
