#include "umspu/losses.hpp"

#include "umspu/numerics.hpp"
#include "umspu/unwrap.hpp"

namespace umspu::train {

nn::Tensor onehot_from_labels(const RasterI8& labels) {
  nn::Tensor t(1, 3, labels.height(), labels.width());
  for (int i = 0; i < labels.height(); ++i) {
    for (int j = 0; j < labels.width(); ++j) {
      t.at(0, class_to_channel(labels.at(i, j)), i, j) = 1.0f;
    }
  }
  return t;
}

double wmse_value(const ensemble::ClassProbPair& probs, const GradientLabelPair& truth,
                  const std::array<float, 3>& beta) {
  const double lx =
      nn::wmse_loss(nn::leaf(probs.px), onehot_from_labels(truth.gx), beta)->scalar();
  const double ly =
      nn::wmse_loss(nn::leaf(probs.py), onehot_from_labels(truth.gy), beta)->scalar();
  return 0.5 * (lx + ly);
}

double wce_value(const ensemble::ClassProbPair& probs, const GradientLabelPair& truth,
                 const std::array<float, 3>& beta) {
  const double lx =
      nn::wce_loss(nn::leaf(probs.px), onehot_from_labels(truth.gx), beta)->scalar();
  const double ly =
      nn::wce_loss(nn::leaf(probs.py), onehot_from_labels(truth.gy), beta)->scalar();
  return 0.5 * (lx + ly);
}

double curl_surrogate_value(const ensemble::ClassProbPair& probs, float tau) {
  return nn::curl_surrogate(nn::leaf(probs.px), nn::leaf(probs.py), tau)->scalar();
}

double curl_hard_ratio(const ensemble::ClassProbPair& probs) {
  return num::detect_curl(argmax_labels(probs)).ratio;
}

double segmenter_loss_value(double wmse, double wce, double kl, double curl) {
  return wmse + wce + kl + curl;
}

}  // namespace umspu::train
