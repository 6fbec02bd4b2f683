#include "umspu/unwrap.hpp"

namespace umspu {

nn::Tensor tensor_from_raster(const RasterF32& r) {
  nn::Tensor t(1, 1, r.height(), r.width());
  std::copy(r.data(), r.data() + r.size(), t.v.begin());
  return t;
}

RasterF32 raster_from_tensor(const nn::Tensor& t, int ni, int ci) {
  RasterF32 r(t.h, t.w);
  const float* src = t.ptr(ni, ci);
  std::copy(src, src + r.size(), r.data());
  return r;
}

ensemble::ClassProbPair probs_from_logits(const nn::Tensor& logits, int ni) {
  if (logits.c != 6) {
    throw ValidationError("probs_from_logits: expected 6 channels, got " +
                          std::to_string(logits.c));
  }
  nn::Tensor single(1, 6, logits.h, logits.w);
  std::copy(logits.ptr(ni, 0), logits.ptr(ni, 0) + 6 * logits.plane(), single.v.begin());
  nn::Tensor probs = nn::softmax_channel_groups(single, 3);
  ensemble::ClassProbPair out;
  out.px = nn::Tensor(1, 3, logits.h, logits.w);
  out.py = nn::Tensor(1, 3, logits.h, logits.w);
  const size_t plane = probs.plane();
  std::copy(probs.ptr(0, 0), probs.ptr(0, 0) + 3 * plane, out.px.v.begin());
  std::copy(probs.ptr(0, 3), probs.ptr(0, 3) + 3 * plane, out.py.v.begin());
  return out;
}

GradientLabelPair argmax_labels(const ensemble::ClassProbPair& probs) {
  return ensemble::aggregate({probs, probs, probs}, {1.0, 0.0, 0.0});
}

namespace {

template <typename Net>
GradientLabelPair predict_impl(const Net& net, const RasterF32& phi,
                               const std::array<double, 3>& alpha) {
  auto logits = net.infer_all_heads(tensor_from_raster(phi));
  std::array<ensemble::ClassProbPair, 3> probs = {
      probs_from_logits(logits[0]), probs_from_logits(logits[1]),
      probs_from_logits(logits[2])};
  return ensemble::aggregate(probs, alpha);
}

}  // namespace

GradientLabelPair predict_labels(const nn::MsdNet& net, const RasterF32& phi,
                                 const std::array<double, 3>& alpha) {
  return predict_impl(net, phi, alpha);
}

GradientLabelPair predict_labels(const nn::FusedNet& net, const RasterF32& phi,
                                 const std::array<double, 3>& alpha) {
  return predict_impl(net, phi, alpha);
}

UnwrapResult unwrap_from_labels(const RasterF32& phi, GradientLabelPair labels,
                                const RasterI32* k_reference) {
  require_same_shape(phi, labels.gx, "unwrap_from_labels");
  UnwrapResult out;
  out.labels = std::move(labels);
  out.k_float = num::dct_poisson_solve(out.labels);
  out.k = num::round_and_anchor(out.k_float, k_reference);
  out.psi = num::reconstruct_phase(phi, out.k);
  return out;
}

RasterF32 reference_phase(const RasterF32& phi, const RasterI32& k) {
  return num::reconstruct_phase(phi, k);
}

}  // namespace umspu
