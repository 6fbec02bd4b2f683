#pragma once

#include "umspu/boost_ensemble.hpp"
#include "umspu/msdnet.hpp"
#include "umspu/numerics.hpp"

namespace umspu {

nn::Tensor tensor_from_raster(const RasterF32& r);
RasterF32 raster_from_tensor(const nn::Tensor& t, int ni = 0, int ci = 0);

/// Splits 6-channel head logits into per-direction softmax probability maps.
ensemble::ClassProbPair probs_from_logits(const nn::Tensor& logits, int ni = 0);

/// Hard per-direction labels from one head's probabilities (unit vote).
GradientLabelPair argmax_labels(const ensemble::ClassProbPair& probs);

/// Ensemble label prediction for one wrapped-phase raster.
GradientLabelPair predict_labels(const nn::MsdNet& net, const RasterF32& phi,
                                 const std::array<double, 3>& alpha);
GradientLabelPair predict_labels(const nn::FusedNet& net, const RasterF32& phi,
                                 const std::array<double, 3>& alpha);

struct UnwrapResult {
  GradientLabelPair labels;
  RasterF32 k_float;  // piston-free least-squares solution
  RasterI32 k;        // rounded (anchored to the reference when given)
  RasterF32 psi;      // phi + 2*pi*k
};

/// Label maps -> least-squares wrap count -> reconstructed phase.
UnwrapResult unwrap_from_labels(const RasterF32& phi, GradientLabelPair labels,
                                const RasterI32* k_reference = nullptr);

/// Reference unwrapped phase consistent with a wrapped input and a known
/// wrap count: phi + 2*pi*k. Evaluation compares reconstructions against
/// this, so reported RMSE measures unwrapping errors only.
RasterF32 reference_phase(const RasterF32& phi, const RasterI32& k);

}  // namespace umspu
