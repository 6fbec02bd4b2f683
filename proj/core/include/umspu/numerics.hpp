#pragma once

#include <optional>

#include "umspu/labels.hpp"
#include "umspu/raster.hpp"

namespace umspu::num {

constexpr double kTwoPi = 6.283185307179586476925286766559;

/// phi in (-pi, pi] and integer k with psi = phi + 2*pi*k at every pixel.
struct WrapResult {
  RasterF32 phi;
  RasterI32 k;
};
WrapResult wrap(const RasterF32& psi);

/// Wraps a single value into (-pi, pi].
double wrap_scalar(double x);

struct CurlReport {
  RasterI8 curl_mask;  // (H-1) x (W-1), 1 at curl points
  long n_curl = 0;
  long n_gradient = 0;
  double ratio = 0.0;
};

/// Detects curl points with the fixed 2x2 kernels Kx = [[1,1],[0,0]] applied
/// to gx and Ky = [[1,0],[1,0]] applied to gy (valid mode, stride 1). A point
/// where either response hits +-2 is a curl point. n_gradient counts nonzero
/// label pixels over both directions.
CurlReport detect_curl(const GradientLabelPair& labels);

/// Least-squares wrap-count field from gradient labels under Neumann boundary
/// conditions, solved with a 2-D type-II cosine transform. The divergence is
///   rho(i,j) = gx(i,j) - gx(i,j-1) + gy(i,j) - gy(i-1,j)
/// with out-of-range terms zero; spectral coefficients are divided by
/// 2cos(pi*u/W) + 2cos(pi*v/H) - 4 and the zero-frequency coefficient is set
/// to 0, so the returned field has zero mean (piston-free). Exact for
/// curl-free integer gradients.
RasterF32 dct_poisson_solve(const GradientLabelPair& labels);

/// Float-input overload used by linearity checks.
RasterF32 dct_poisson_solve(const RasterF32& gx, const RasterF32& gy);

/// Rounds to nearest integer; with a reference, shifts by the single integer
/// c = round(mean(reference - rounded)) that minimizes RMSE.
RasterI32 round_and_anchor(const RasterF32& k_float,
                           const RasterI32* reference = nullptr);

RasterF32 reconstruct_phase(const RasterF32& phi, const RasterI32& k);
RasterF32 reconstruct_phase(const RasterF32& phi, const RasterF32& k);

/// Classical sequential unwrapper (first column, then rows left to right).
/// Exact on clean Itoh-satisfying inputs; unreliable under noise. Test oracle
/// only.
RasterF32 itoh_unwrap_oracle(const RasterF32& phi);

/// Root mean square error. With piston_correct, the best global 2*pi*c offset
/// (c integer) is removed first.
double rmse(const RasterF32& pred, const RasterF32& truth, bool piston_correct);

}  // namespace umspu::num
