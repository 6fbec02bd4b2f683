#include "umspu/numerics.hpp"

#include <cmath>
#include <mutex>
#include <vector>

#include <fftw3.h>

namespace umspu::num {

namespace {
// FFTW planning is not thread-safe; execution is.
std::mutex g_fftw_plan_mutex;
}  // namespace

double wrap_scalar(double x) {
  double p = std::remainder(x, kTwoPi);  // [-pi, pi]
  if (p <= -M_PI) p += kTwoPi;
  return p;
}

WrapResult wrap(const RasterF32& psi) {
  if (!all_finite(psi)) throw ValidationError("wrap: non-finite unwrapped phase");
  WrapResult out{RasterF32(psi.height(), psi.width()), RasterI32(psi.height(), psi.width())};
  for (size_t i = 0; i < psi.size(); ++i) {
    const double v = psi[i];
    const double phi = wrap_scalar(v);
    const double k = std::round((v - phi) / kTwoPi);
    out.k[i] = static_cast<int32_t>(k);
    // Recompute phi from the integer k so psi == phi + 2*pi*k holds to f32
    // round-off even when |psi| is large.
    out.phi[i] = static_cast<float>(v - kTwoPi * k);
  }
  return out;
}

CurlReport detect_curl(const GradientLabelPair& labels) {
  labels.validate();
  const int h = labels.height(), w = labels.width();
  CurlReport rep;
  rep.curl_mask = RasterI8(h - 1, w - 1, 0);
  for (int i = 0; i < h - 1; ++i) {
    for (int j = 0; j < w - 1; ++j) {
      const int fx = labels.gx.at(i, j) + labels.gx.at(i, j + 1);
      const int fy = labels.gy.at(i, j) + labels.gy.at(i + 1, j);
      if (fx == 2 || fx == -2 || fy == 2 || fy == -2) {
        rep.curl_mask.at(i, j) = 1;
        ++rep.n_curl;
      }
    }
  }
  for (size_t i = 0; i < labels.gx.size(); ++i) {
    if (labels.gx[i] != 0) ++rep.n_gradient;
    if (labels.gy[i] != 0) ++rep.n_gradient;
  }
  rep.ratio = static_cast<double>(rep.n_curl) / static_cast<double>(std::max(rep.n_gradient, 1L));
  return rep;
}

namespace {

RasterF32 solve_divergence(const std::vector<double>& rho, int h, int w) {
  std::vector<double> spec(static_cast<size_t>(h) * w);

  {
    std::lock_guard<std::mutex> lock(g_fftw_plan_mutex);
    fftw_plan fwd = fftw_plan_r2r_2d(h, w, const_cast<double*>(rho.data()), spec.data(),
                                     FFTW_REDFT10, FFTW_REDFT10, FFTW_ESTIMATE);
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);
  }

  for (int v = 0; v < h; ++v) {
    const double cy = 2.0 * std::cos(M_PI * v / h);
    for (int u = 0; u < w; ++u) {
      const double lam = cy + 2.0 * std::cos(M_PI * u / w) - 4.0;
      double& c = spec[static_cast<size_t>(v) * w + u];
      c = (lam == 0.0) ? 0.0 : c / lam;
    }
  }

  std::vector<double> sol(static_cast<size_t>(h) * w);
  {
    std::lock_guard<std::mutex> lock(g_fftw_plan_mutex);
    fftw_plan inv = fftw_plan_r2r_2d(h, w, spec.data(), sol.data(), FFTW_REDFT01,
                                     FFTW_REDFT01, FFTW_ESTIMATE);
    fftw_execute(inv);
    fftw_destroy_plan(inv);
  }

  // REDFT10 followed by REDFT01 scales by 2H * 2W.
  const double scale = 1.0 / (4.0 * h * w);
  RasterF32 out(h, w);
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(sol[i] * scale);
  return out;
}

template <typename GetX, typename GetY>
RasterF32 poisson_from_gradients(int h, int w, GetX gx, GetY gy) {
  std::vector<double> rho(static_cast<size_t>(h) * w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double r = 0.0;
      if (j < w - 1) r += gx(i, j);
      if (j > 0) r -= gx(i, j - 1);
      if (i < h - 1) r += gy(i, j);
      if (i > 0) r -= gy(i - 1, j);
      rho[static_cast<size_t>(i) * w + j] = r;
    }
  }
  return solve_divergence(rho, h, w);
}

}  // namespace

RasterF32 dct_poisson_solve(const GradientLabelPair& labels) {
  labels.validate();
  const int h = labels.height(), w = labels.width();
  return poisson_from_gradients(
      h, w, [&](int i, int j) { return static_cast<double>(labels.gx.at(i, j)); },
      [&](int i, int j) { return static_cast<double>(labels.gy.at(i, j)); });
}

RasterF32 dct_poisson_solve(const RasterF32& gx, const RasterF32& gy) {
  require_same_shape(gx, gy, "dct_poisson_solve");
  return poisson_from_gradients(
      gx.height(), gx.width(), [&](int i, int j) { return static_cast<double>(gx.at(i, j)); },
      [&](int i, int j) { return static_cast<double>(gy.at(i, j)); });
}

RasterI32 round_and_anchor(const RasterF32& k_float, const RasterI32* reference) {
  if (!all_finite(k_float)) throw ValidationError("round_and_anchor: non-finite input");
  RasterI32 out(k_float.height(), k_float.width());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<int32_t>(std::lround(k_float[i]));
  }
  if (reference != nullptr) {
    require_same_shape(k_float, *reference, "round_and_anchor");
    double acc = 0.0;
    for (size_t i = 0; i < out.size(); ++i) acc += (*reference)[i] - out[i];
    const int32_t c = static_cast<int32_t>(std::lround(acc / static_cast<double>(out.size())));
    for (size_t i = 0; i < out.size(); ++i) out[i] += c;
  }
  return out;
}

RasterF32 reconstruct_phase(const RasterF32& phi, const RasterI32& k) {
  require_same_shape(phi, k, "reconstruct_phase");
  RasterF32 out(phi.height(), phi.width());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(phi[i] + kTwoPi * k[i]);
  }
  return out;
}

RasterF32 reconstruct_phase(const RasterF32& phi, const RasterF32& k) {
  require_same_shape(phi, k, "reconstruct_phase");
  RasterF32 out(phi.height(), phi.width());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(phi[i] + kTwoPi * static_cast<double>(k[i]));
  }
  return out;
}

RasterF32 itoh_unwrap_oracle(const RasterF32& phi) {
  const int h = phi.height(), w = phi.width();
  RasterF32 out(h, w);
  out.at(0, 0) = phi.at(0, 0);
  for (int i = 1; i < h; ++i) {
    const double prev = out.at(i - 1, 0);
    const double cur = phi.at(i, 0);
    out.at(i, 0) = static_cast<float>(cur + kTwoPi * std::round((prev - cur) / kTwoPi));
  }
  for (int i = 0; i < h; ++i) {
    for (int j = 1; j < w; ++j) {
      const double prev = out.at(i, j - 1);
      const double cur = phi.at(i, j);
      out.at(i, j) = static_cast<float>(cur + kTwoPi * std::round((prev - cur) / kTwoPi));
    }
  }
  return out;
}

double rmse(const RasterF32& pred, const RasterF32& truth, bool piston_correct) {
  require_same_shape(pred, truth, "rmse");
  double offset = 0.0;
  if (piston_correct) {
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += truth[i] - pred[i];
    offset = kTwoPi * std::round(acc / static_cast<double>(pred.size()) / kTwoPi);
  }
  double sq = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = (pred[i] + offset) - truth[i];
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<double>(pred.size()));
}

}  // namespace umspu::num
