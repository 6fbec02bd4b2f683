#include "umspu/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>

namespace umspu::nn {

int conv_out_extent(int in, int k, int stride, int pad, int dil) {
  const int eff = dil * (k - 1) + 1;
  return (in + 2 * pad - eff) / stride + 1;
}

namespace {

// col is (c_in*kh*kw) x (ho*wo), row-major.
void im2col(const float* x, int c, int h, int w, int kh, int kw, int stride, int pad, int dil,
            int ho, int wo, float* col) {
  const size_t plane = static_cast<size_t>(h) * w;
  const size_t out_plane = static_cast<size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* dst = col + ((static_cast<size_t>(ci) * kh + ki) * kw + kj) * out_plane;
        const float* src = x + ci * plane;
        const int oy = ki * dil - pad;
        const int ox = kj * dil - pad;
        for (int i = 0; i < ho; ++i) {
          const int yi = i * stride + oy;
          if (yi < 0 || yi >= h) {
            std::fill(dst, dst + wo, 0.0f);
            dst += wo;
            continue;
          }
          const float* row = src + static_cast<size_t>(yi) * w;
          if (stride == 1) {
            const int j0 = std::max(0, -ox);
            const int j1 = std::min(wo, w - ox);
            for (int j = 0; j < j0; ++j) dst[j] = 0.0f;
            for (int j = j0; j < j1; ++j) dst[j] = row[j + ox];
            for (int j = std::max(j0, j1); j < wo; ++j) dst[j] = 0.0f;
          } else {
            for (int j = 0; j < wo; ++j) {
              const int xj = j * stride + ox;
              dst[j] = (xj >= 0 && xj < w) ? row[xj] : 0.0f;
            }
          }
          dst += wo;
        }
      }
    }
  }
}

// Inverse scatter of im2col: accumulates col into dx.
void col2im(const float* col, int c, int h, int w, int kh, int kw, int stride, int pad, int dil,
            int ho, int wo, float* dx) {
  const size_t plane = static_cast<size_t>(h) * w;
  const size_t out_plane = static_cast<size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* src = col + ((static_cast<size_t>(ci) * kh + ki) * kw + kj) * out_plane;
        float* dst = dx + ci * plane;
        const int oy = ki * dil - pad;
        const int ox = kj * dil - pad;
        for (int i = 0; i < ho; ++i) {
          const int yi = i * stride + oy;
          if (yi < 0 || yi >= h) {
            src += wo;
            continue;
          }
          float* row = dst + static_cast<size_t>(yi) * w;
          for (int j = 0; j < wo; ++j) {
            const int xj = j * stride + ox;
            if (xj >= 0 && xj < w) row[xj] += src[j];
          }
          src += wo;
        }
      }
    }
  }
}

}  // namespace

namespace {

// The batch shares one wide column buffer, so the GEMM sees
// (co x K) * (K x N*ho*wo) instead of N skinny multiplies. The buffer is
// laid out K x (N*out_plane) with each sample occupying a contiguous slab
// of columns, which im2col/col2im fill per sample via a row stride.
void im2col_batch(const Tensor& x, int kh, int kw, int stride, int pad, int dil, int ho,
                  int wo, std::vector<float>& col) {
  const int K = x.c * kh * kw;
  const size_t out_plane = static_cast<size_t>(ho) * wo;
  const size_t cols = static_cast<size_t>(x.n) * out_plane;
  col.resize(static_cast<size_t>(K) * cols);
  for (int ni = 0; ni < x.n; ++ni) {
    // per-sample slab: row stride is the full batch width
    float* base = col.data() + ni * out_plane;
    for (int ci = 0; ci < x.c; ++ci) {
      for (int ki = 0; ki < kh; ++ki) {
        for (int kj = 0; kj < kw; ++kj) {
          const int row = (ci * kh + ki) * kw + kj;
          float* dst = base + static_cast<size_t>(row) * cols;
          const float* src = x.ptr(ni, ci);
          const int oy = ki * dil - pad;
          const int ox = kj * dil - pad;
          for (int i = 0; i < ho; ++i) {
            const int yi = i * stride + oy;
            if (yi < 0 || yi >= x.h) {
              std::fill(dst, dst + wo, 0.0f);
              dst += wo;
              continue;
            }
            const float* rowp = src + static_cast<size_t>(yi) * x.w;
            if (stride == 1) {
              const int j0 = std::max(0, -ox);
              const int j1 = std::min(wo, x.w - ox);
              for (int j = 0; j < j0; ++j) dst[j] = 0.0f;
              for (int j = j0; j < j1; ++j) dst[j] = rowp[j + ox];
              for (int j = std::max(j0, j1); j < wo; ++j) dst[j] = 0.0f;
            } else {
              for (int j = 0; j < wo; ++j) {
                const int xj = j * stride + ox;
                dst[j] = (xj >= 0 && xj < x.w) ? rowp[xj] : 0.0f;
              }
            }
            dst += wo;
          }
        }
      }
    }
  }
}

void col2im_batch(const std::vector<float>& col, Tensor& dx, int kh, int kw, int stride,
                  int pad, int dil, int ho, int wo) {
  const size_t out_plane = static_cast<size_t>(ho) * wo;
  const size_t cols = static_cast<size_t>(dx.n) * out_plane;
  for (int ni = 0; ni < dx.n; ++ni) {
    const float* base = col.data() + ni * out_plane;
    for (int ci = 0; ci < dx.c; ++ci) {
      for (int ki = 0; ki < kh; ++ki) {
        for (int kj = 0; kj < kw; ++kj) {
          const int row = (ci * kh + ki) * kw + kj;
          const float* src = base + static_cast<size_t>(row) * cols;
          float* dst = dx.ptr(ni, ci);
          const int oy = ki * dil - pad;
          const int ox = kj * dil - pad;
          for (int i = 0; i < ho; ++i) {
            const int yi = i * stride + oy;
            if (yi < 0 || yi >= dx.h) {
              src += wo;
              continue;
            }
            float* rowp = dst + static_cast<size_t>(yi) * dx.w;
            if (stride == 1) {
              const int j0 = std::max(0, -ox);
              const int j1 = std::min(wo, dx.w - ox);
              for (int j = j0; j < j1; ++j) rowp[j + ox] += src[j];
            } else {
              for (int j = 0; j < wo; ++j) {
                const int xj = j * stride + ox;
                if (xj >= 0 && xj < dx.w) rowp[xj] += src[j];
              }
            }
            src += wo;
          }
        }
      }
    }
  }
}

// Direct stride-1 convolution on a zero-padded copy of the input. The
// inner loops run unit-stride over rows on both sides, which vectorizes
// well; this beats im2col+GEMM for the narrow layers where the GEMM M
// dimension is a handful of output channels.
thread_local std::vector<float> g_pad_buf;

void pad_input(const float* x, int c, int h, int w, int pad, std::vector<float>& out) {
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  out.assign(static_cast<size_t>(c) * hp * wp, 0.0f);
  for (int ci = 0; ci < c; ++ci) {
    const float* src = x + static_cast<size_t>(ci) * h * w;
    float* dst = out.data() + (static_cast<size_t>(ci) * hp + pad) * wp + pad;
    for (int i = 0; i < h; ++i) {
      std::copy(src + static_cast<size_t>(i) * w, src + static_cast<size_t>(i + 1) * w,
                dst + static_cast<size_t>(i) * wp);
    }
  }
}

void conv2d_fwd_direct(const Tensor& x, const Tensor& weight, const std::vector<float>* bias,
                       int pad, int dil, Tensor& y) {
  const int co = weight.n, ci = weight.c, kh = weight.h, kw = weight.w;
  const int h = x.h, w = x.w;
  const int wp = w + 2 * pad;
  const size_t wplane = static_cast<size_t>(kh) * kw;
  for (int ni = 0; ni < x.n; ++ni) {
    pad_input(x.ptr(ni), ci, h, w, pad, g_pad_buf);
    const int hp = h + 2 * pad;
    for (int o = 0; o < co; ++o) {
      float* yo = y.ptr(ni, o);
      const float b = bias != nullptr ? (*bias)[o] : 0.0f;
      std::fill(yo, yo + static_cast<size_t>(h) * w, b);
      for (int cin = 0; cin < ci; ++cin) {
        const float* xp = g_pad_buf.data() + static_cast<size_t>(cin) * hp * wp;
        const float* wk = weight.v.data() + (static_cast<size_t>(o) * ci + cin) * wplane;
        for (int ki = 0; ki < kh; ++ki) {
          for (int kj = 0; kj < kw; ++kj) {
            const float wv = wk[static_cast<size_t>(ki) * kw + kj];
            if (wv == 0.0f) continue;
            const int oy = ki * dil;
            const int ox = kj * dil;
            for (int i = 0; i < h; ++i) {
              const float* src = xp + static_cast<size_t>(i + oy) * wp + ox;
              float* dst = yo + static_cast<size_t>(i) * w;
              for (int j = 0; j < w; ++j) dst[j] += wv * src[j];
            }
          }
        }
      }
    }
  }
}

void conv2d_bwd_direct(const Tensor& x, const Tensor& weight, const Tensor& dy, int pad,
                       int dil, Tensor* dx, Tensor* dweight, std::vector<float>* dbias) {
  const int co = weight.n, ci = weight.c, kh = weight.h, kw = weight.w;
  const int h = x.h, w = x.w;
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  const size_t wplane = static_cast<size_t>(kh) * kw;
  std::vector<float> dpad;
  for (int ni = 0; ni < x.n; ++ni) {
    pad_input(x.ptr(ni), ci, h, w, pad, g_pad_buf);
    if (dx != nullptr) dpad.assign(static_cast<size_t>(ci) * hp * wp, 0.0f);
    for (int o = 0; o < co; ++o) {
      const float* dyo = dy.ptr(ni, o);
      if (dbias != nullptr) {
        double acc = 0.0;
        for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) acc += dyo[i];
        (*dbias)[o] += static_cast<float>(acc);
      }
      for (int cin = 0; cin < ci; ++cin) {
        const float* xp = g_pad_buf.data() + static_cast<size_t>(cin) * hp * wp;
        float* dxp = dx != nullptr ? dpad.data() + static_cast<size_t>(cin) * hp * wp : nullptr;
        float* dwk = dweight != nullptr
                         ? dweight->v.data() + (static_cast<size_t>(o) * ci + cin) * wplane
                         : nullptr;
        const float* wk = weight.v.data() + (static_cast<size_t>(o) * ci + cin) * wplane;
        for (int ki = 0; ki < kh; ++ki) {
          for (int kj = 0; kj < kw; ++kj) {
            const int oy = ki * dil;
            const int ox = kj * dil;
            if (dwk != nullptr) {
              double acc = 0.0;
              for (int i = 0; i < h; ++i) {
                const float* src = xp + static_cast<size_t>(i + oy) * wp + ox;
                const float* dyr = dyo + static_cast<size_t>(i) * w;
                for (int j = 0; j < w; ++j) acc += static_cast<double>(src[j]) * dyr[j];
              }
              dwk[static_cast<size_t>(ki) * kw + kj] += static_cast<float>(acc);
            }
            if (dxp != nullptr) {
              const float wv = wk[static_cast<size_t>(ki) * kw + kj];
              if (wv == 0.0f) continue;
              for (int i = 0; i < h; ++i) {
                float* dst = dxp + static_cast<size_t>(i + oy) * wp + ox;
                const float* dyr = dyo + static_cast<size_t>(i) * w;
                for (int j = 0; j < w; ++j) dst[j] += wv * dyr[j];
              }
            }
          }
        }
      }
    }
    if (dx != nullptr) {
      for (int cin = 0; cin < ci; ++cin) {
        const float* src = dpad.data() + (static_cast<size_t>(cin) * hp + pad) * wp + pad;
        float* dst = dx->ptr(ni, cin);
        for (int i = 0; i < h; ++i) {
          const float* s = src + static_cast<size_t>(i) * wp;
          float* d = dst + static_cast<size_t>(i) * w;
          for (int j = 0; j < w; ++j) d[j] += s[j];
        }
      }
    }
  }
}

// Narrow-output layers lose badly in the GEMM M dimension; route them to
// the direct kernel. Stride-2 and wide layers keep im2col+GEMM.
bool use_direct(int co, int stride) { return stride == 1 && co <= 48; }

thread_local std::vector<float> g_col_buf;
thread_local std::vector<float> g_dcol_buf;

}  // namespace

Tensor conv2d_fwd(const Tensor& x, const Tensor& weight, const std::vector<float>* bias,
                  int stride, int pad, int dil) {
  const int co = weight.n, ci = weight.c, kh = weight.h, kw = weight.w;
  if (x.c != ci) {
    throw std::invalid_argument("conv2d: input channels " + std::to_string(x.c) +
                                " != weight channels " + std::to_string(ci));
  }
  const int ho = conv_out_extent(x.h, kh, stride, pad, dil);
  const int wo = conv_out_extent(x.w, kw, stride, pad, dil);
  if (use_direct(co, stride) && ho == x.h && wo == x.w) {
    Tensor y(x.n, co, ho, wo);
    conv2d_fwd_direct(x, weight, bias, pad, dil, y);
    return y;
  }
  const int K = ci * kh * kw;
  const size_t out_plane = static_cast<size_t>(ho) * wo;
  const size_t cols = static_cast<size_t>(x.n) * out_plane;

  im2col_batch(x, kh, kw, stride, pad, dil, ho, wo, g_col_buf);

  // GEMM writes a (co x N*out_plane) matrix; scatter rows back to NCHW.
  Tensor y(x.n, co, ho, wo);
  std::vector<float> packed(static_cast<size_t>(co) * cols);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, co, static_cast<int>(cols), K, 1.0f,
              weight.v.data(), K, g_col_buf.data(), static_cast<int>(cols), 0.0f,
              packed.data(), static_cast<int>(cols));
  for (int ni = 0; ni < x.n; ++ni) {
    for (int o = 0; o < co; ++o) {
      const float* src = packed.data() + static_cast<size_t>(o) * cols + ni * out_plane;
      float* dst = y.ptr(ni, o);
      if (bias != nullptr) {
        const float b = (*bias)[o];
        for (size_t i = 0; i < out_plane; ++i) dst[i] = src[i] + b;
      } else {
        std::copy(src, src + out_plane, dst);
      }
    }
  }
  return y;
}

void conv2d_bwd(const Tensor& x, const Tensor& weight, const Tensor& dy, int stride, int pad,
                int dil, Tensor* dx, Tensor* dweight, std::vector<float>* dbias) {
  const int co = weight.n, ci = weight.c, kh = weight.h, kw = weight.w;
  const int ho = dy.h, wo = dy.w;
  if (use_direct(co, stride) && ho == x.h && wo == x.w) {
    conv2d_bwd_direct(x, weight, dy, pad, dil, dx, dweight, dbias);
    return;
  }
  const int K = ci * kh * kw;
  const size_t out_plane = static_cast<size_t>(ho) * wo;
  const size_t cols = static_cast<size_t>(x.n) * out_plane;

  // Pack dY into the (co x N*out_plane) layout once.
  std::vector<float> dy_packed(static_cast<size_t>(co) * cols);
  for (int ni = 0; ni < x.n; ++ni) {
    for (int o = 0; o < co; ++o) {
      std::copy(dy.ptr(ni, o), dy.ptr(ni, o) + out_plane,
                dy_packed.data() + static_cast<size_t>(o) * cols + ni * out_plane);
    }
  }

  if (dweight != nullptr) {
    im2col_batch(x, kh, kw, stride, pad, dil, ho, wo, g_col_buf);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, co, K, static_cast<int>(cols), 1.0f,
                dy_packed.data(), static_cast<int>(cols), g_col_buf.data(),
                static_cast<int>(cols), 1.0f, dweight->v.data(), K);
  }
  if (dx != nullptr) {
    g_dcol_buf.resize(static_cast<size_t>(K) * cols);
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, static_cast<int>(cols), co, 1.0f,
                weight.v.data(), K, dy_packed.data(), static_cast<int>(cols), 0.0f,
                g_dcol_buf.data(), static_cast<int>(cols));
    col2im_batch(g_dcol_buf, *dx, kh, kw, stride, pad, dil, ho, wo);
  }
  if (dbias != nullptr) {
    for (int o = 0; o < co; ++o) {
      double acc = 0.0;
      for (int ni = 0; ni < x.n; ++ni) {
        const float* src = dy.ptr(ni, o);
        for (size_t i = 0; i < out_plane; ++i) acc += src[i];
      }
      (*dbias)[o] += static_cast<float>(acc);
    }
  }
}

BnStats bn_batch_stats(const Tensor& x) {
  BnStats s;
  s.mean.assign(x.c, 0.0f);
  s.var.assign(x.c, 0.0f);
  const size_t plane = x.plane();
  const double count = static_cast<double>(x.n) * plane;
  for (int ci = 0; ci < x.c; ++ci) {
    double acc = 0.0;
    for (int ni = 0; ni < x.n; ++ni) {
      const float* p = x.ptr(ni, ci);
      for (size_t i = 0; i < plane; ++i) acc += p[i];
    }
    const double mean = acc / count;
    double var = 0.0;
    for (int ni = 0; ni < x.n; ++ni) {
      const float* p = x.ptr(ni, ci);
      for (size_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean;
        var += d * d;
      }
    }
    s.mean[ci] = static_cast<float>(mean);
    s.var[ci] = static_cast<float>(var / count);
  }
  return s;
}

Tensor bn_apply(const Tensor& x, const std::vector<float>& mean, const std::vector<float>& var,
                const std::vector<float>& gamma, const std::vector<float>& beta, float eps) {
  Tensor y(x.n, x.c, x.h, x.w);
  const size_t plane = x.plane();
  for (int ci = 0; ci < x.c; ++ci) {
    const float inv = 1.0f / std::sqrt(var[ci] + eps);
    const float g = gamma[ci] * inv;
    const float b = beta[ci] - mean[ci] * g;
    for (int ni = 0; ni < x.n; ++ni) {
      const float* src = x.ptr(ni, ci);
      float* dst = y.ptr(ni, ci);
      for (size_t i = 0; i < plane; ++i) dst[i] = src[i] * g + b;
    }
  }
  return y;
}

Tensor relu_fwd(const Tensor& x) {
  Tensor y(x.n, x.c, x.h, x.w);
  for (size_t i = 0; i < x.count(); ++i) y.v[i] = x.v[i] > 0.0f ? x.v[i] : 0.0f;
  return y;
}

Tensor upsample2x_fwd(const Tensor& x) {
  Tensor y(x.n, x.c, x.h * 2, x.w * 2);
  for (int ni = 0; ni < x.n; ++ni) {
    for (int ci = 0; ci < x.c; ++ci) {
      const float* src = x.ptr(ni, ci);
      float* dst = y.ptr(ni, ci);
      for (int i = 0; i < x.h; ++i) {
        for (int j = 0; j < x.w; ++j) {
          const float v = src[static_cast<size_t>(i) * x.w + j];
          float* d0 = dst + (static_cast<size_t>(2 * i) * y.w + 2 * j);
          d0[0] = v;
          d0[1] = v;
          d0[y.w] = v;
          d0[y.w + 1] = v;
        }
      }
    }
  }
  return y;
}

Tensor softmax_channel_groups(const Tensor& x, int group_size) {
  if (x.c % group_size != 0) {
    throw std::invalid_argument("softmax_channel_groups: channels not divisible by group size");
  }
  Tensor y(x.n, x.c, x.h, x.w);
  const size_t plane = x.plane();
  const int groups = x.c / group_size;
  for (int ni = 0; ni < x.n; ++ni) {
    for (int g = 0; g < groups; ++g) {
      for (size_t i = 0; i < plane; ++i) {
        float mx = -1e30f;
        for (int k = 0; k < group_size; ++k) {
          mx = std::max(mx, x.ptr(ni, g * group_size + k)[i]);
        }
        float sum = 0.0f;
        for (int k = 0; k < group_size; ++k) {
          const float e = std::exp(x.ptr(ni, g * group_size + k)[i] - mx);
          y.ptr(ni, g * group_size + k)[i] = e;
          sum += e;
        }
        const float inv = 1.0f / sum;
        for (int k = 0; k < group_size; ++k) y.ptr(ni, g * group_size + k)[i] *= inv;
      }
    }
  }
  return y;
}

Tensor attention_l2_fwd(const Tensor& x) {
  Tensor y(x.n, 1, x.h, x.w);
  const size_t plane = x.plane();
  for (int ni = 0; ni < x.n; ++ni) {
    float* dst = y.ptr(ni);
    for (size_t i = 0; i < plane; ++i) {
      double acc = 0.0;
      for (int ci = 0; ci < x.c; ++ci) {
        const float v = x.ptr(ni, ci)[i];
        acc += static_cast<double>(v) * v;
      }
      dst[i] = static_cast<float>(std::sqrt(acc));
    }
  }
  return y;
}

Tensor spatial_softmax_fwd(const Tensor& x) {
  Tensor y(x.n, x.c, x.h, x.w);
  const size_t plane = x.plane();
  for (int ni = 0; ni < x.n; ++ni) {
    for (int ci = 0; ci < x.c; ++ci) {
      const float* src = x.ptr(ni, ci);
      float* dst = y.ptr(ni, ci);
      float mx = -1e30f;
      for (size_t i = 0; i < plane; ++i) mx = std::max(mx, src[i]);
      double sum = 0.0;
      for (size_t i = 0; i < plane; ++i) {
        const float e = std::exp(src[i] - mx);
        dst[i] = e;
        sum += e;
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (size_t i = 0; i < plane; ++i) dst[i] *= inv;
    }
  }
  return y;
}

}  // namespace umspu::nn
