#include "umspu/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace umspu::nn {

namespace {

Var make_node(Tensor val, std::vector<Var> parents, std::function<void(Node&)> bwd) {
  auto node = std::make_shared<Node>();
  node->val = std::move(val);
  node->parents = std::move(parents);
  for (const auto& p : node->parents) {
    if (p && p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) node->backward_fn = std::move(bwd);
  return node;
}

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->val = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad, int dil) {
  const std::vector<float>* bptr = bias ? &bias->val.v : nullptr;
  Tensor y = conv2d_fwd(x->val, weight->val, bptr, stride, pad, dil);
  std::vector<Var> parents = {x, weight};
  if (bias) parents.push_back(bias);
  Node* xr = x.get();
  Node* wr = weight.get();
  Node* br = bias ? bias.get() : nullptr;
  return make_node(std::move(y), std::move(parents), [xr, wr, br, stride, pad, dil](Node& self) {
    Tensor* dx = nullptr;
    Tensor* dw = nullptr;
    std::vector<float>* db = nullptr;
    if (xr->requires_grad) {
      xr->ensure_grad();
      dx = &xr->grad;
    }
    if (wr->requires_grad) {
      wr->ensure_grad();
      dw = &wr->grad;
    }
    if (br != nullptr && br->requires_grad) {
      br->ensure_grad();
      db = &br->grad.v;
    }
    conv2d_bwd(xr->val, wr->val, self.grad, stride, pad, dil, dx, dw, db);
  });
}

Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, BnRunning& running,
                    float eps, float momentum) {
  BnStats stats = bn_batch_stats(x->val);
  for (int c = 0; c < x->val.c; ++c) {
    running.mean[c] = (1.0f - momentum) * running.mean[c] + momentum * stats.mean[c];
    running.var[c] = (1.0f - momentum) * running.var[c] + momentum * stats.var[c];
  }
  Tensor y = bn_apply(x->val, stats.mean, stats.var, gamma->val.v, beta->val.v, eps);

  Node* xr = x.get();
  Node* gr = gamma.get();
  Node* br = beta.get();
  auto mean = std::make_shared<std::vector<float>>(stats.mean);
  auto var = std::make_shared<std::vector<float>>(stats.var);
  return make_node(std::move(y), {x, gamma, beta}, [xr, gr, br, mean, var, eps](Node& self) {
    const Tensor& xv = xr->val;
    const Tensor& dy = self.grad;
    const size_t plane = xv.plane();
    const double m = static_cast<double>(xv.n) * plane;
    if (gr->requires_grad) gr->ensure_grad();
    if (br->requires_grad) br->ensure_grad();
    if (xr->requires_grad) xr->ensure_grad();

    for (int c = 0; c < xv.c; ++c) {
      const float mu = (*mean)[c];
      const float inv = 1.0f / std::sqrt((*var)[c] + eps);
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int ni = 0; ni < xv.n; ++ni) {
        const float* xp = xv.ptr(ni, c);
        const float* dp = dy.ptr(ni, c);
        for (size_t i = 0; i < plane; ++i) {
          const float xhat = (xp[i] - mu) * inv;
          sum_dy += dp[i];
          sum_dy_xhat += static_cast<double>(dp[i]) * xhat;
        }
      }
      if (gr->requires_grad) gr->grad.v[c] += static_cast<float>(sum_dy_xhat);
      if (br->requires_grad) br->grad.v[c] += static_cast<float>(sum_dy);
      if (xr->requires_grad) {
        const float g = gr->val.v[c];
        const float mean_dy = static_cast<float>(sum_dy / m);
        const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / m);
        for (int ni = 0; ni < xv.n; ++ni) {
          const float* xp = xv.ptr(ni, c);
          const float* dp = dy.ptr(ni, c);
          float* gx = xr->grad.ptr(ni, c);
          for (size_t i = 0; i < plane; ++i) {
            const float xhat = (xp[i] - mu) * inv;
            gx[i] += g * inv * (dp[i] - mean_dy - xhat * mean_dy_xhat);
          }
        }
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor y = relu_fwd(x->val);
  Node* xr = x.get();
  return make_node(std::move(y), {x}, [xr](Node& self) {
    if (!xr->requires_grad) return;
    xr->ensure_grad();
    float* dst = xr->grad.v.data();
    for (size_t i = 0; i < self.val.count(); ++i) {
      if (self.val.v[i] > 0.0f) dst[i] += self.grad.v[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_shape(a->val, b->val, "add");
  Tensor y = a->val;
  for (size_t i = 0; i < y.count(); ++i) y.v[i] += b->val.v[i];
  Node* ar = a.get();
  Node* br = b.get();
  return make_node(std::move(y), {a, b}, [ar, br](Node& self) {
    for (Node* p : {ar, br}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      float* dst = p->grad.v.data();
      for (size_t i = 0; i < self.grad.count(); ++i) dst[i] += self.grad.v[i];
    }
  });
}

Var upsample2x(const Var& x) {
  Tensor y = upsample2x_fwd(x->val);
  Node* xr = x.get();
  return make_node(std::move(y), {x}, [xr](Node& self) {
    if (!xr->requires_grad) return;
    xr->ensure_grad();
    const Tensor& dy = self.grad;
    Tensor& dx = xr->grad;
    for (int ni = 0; ni < dx.n; ++ni) {
      for (int ci = 0; ci < dx.c; ++ci) {
        const float* src = dy.ptr(ni, ci);
        float* dst = dx.ptr(ni, ci);
        for (int i = 0; i < dx.h; ++i) {
          for (int j = 0; j < dx.w; ++j) {
            const float* s0 = src + (static_cast<size_t>(2 * i) * dy.w + 2 * j);
            dst[static_cast<size_t>(i) * dx.w + j] += s0[0] + s0[1] + s0[dy.w] + s0[dy.w + 1];
          }
        }
      }
    }
  });
}

Var attention_l2(const Var& x) {
  Tensor y = attention_l2_fwd(x->val);
  Node* xr = x.get();
  return make_node(std::move(y), {x}, [xr](Node& self) {
    if (!xr->requires_grad) return;
    xr->ensure_grad();
    const Tensor& xv = xr->val;
    const size_t plane = xv.plane();
    for (int ni = 0; ni < xv.n; ++ni) {
      const float* yp = self.val.ptr(ni);
      const float* dp = self.grad.ptr(ni);
      for (int ci = 0; ci < xv.c; ++ci) {
        const float* xp = xv.ptr(ni, ci);
        float* gp = xr->grad.ptr(ni, ci);
        for (size_t i = 0; i < plane; ++i) {
          if (yp[i] > 0.0f) gp[i] += dp[i] * xp[i] / yp[i];
        }
      }
    }
  });
}

Var spatial_softmax(const Var& x) {
  Tensor y = spatial_softmax_fwd(x->val);
  Node* xr = x.get();
  return make_node(std::move(y), {x}, [xr](Node& self) {
    if (!xr->requires_grad) return;
    xr->ensure_grad();
    const size_t plane = self.val.plane();
    for (int ni = 0; ni < self.val.n; ++ni) {
      for (int ci = 0; ci < self.val.c; ++ci) {
        const float* yp = self.val.ptr(ni, ci);
        const float* dp = self.grad.ptr(ni, ci);
        float* gp = xr->grad.ptr(ni, ci);
        double dot = 0.0;
        for (size_t i = 0; i < plane; ++i) dot += static_cast<double>(dp[i]) * yp[i];
        for (size_t i = 0; i < plane; ++i) {
          gp[i] += yp[i] * (dp[i] - static_cast<float>(dot));
        }
      }
    }
  });
}

Var kl_attention(const Var& p, const Var& q) {
  require_shape(p->val, q->val, "kl_attention");
  const size_t plane = p->val.plane();
  const int n = p->val.n;
  double acc = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    const float* pp = p->val.ptr(ni);
    const float* qp = q->val.ptr(ni);
    double s = 0.0;
    for (size_t i = 0; i < plane; ++i) {
      const float pf = std::max(pp[i], kLogEps);
      const float qf = std::max(qp[i], kLogEps);
      s += static_cast<double>(pp[i]) * (std::log(pf) - std::log(qf));
    }
    acc += s / static_cast<double>(plane);
  }
  Tensor y = Tensor::scalar(static_cast<float>(acc / n));
  const double dval = acc / n;

  Node* pr = p.get();
  Node* qr = q.get();
  Var node = make_node(std::move(y), {p, q}, [pr, qr](Node& self) {
    const float go = self.grad.v[0];
    const size_t plane = pr->val.plane();
    const int n = pr->val.n;
    const float norm = go / (static_cast<float>(n) * plane);
    if (pr->requires_grad) pr->ensure_grad();
    if (qr->requires_grad) qr->ensure_grad();
    for (int ni = 0; ni < n; ++ni) {
      const float* pp = pr->val.ptr(ni);
      const float* qp = qr->val.ptr(ni);
      for (size_t i = 0; i < plane; ++i) {
        const float pf = std::max(pp[i], kLogEps);
        const float qf = std::max(qp[i], kLogEps);
        if (pr->requires_grad) {
          const float dlog = (pp[i] >= kLogEps) ? 1.0f : 0.0f;
          pr->grad.ptr(ni)[i] += norm * (std::log(pf) - std::log(qf) + dlog);
        }
        if (qr->requires_grad && qp[i] >= kLogEps) {
          qr->grad.ptr(ni)[i] -= norm * pp[i] / qf;
        }
      }
    }
  });
  node->dval = dval;
  return node;
}

Var softmax_groups(const Var& x, int group_size) {
  Tensor y = softmax_channel_groups(x->val, group_size);
  Node* xr = x.get();
  return make_node(std::move(y), {x}, [xr, group_size](Node& self) {
    if (!xr->requires_grad) return;
    xr->ensure_grad();
    const Tensor& yv = self.val;
    const size_t plane = yv.plane();
    const int groups = yv.c / group_size;
    for (int ni = 0; ni < yv.n; ++ni) {
      for (int g = 0; g < groups; ++g) {
        for (size_t i = 0; i < plane; ++i) {
          double dot = 0.0;
          for (int k = 0; k < group_size; ++k) {
            const int ch = g * group_size + k;
            dot += static_cast<double>(self.grad.ptr(ni, ch)[i]) * yv.ptr(ni, ch)[i];
          }
          for (int k = 0; k < group_size; ++k) {
            const int ch = g * group_size + k;
            xr->grad.ptr(ni, ch)[i] +=
                yv.ptr(ni, ch)[i] * (self.grad.ptr(ni, ch)[i] - static_cast<float>(dot));
          }
        }
      }
    }
  });
}

Var slice_channels(const Var& x, int c0, int c1) {
  if (c0 < 0 || c1 > x->val.c || c0 >= c1) {
    throw std::invalid_argument("slice_channels: bad range");
  }
  const int nc = c1 - c0;
  Tensor y(x->val.n, nc, x->val.h, x->val.w);
  const size_t plane = x->val.plane();
  for (int ni = 0; ni < x->val.n; ++ni) {
    std::copy(x->val.ptr(ni, c0), x->val.ptr(ni, c0) + nc * plane, y.ptr(ni, 0));
  }
  Node* xr = x.get();
  return make_node(std::move(y), {x}, [xr, c0, nc](Node& self) {
    if (!xr->requires_grad) return;
    xr->ensure_grad();
    const size_t plane = self.val.plane();
    for (int ni = 0; ni < self.val.n; ++ni) {
      const float* src = self.grad.ptr(ni, 0);
      float* dst = xr->grad.ptr(ni, c0);
      for (size_t i = 0; i < nc * plane; ++i) dst[i] += src[i];
    }
  });
}

Var wmse_loss(const Var& probs, const Tensor& onehot, const std::array<float, 3>& beta) {
  require_shape(probs->val, onehot, "wmse_loss");
  const size_t plane = probs->val.plane();
  const int n = probs->val.n;
  const double norm = 3.0 * plane;
  double acc = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const float* yp = probs->val.ptr(ni, c);
      const float* tp = onehot.ptr(ni, c);
      for (size_t i = 0; i < plane; ++i) {
        const double d = tp[i] - yp[i];
        s += beta[c] * d * d;
      }
    }
    acc += s / norm;
  }
  Tensor y = Tensor::scalar(static_cast<float>(acc / n));
  const double dval = acc / n;
  Node* pr = probs.get();
  auto oh = std::make_shared<Tensor>(onehot);
  Var node = make_node(std::move(y), {probs}, [pr, oh, beta](Node& self) {
    if (!pr->requires_grad) return;
    pr->ensure_grad();
    const size_t plane = pr->val.plane();
    const int n = pr->val.n;
    const float norm = self.grad.v[0] / (3.0f * plane * n);
    for (int ni = 0; ni < n; ++ni) {
      for (int c = 0; c < 3; ++c) {
        const float* yp = pr->val.ptr(ni, c);
        const float* tp = oh->ptr(ni, c);
        float* gp = pr->grad.ptr(ni, c);
        for (size_t i = 0; i < plane; ++i) {
          gp[i] += norm * 2.0f * beta[c] * (yp[i] - tp[i]);
        }
      }
    }
  });
  node->dval = dval;
  return node;
}

Var wce_loss(const Var& probs, const Tensor& onehot, const std::array<float, 3>& beta) {
  require_shape(probs->val, onehot, "wce_loss");
  const size_t plane = probs->val.plane();
  const int n = probs->val.n;
  double acc = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const float* yp = probs->val.ptr(ni, c);
      const float* tp = onehot.ptr(ni, c);
      for (size_t i = 0; i < plane; ++i) {
        if (tp[i] != 0.0f) {
          s -= beta[c] * tp[i] * std::log(std::max(yp[i], kLogEps));
        }
      }
    }
    acc += s / static_cast<double>(plane);
  }
  Tensor y = Tensor::scalar(static_cast<float>(acc / n));
  const double dval = acc / n;
  Node* pr = probs.get();
  auto oh = std::make_shared<Tensor>(onehot);
  Var node = make_node(std::move(y), {probs}, [pr, oh, beta](Node& self) {
    if (!pr->requires_grad) return;
    pr->ensure_grad();
    const size_t plane = pr->val.plane();
    const int n = pr->val.n;
    const float norm = self.grad.v[0] / (static_cast<float>(plane) * n);
    for (int ni = 0; ni < n; ++ni) {
      for (int c = 0; c < 3; ++c) {
        const float* yp = pr->val.ptr(ni, c);
        const float* tp = oh->ptr(ni, c);
        float* gp = pr->grad.ptr(ni, c);
        for (size_t i = 0; i < plane; ++i) {
          if (tp[i] != 0.0f && yp[i] >= kLogEps) {
            gp[i] -= norm * beta[c] * tp[i] / yp[i];
          }
        }
      }
    }
  });
  node->dval = dval;
  return node;
}

namespace {
inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }
// Soft-count denominator offset; sized so a saturated all-zero-gradient
// prediction scores < 1e-3 for tau >= 8.
constexpr float kCurlDenomEps = 1.0f / 64.0f;
constexpr float kCurlThreshold = 1.5f;  // halfway between |f|=1 and the +-2 response
}  // namespace

Var curl_surrogate(const Var& probs_x, const Var& probs_y, float tau) {
  require_shape(probs_x->val, probs_y->val, "curl_surrogate");
  const Tensor& px = probs_x->val;
  const Tensor& py = probs_y->val;
  const int n = px.n, h = px.h, w = px.w;
  const size_t plane = px.plane();
  const double n_windows = static_cast<double>(h - 1) * (w - 1);

  // Expected gradients g = p(+1) - p(-1), channels 1 and 2.
  auto gx_at = [&](int ni, int i, int j) { return px.at(ni, 1, i, j) - px.at(ni, 2, i, j); };
  auto gy_at = [&](int ni, int i, int j) { return py.at(ni, 1, i, j) - py.at(ni, 2, i, j); };

  std::vector<double> a_vals(n, 0.0), b_vals(n, 0.0);
  double acc = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    double soft_count = 0.0;
    for (int i = 0; i < h - 1; ++i) {
      for (int j = 0; j < w - 1; ++j) {
        const float fx = gx_at(ni, i, j) + gx_at(ni, i, j + 1);
        const float fy = gy_at(ni, i, j) + gy_at(ni, i + 1, j);
        soft_count += sigmoid(tau * (std::abs(fx) - kCurlThreshold));
        soft_count += sigmoid(tau * (std::abs(fy) - kCurlThreshold));
      }
    }
    double grad_mass = 0.0;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        grad_mass += std::abs(gx_at(ni, i, j)) + std::abs(gy_at(ni, i, j));
      }
    }
    a_vals[ni] = soft_count / n_windows;
    b_vals[ni] = grad_mass / static_cast<double>(plane) + kCurlDenomEps;
    acc += a_vals[ni] / b_vals[ni];
  }
  Tensor y = Tensor::scalar(static_cast<float>(acc / n));
  const double dval = acc / n;

  Node* pxr = probs_x.get();
  Node* pyr = probs_y.get();
  auto a_keep = std::make_shared<std::vector<double>>(std::move(a_vals));
  auto b_keep = std::make_shared<std::vector<double>>(std::move(b_vals));
  Var node = make_node(std::move(y), {probs_x, probs_y}, [pxr, pyr, tau, a_keep,
                                                      b_keep](Node& self) {
    const Tensor& px = pxr->val;
    const Tensor& py = pyr->val;
    const int n = px.n, h = px.h, w = px.w;
    const size_t plane = px.plane();
    const double n_windows = static_cast<double>(h - 1) * (w - 1);
    const float go = self.grad.v[0] / n;
    if (pxr->requires_grad) pxr->ensure_grad();
    if (pyr->requires_grad) pyr->ensure_grad();

    std::vector<float> dgx(plane), dgy(plane);
    for (int ni = 0; ni < n; ++ni) {
      std::fill(dgx.begin(), dgx.end(), 0.0f);
      std::fill(dgy.begin(), dgy.end(), 0.0f);
      const double a = (*a_keep)[ni];
      const double b = (*b_keep)[ni];
      const float dA = static_cast<float>(go / b);
      const float dB = static_cast<float>(-go * a / (b * b));

      auto gx_at = [&](int i, int j) { return px.at(ni, 1, i, j) - px.at(ni, 2, i, j); };
      auto gy_at = [&](int i, int j) { return py.at(ni, 1, i, j) - py.at(ni, 2, i, j); };

      // Soft-count term through the 2x2 kernel responses.
      const float wA = dA / static_cast<float>(n_windows);
      for (int i = 0; i < h - 1; ++i) {
        for (int j = 0; j < w - 1; ++j) {
          const float fx = gx_at(i, j) + gx_at(i, j + 1);
          const float sx = sigmoid(tau * (std::abs(fx) - kCurlThreshold));
          const float dfx = wA * tau * sx * (1.0f - sx) * (fx > 0.0f ? 1.0f : (fx < 0.0f ? -1.0f : 0.0f));
          dgx[static_cast<size_t>(i) * w + j] += dfx;
          dgx[static_cast<size_t>(i) * w + j + 1] += dfx;

          const float fy = gy_at(i, j) + gy_at(i + 1, j);
          const float sy = sigmoid(tau * (std::abs(fy) - kCurlThreshold));
          const float dfy = wA * tau * sy * (1.0f - sy) * (fy > 0.0f ? 1.0f : (fy < 0.0f ? -1.0f : 0.0f));
          dgy[static_cast<size_t>(i) * w + j] += dfy;
          dgy[static_cast<size_t>(i + 1) * w + j] += dfy;
        }
      }
      // Gradient-mass denominator term.
      const float wB = dB / static_cast<float>(plane);
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const float gx = gx_at(i, j);
          const float gy = gy_at(i, j);
          dgx[static_cast<size_t>(i) * w + j] += wB * (gx > 0.0f ? 1.0f : (gx < 0.0f ? -1.0f : 0.0f));
          dgy[static_cast<size_t>(i) * w + j] += wB * (gy > 0.0f ? 1.0f : (gy < 0.0f ? -1.0f : 0.0f));
        }
      }
      if (pxr->requires_grad) {
        for (size_t i = 0; i < plane; ++i) {
          pxr->grad.ptr(ni, 1)[i] += dgx[i];
          pxr->grad.ptr(ni, 2)[i] -= dgx[i];
        }
      }
      if (pyr->requires_grad) {
        for (size_t i = 0; i < plane; ++i) {
          pyr->grad.ptr(ni, 1)[i] += dgy[i];
          pyr->grad.ptr(ni, 2)[i] -= dgy[i];
        }
      }
    }
  });
  node->dval = dval;
  return node;
}

Var wsum(const std::vector<std::pair<Var, float>>& terms) {
  double acc = 0.0;
  std::vector<Var> parents;
  std::vector<float> coeffs;
  for (const auto& [v, coeff] : terms) {
    acc += v->scalar() * coeff;
    parents.push_back(v);
    coeffs.push_back(coeff);
  }
  Tensor y = Tensor::scalar(static_cast<float>(acc));
  std::vector<Node*> raw;
  for (const auto& p : parents) raw.push_back(p.get());
  Var node = make_node(std::move(y), std::move(parents), [raw, coeffs](Node& self) {
    for (size_t i = 0; i < raw.size(); ++i) {
      if (!raw[i]->requires_grad) continue;
      raw[i]->ensure_grad();
      raw[i]->grad.v[0] += self.grad.v[0] * coeffs[i];
    }
  });
  node->dval = acc;
  return node;
}

void backward(const Var& root) {
  if (root->val.count() != 1) {
    throw std::invalid_argument("backward: root must be a scalar");
  }
  // Post-order DFS, then reverse for the sweep.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx].get();
      ++idx;
      if (parent != nullptr && parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad.v[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.count() == node->val.count()) {
      node->backward_fn(*node);
    }
  }
}

}  // namespace umspu::nn
