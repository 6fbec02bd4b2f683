#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace umspu::nn {

/// Dense NCHW float tensor.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {}

  static Tensor scalar(float value) {
    Tensor t(1, 1, 1, 1);
    t.v[0] = value;
    return t;
  }

  size_t count() const { return v.size(); }
  size_t plane() const { return static_cast<size_t>(h) * w; }

  float* ptr(int ni, int ci = 0) {
    return v.data() + (static_cast<size_t>(ni) * c + ci) * plane();
  }
  const float* ptr(int ni, int ci = 0) const {
    return v.data() + (static_cast<size_t>(ni) * c + ci) * plane();
  }

  float& at(int ni, int ci, int i, int j) {
    return v[((static_cast<size_t>(ni) * c + ci) * h + i) * w + j];
  }
  float at(int ni, int ci, int i, int j) const {
    return v[((static_cast<size_t>(ni) * c + ci) * h + i) * w + j];
  }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }

  void fill(float x) { std::fill(v.begin(), v.end(), x); }
};

inline void require_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
}

}  // namespace umspu::nn
