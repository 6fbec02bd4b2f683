#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace umspu {

/// Error thrown when data violates a documented invariant (bad shapes,
/// non-finite values, out-of-range labels, ...).
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Error thrown on file-format or filesystem problems.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense row-major 2-D scalar field. Carrier for wrapped/unwrapped phases,
/// wrap counts, gradient labels and attention maps.
template <typename T>
class Raster2D {
public:
  Raster2D() = default;
  Raster2D(int height, int width, T fill = T{}) : h_(height), w_(width) {
    if (height < 2 || width < 2) {
      throw ValidationError("Raster2D requires height >= 2 and width >= 2, got " +
                            std::to_string(height) + "x" + std::to_string(width));
    }
    data_.assign(static_cast<size_t>(height) * width, fill);
  }

  int height() const { return h_; }
  int width() const { return w_; }
  size_t size() const { return data_.size(); }

  T& at(int i, int j) { return data_[static_cast<size_t>(i) * w_ + j]; }
  const T& at(int i, int j) const { return data_[static_cast<size_t>(i) * w_ + j]; }
  T& operator[](size_t idx) { return data_[idx]; }
  const T& operator[](size_t idx) const { return data_[idx]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  bool same_shape(const Raster2D& other) const {
    return h_ == other.h_ && w_ == other.w_;
  }

  bool operator==(const Raster2D& other) const {
    return h_ == other.h_ && w_ == other.w_ && data_ == other.data_;
  }

private:
  int h_ = 0;
  int w_ = 0;
  std::vector<T> data_;
};

using RasterF32 = Raster2D<float>;
using RasterI8 = Raster2D<int8_t>;
using RasterI32 = Raster2D<int32_t>;

inline void require_same_shape(int h1, int w1, int h2, int w2, const char* what) {
  if (h1 != h2 || w1 != w2) {
    throw ValidationError(std::string(what) + ": shape mismatch " + std::to_string(h1) +
                          "x" + std::to_string(w1) + " vs " + std::to_string(h2) + "x" +
                          std::to_string(w2));
  }
}

template <typename A, typename B>
void require_same_shape(const Raster2D<A>& a, const Raster2D<B>& b, const char* what) {
  require_same_shape(a.height(), a.width(), b.height(), b.width(), what);
}

inline bool all_finite(const RasterF32& r) {
  for (size_t i = 0; i < r.size(); ++i) {
    if (!std::isfinite(r[i])) return false;
  }
  return true;
}

template <typename To, typename From>
Raster2D<To> raster_cast(const Raster2D<From>& src) {
  Raster2D<To> dst(src.height(), src.width());
  for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return dst;
}

}  // namespace umspu
