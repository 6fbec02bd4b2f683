#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "umspu/labels.hpp"
#include "umspu/raster.hpp"
#include "umspu/rng.hpp"

namespace testutil {

/// Unique scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("umspu_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline umspu::RasterF32 random_raster(int h, int w, umspu::Rng& rng, float lo = -10.0f,
                                      float hi = 10.0f) {
  umspu::RasterF32 r(h, w);
  for (size_t i = 0; i < r.size(); ++i) {
    r[i] = static_cast<float>(rng.uniform(lo, hi));
  }
  return r;
}

inline umspu::RasterI8 random_labels_raster(int h, int w, umspu::Rng& rng) {
  umspu::RasterI8 r(h, w);
  for (size_t i = 0; i < r.size(); ++i) {
    r[i] = static_cast<int8_t>(rng.uniform_int(-1, 1));
  }
  return r;
}

/// Random label pair honoring the boundary convention (but not curl-free).
inline umspu::GradientLabelPair random_label_pair(int h, int w, umspu::Rng& rng) {
  umspu::GradientLabelPair p{random_labels_raster(h, w, rng), random_labels_raster(h, w, rng)};
  for (int i = 0; i < h; ++i) p.gx.at(i, w - 1) = 0;
  for (int j = 0; j < w; ++j) p.gy.at(h - 1, j) = 0;
  return p;
}

}  // namespace testutil
