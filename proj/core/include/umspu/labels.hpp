#pragma once

#include "umspu/raster.hpp"

namespace umspu {

/// Wrap-count-gradient class maps for the x and y directions.
/// Values in {-1, 0, +1}. Boundary convention: gx's last column and gy's last
/// row carry no difference; they are stored as 0 and excluded by the
/// valid-support masks so the label shape matches the network output shape.
struct GradientLabelPair {
  RasterI8 gx;
  RasterI8 gy;

  int height() const { return gx.height(); }
  int width() const { return gx.width(); }

  static bool valid_x(int /*i*/, int j, int width) { return j < width - 1; }
  static bool valid_y(int i, int /*j*/, int height) { return i < height - 1; }

  /// Structural valid-difference support, materialized (1 inside, 0 on the
  /// masked boundary column/row).
  RasterI8 mask_x() const {
    RasterI8 m(height(), width(), 1);
    for (int i = 0; i < height(); ++i) m.at(i, width() - 1) = 0;
    return m;
  }
  RasterI8 mask_y() const {
    RasterI8 m(height(), width(), 1);
    for (int j = 0; j < width(); ++j) m.at(height() - 1, j) = 0;
    return m;
  }

  void validate() const {
    require_same_shape(gx, gy, "GradientLabelPair");
    for (size_t i = 0; i < gx.size(); ++i) {
      if (gx[i] < -1 || gx[i] > 1 || gy[i] < -1 || gy[i] > 1) {
        throw ValidationError("GradientLabelPair: label outside {-1,0,+1}");
      }
    }
    for (int i = 0; i < height(); ++i) {
      if (gx.at(i, width() - 1) != 0) {
        throw ValidationError("GradientLabelPair: gx last column must be 0");
      }
    }
    for (int j = 0; j < width(); ++j) {
      if (gy.at(height() - 1, j) != 0) {
        throw ValidationError("GradientLabelPair: gy last row must be 0");
      }
    }
  }
};

/// Class <-> channel mapping shared by labels, losses and segmenter heads:
/// channel 0 is class 0, channel 1 is class +1, channel 2 is class -1.
inline int class_to_channel(int cls) { return cls == 0 ? 0 : (cls == 1 ? 1 : 2); }
inline int channel_to_class(int ch) { return ch == 0 ? 0 : (ch == 1 ? 1 : -1); }

}  // namespace umspu
