#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "umspu/raster.hpp"

namespace umspu::io {

/// Scalar types supported by the .umsp raster container.
enum class Dtype : uint8_t { F32 = 0, I8 = 1 };

constexpr uint32_t kRasterFormatVersion = 1;
constexpr uint32_t kManifestFormatVersion = 1;

/// On-disk layout (little-endian throughout):
///   magic "UMSP" | version u32 | dtype u8 | height u32 | width u32 | payload
/// One raster per file, payload row-major.
void write_raster(const RasterF32& r, const std::filesystem::path& path);
void write_raster(const RasterI8& r, const std::filesystem::path& path);

struct RasterHeader {
  Dtype dtype;
  int height;
  int width;
};

/// Reads only the fixed-size header; used for cheap shape validation.
RasterHeader read_raster_header(const std::filesystem::path& path);

RasterF32 read_raster_f32(const std::filesystem::path& path);
RasterI8 read_raster_i8(const std::filesystem::path& path);

/// One generated sample: wrapped phase (model input), the clean wrap count,
/// and the two wrap-count-gradient label maps. Paths are relative to the
/// manifest's directory. snr_db absent means no noise was added.
struct SampleRecord {
  std::string id;
  int size = 0;
  std::optional<double> snr_db;
  int fringe_count = 0;
  uint64_t seed = 0;
  std::string wrapped_path;
  std::string wrap_count_path;
  std::string label_gx_path;
  std::string label_gy_path;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  uint32_t format_version = kManifestFormatVersion;
  uint64_t seed = 0;
  double split_train = 0.8, split_val = 0.1, split_test = 0.1;
  std::vector<SampleRecord> samples;
  std::filesystem::path root;  // directory of the manifest file (set on load)

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  std::vector<const SampleRecord*> by_split(const std::string& split) const;
};

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

/// Loads and validates a manifest. Every referenced raster must exist and
/// headers must agree with the record (wrapped phase HxW f32, labels HxW i8).
/// Payloads are not read.
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace umspu::io
