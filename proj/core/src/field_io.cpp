#include "umspu/field_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "umsp raster container assumes a little-endian host");

namespace umspu::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'U', 'M', 'S', 'P'};
constexpr size_t kHeaderBytes = 4 + 4 + 1 + 4 + 4;

void put_u32(std::string& buf, uint32_t v) {
  buf.append(reinterpret_cast<const char*>(&v), 4);
}

template <typename T>
void write_raster_impl(const Raster2D<T>& r, Dtype dtype, const fs::path& path) {
  if (r.height() < 2 || r.width() < 2) {
    throw ValidationError("write_raster: degenerate raster " + std::to_string(r.height()) +
                          "x" + std::to_string(r.width()));
  }
  if constexpr (std::is_same_v<T, float>) {
    if (!all_finite(reinterpret_cast<const RasterF32&>(r))) {
      throw ValidationError("write_raster: non-finite value in f32 raster, refusing " +
                            path.string());
    }
  }

  std::string buf;
  buf.reserve(kHeaderBytes + r.size() * sizeof(T));
  buf.append(kMagic, 4);
  put_u32(buf, kRasterFormatVersion);
  buf.push_back(static_cast<char>(dtype));
  put_u32(buf, static_cast<uint32_t>(r.height()));
  put_u32(buf, static_cast<uint32_t>(r.width()));
  buf.append(reinterpret_cast<const char*>(r.data()), r.size() * sizeof(T));

  // Write to a temp file and rename so a failed write never leaves a
  // truncated raster behind.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_raster: cannot open " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write_raster: short write to " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("write_raster: rename to " + path.string() + " failed");
  }
}

struct ParsedHeader {
  Dtype dtype;
  uint32_t h, w;
};

ParsedHeader parse_header(std::ifstream& in, const fs::path& path) {
  char raw[kHeaderBytes];
  in.read(raw, kHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kHeaderBytes)) {
    throw IoError("read_raster: truncated header in " + path.string());
  }
  if (std::memcmp(raw, kMagic, 4) != 0) {
    throw IoError("read_raster: bad magic in " + path.string());
  }
  uint32_t version;
  std::memcpy(&version, raw + 4, 4);
  if (version != kRasterFormatVersion) {
    throw IoError("read_raster: unsupported version " + std::to_string(version) + " in " +
                  path.string());
  }
  uint8_t dtype_code = static_cast<uint8_t>(raw[8]);
  if (dtype_code > 1) {
    throw IoError("read_raster: unknown dtype code " + std::to_string(dtype_code) + " in " +
                  path.string());
  }
  ParsedHeader h;
  h.dtype = static_cast<Dtype>(dtype_code);
  std::memcpy(&h.h, raw + 9, 4);
  std::memcpy(&h.w, raw + 13, 4);
  if (h.h < 2 || h.w < 2 || h.h > (1u << 24) || h.w > (1u << 24)) {
    throw IoError("read_raster: implausible shape in " + path.string());
  }
  return h;
}

template <typename T>
Raster2D<T> read_payload(std::ifstream& in, const ParsedHeader& hdr, const fs::path& path) {
  Raster2D<T> r(static_cast<int>(hdr.h), static_cast<int>(hdr.w));
  const size_t bytes = r.size() * sizeof(T);
  in.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(bytes));
  if (in.gcount() != static_cast<std::streamsize>(bytes)) {
    throw IoError("read_raster: truncated payload in " + path.string());
  }
  in.peek();
  if (!in.eof()) {
    throw IoError("read_raster: trailing bytes in " + path.string());
  }
  return r;
}

}  // namespace

void write_raster(const RasterF32& r, const fs::path& path) {
  write_raster_impl(r, Dtype::F32, path);
}

void write_raster(const RasterI8& r, const fs::path& path) {
  write_raster_impl(r, Dtype::I8, path);
}

RasterHeader read_raster_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_raster: cannot open " + path.string());
  ParsedHeader h = parse_header(in, path);
  return RasterHeader{h.dtype, static_cast<int>(h.h), static_cast<int>(h.w)};
}

RasterF32 read_raster_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_raster: cannot open " + path.string());
  ParsedHeader h = parse_header(in, path);
  if (h.dtype != Dtype::F32) {
    throw IoError("read_raster: expected f32 raster in " + path.string());
  }
  RasterF32 r = read_payload<float>(in, h, path);
  if (!all_finite(r)) {
    throw IoError("read_raster: non-finite value in " + path.string());
  }
  return r;
}

RasterI8 read_raster_i8(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_raster: cannot open " + path.string());
  ParsedHeader h = parse_header(in, path);
  if (h.dtype != Dtype::I8) {
    throw IoError("read_raster: expected i8 raster in " + path.string());
  }
  return read_payload<int8_t>(in, h, path);
}

std::vector<const SampleRecord*> DatasetManifest::by_split(const std::string& split) const {
  std::vector<const SampleRecord*> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(&s);
  }
  return out;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  json j;
  j["format_version"] = m.format_version;
  j["seed"] = m.seed;
  j["splits"] = {{"train", m.split_train}, {"val", m.split_val}, {"test", m.split_test}};
  j["samples"] = json::array();
  for (const auto& s : m.samples) {
    json js = {
        {"id", s.id},
        {"size", s.size},
        {"fringe_count", s.fringe_count},
        {"seed", s.seed},
        {"wrapped", s.wrapped_path},
        {"wrap_count", s.wrap_count_path},
        {"label_gx", s.label_gx_path},
        {"label_gy", s.label_gy_path},
        {"split", s.split},
    };
    if (s.snr_db.has_value()) {
      js["snr_db"] = *s.snr_db;
    } else {
      js["snr_db"] = nullptr;
    }
    j["samples"].push_back(std::move(js));
  }

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("save_manifest: cannot open " + tmp.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("save_manifest: short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("save_manifest: rename to " + path.string() + " failed");
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_manifest: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("load_manifest: invalid JSON in " + path.string() + ": " + e.what());
  }

  DatasetManifest m;
  m.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
  m.format_version = j.at("format_version").get<uint32_t>();
  if (m.format_version != kManifestFormatVersion) {
    throw IoError("load_manifest: unsupported format_version " +
                  std::to_string(m.format_version));
  }
  m.seed = j.at("seed").get<uint64_t>();
  if (j.contains("splits")) {
    m.split_train = j["splits"].value("train", 0.8);
    m.split_val = j["splits"].value("val", 0.1);
    m.split_test = j["splits"].value("test", 0.1);
  }

  for (const auto& js : j.at("samples")) {
    SampleRecord s;
    s.id = js.at("id").get<std::string>();
    s.size = js.at("size").get<int>();
    if (js.contains("snr_db") && !js["snr_db"].is_null()) {
      s.snr_db = js["snr_db"].get<double>();
    }
    s.fringe_count = js.value("fringe_count", 0);
    s.seed = js.value("seed", uint64_t{0});
    s.wrapped_path = js.at("wrapped").get<std::string>();
    s.wrap_count_path = js.at("wrap_count").get<std::string>();
    s.label_gx_path = js.at("label_gx").get<std::string>();
    s.label_gy_path = js.at("label_gy").get<std::string>();
    s.split = js.at("split").get<std::string>();
    if (s.split != "train" && s.split != "val" && s.split != "test") {
      throw IoError("load_manifest: unknown split tag '" + s.split + "' for sample " + s.id);
    }

    // Validate referenced files by header only; payloads load lazily.
    const struct {
      const std::string* rel;
      Dtype dtype;
    } refs[] = {
        {&s.wrapped_path, Dtype::F32},
        {&s.wrap_count_path, Dtype::F32},
        {&s.label_gx_path, Dtype::I8},
        {&s.label_gy_path, Dtype::I8},
    };
    for (const auto& ref : refs) {
      const fs::path p = m.resolve(*ref.rel);
      if (!fs::exists(p)) {
        throw IoError("load_manifest: sample " + s.id + " references missing file " +
                      p.string());
      }
      RasterHeader h = read_raster_header(p);
      if (h.dtype != ref.dtype) {
        throw IoError("load_manifest: sample " + s.id + ": wrong dtype in " + p.string());
      }
      if (h.height != s.size || h.width != s.size) {
        throw IoError("load_manifest: sample " + s.id + ": shape " + std::to_string(h.height) +
                      "x" + std::to_string(h.width) + " does not match size " +
                      std::to_string(s.size) + " in " + p.string());
      }
    }
    m.samples.push_back(std::move(s));
  }
  return m;
}

}  // namespace umspu::io
