#include <doctest.h>

#include <fstream>

#include "test_util.hpp"
#include "umspu/field_io.hpp"

using namespace umspu;
namespace fs = std::filesystem;

TEST_CASE("raster round-trip is bit-exact for f32") {
  testutil::TempDir tmp("fio");
  RasterF32 r(2, 2);
  r.at(0, 0) = 0.0f;
  r.at(0, 1) = 1.0f;
  r.at(1, 0) = 2.0f;
  r.at(1, 1) = 3.0f;
  const fs::path p = tmp.path / "a.umsp";
  io::write_raster(r, p);
  // magic(4) + version(4) + dtype(1) + H(4) + W(4) then the payload
  CHECK(fs::file_size(p) == 17 + 16);
  RasterF32 back = io::read_raster_f32(p);
  CHECK(back == r);
}

TEST_CASE("raster round-trip is bit-exact for i8 labels") {
  testutil::TempDir tmp("fio");
  RasterI8 r(3, 2);
  const int8_t vals[] = {-1, 0, 1, 1, 0, -1};
  for (size_t i = 0; i < r.size(); ++i) r[i] = vals[i];
  const fs::path p = tmp.path / "l.umsp";
  io::write_raster(r, p);
  CHECK(io::read_raster_i8(p) == r);
}

TEST_CASE("raster with a NaN is rejected before writing") {
  testutil::TempDir tmp("fio");
  RasterF32 r(2, 2, 1.0f);
  r.at(1, 1) = std::nanf("");
  CHECK_THROWS_AS(io::write_raster(r, tmp.path / "bad.umsp"), ValidationError);
  CHECK(!fs::exists(tmp.path / "bad.umsp"));
}

TEST_CASE("reader rejects bad magic, truncation and dtype confusion") {
  testutil::TempDir tmp("fio");
  RasterF32 r(4, 4, 2.5f);
  const fs::path p = tmp.path / "x.umsp";
  io::write_raster(r, p);

  SUBCASE("bad magic") {
    auto bytes = [&] {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    }();
    bytes[0] = 'X';
    std::ofstream(tmp.path / "m.umsp", std::ios::binary) << bytes;
    CHECK_THROWS_AS(io::read_raster_f32(tmp.path / "m.umsp"), IoError);
  }
  SUBCASE("truncated payload") {
    auto bytes = [&] {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    }();
    bytes.resize(bytes.size() - 5);
    std::ofstream(tmp.path / "t.umsp", std::ios::binary) << bytes;
    CHECK_THROWS_AS(io::read_raster_f32(tmp.path / "t.umsp"), IoError);
  }
  SUBCASE("wrong dtype accessor") { CHECK_THROWS_AS(io::read_raster_i8(p), IoError); }
}

TEST_CASE("round-trip property over random shapes and both dtypes") {
  testutil::TempDir tmp("fio");
  Rng rng(42);
  for (int rep = 0; rep < 60; ++rep) {
    const int h = rng.uniform_int(2, 70);
    const int w = rng.uniform_int(2, 70);
    const fs::path p = tmp.path / ("r" + std::to_string(rep) + ".umsp");
    if (rep % 2 == 0) {
      RasterF32 r = testutil::random_raster(h, w, rng, -1e6f, 1e6f);
      io::write_raster(r, p);
      CHECK(io::read_raster_f32(p) == r);
    } else {
      RasterI8 r = testutil::random_labels_raster(h, w, rng);
      io::write_raster(r, p);
      CHECK(io::read_raster_i8(p) == r);
    }
  }
}

namespace {

io::DatasetManifest make_one_sample_manifest(const fs::path& dir, int size) {
  fs::create_directories(dir / "rasters");
  RasterF32 phi(size, size, 0.5f);
  RasterF32 k(size, size, 0.0f);
  RasterI8 g(size, size, 0);
  io::write_raster(phi, dir / "rasters/s0_phi.umsp");
  io::write_raster(k, dir / "rasters/s0_k.umsp");
  io::write_raster(g, dir / "rasters/s0_gx.umsp");
  io::write_raster(g, dir / "rasters/s0_gy.umsp");

  io::DatasetManifest m;
  m.seed = 7;
  m.root = dir;
  io::SampleRecord rec;
  rec.id = "s0";
  rec.size = size;
  rec.snr_db = 8.0;
  rec.fringe_count = 3;
  rec.wrapped_path = "rasters/s0_phi.umsp";
  rec.wrap_count_path = "rasters/s0_k.umsp";
  rec.label_gx_path = "rasters/s0_gx.umsp";
  rec.label_gy_path = "rasters/s0_gy.umsp";
  rec.split = "train";
  m.samples.push_back(rec);
  return m;
}

}  // namespace

TEST_CASE("manifest save/load round trip") {
  testutil::TempDir tmp("man");

  SUBCASE("empty manifest") {
    io::DatasetManifest m;
    m.seed = 1;
    io::save_manifest(m, tmp.path / "m.json");
    io::DatasetManifest back = io::load_manifest(tmp.path / "m.json");
    CHECK(back.samples.empty());
    CHECK(back.seed == 1);
  }

  SUBCASE("one 256x256 sample") {
    auto m = make_one_sample_manifest(tmp.path, 256);
    io::save_manifest(m, tmp.path / "m.json");
    io::DatasetManifest back = io::load_manifest(tmp.path / "m.json");
    REQUIRE(back.samples.size() == 1);
    CHECK(back.samples[0].size == 256);
    CHECK(back.samples[0].snr_db == doctest::Approx(8.0));
  }

  SUBCASE("missing raster names the path") {
    auto m = make_one_sample_manifest(tmp.path, 64);
    io::save_manifest(m, tmp.path / "m.json");
    fs::remove(tmp.path / "rasters/s0_gy.umsp");
    try {
      io::load_manifest(tmp.path / "m.json");
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("s0_gy.umsp") != std::string::npos);
    }
  }

  SUBCASE("shape mismatch is rejected") {
    auto m = make_one_sample_manifest(tmp.path, 64);
    m.samples[0].size = 128;
    io::save_manifest(m, tmp.path / "m.json");
    CHECK_THROWS_AS(io::load_manifest(tmp.path / "m.json"), IoError);
  }

  SUBCASE("unknown split tag is rejected") {
    auto m = make_one_sample_manifest(tmp.path, 64);
    m.samples[0].split = "holdout";
    io::save_manifest(m, tmp.path / "m.json");
    CHECK_THROWS_AS(io::load_manifest(tmp.path / "m.json"), IoError);
  }
}
