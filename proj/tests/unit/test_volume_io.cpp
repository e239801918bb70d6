#include <doctest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <random>

#include "aiddti/volume_io.hpp"
#include "support.hpp"

using namespace aid;
using aid::test::TempDir;

namespace {

DwiVolume small_volume(std::size_t channels = 7) {
  DwiVolume v;
  v.dims = {2, 2, 2};
  v.scheme.bvals.assign(channels, 1000.0);
  v.scheme.bvals[0] = 0.0;
  v.scheme.bvecs.assign(channels, Vec3{0.0, 0.0, 1.0});
  v.scheme.bvecs[0] = {0.0, 0.0, 0.0};
  v.data.assign(8 * channels, 0.0);
  v.mask.assign(8, 1);
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  return a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("zero volume round trips") {
  TempDir dir;
  const auto v = small_volume();
  write_volume(v, dir / "zeros");
  const auto back = read_volume(dir / "zeros");
  CHECK(back.dims == v.dims);
  CHECK(back.data == v.data);
  CHECK(back.mask == v.mask);
  CHECK(back.scheme.bvals == v.scheme.bvals);
  CHECK(back.scheme.bvecs == v.scheme.bvecs);
}

TEST_CASE("header and payload paths resolve from any form") {
  const auto a = volume_paths("x/vol");
  const auto b = volume_paths("x/vol.vol.json");
  const auto c = volume_paths("x/vol.vol.raw");
  CHECK(a.header == b.header);
  CHECK(a.payload == c.payload);
  CHECK(a.header.string() == "x/vol.vol.json");
  CHECK(a.payload.string() == "x/vol.vol.raw");
}

TEST_CASE("payload one float short is a size mismatch naming both byte counts") {
  TempDir dir;
  write_volume(small_volume(), dir / "short");
  const auto raw = volume_paths(dir / "short").payload;
  std::filesystem::resize_file(raw, 55 * 4);
  try {
    (void)read_volume(dir / "short");
    FAIL("expected size mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::size_mismatch);
    const std::string msg = e.what();
    CHECK(msg.find("224") != std::string::npos);
    CHECK(msg.find("220") != std::string::npos);
  }
}

TEST_CASE("NaN in a masked-out voxel round trips and validates") {
  TempDir dir;
  auto v = small_volume();
  v.mask[5] = 0;
  v.at(5, 3) = std::nan("");
  write_volume(v, dir / "nan");
  const auto back = read_volume(dir / "nan");
  CHECK(std::isnan(back.at(5, 3)));
  CHECK(back.mask[5] == 0);
  CHECK_NOTHROW(back.validate());
}

TEST_CASE("float32 payload round trips float-representable values bit-exactly") {
  TempDir dir;
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<float> u(0.0f, 4.0f);
  for (int trial = 0; trial < 5; ++trial) {
    auto v = small_volume();
    for (auto& x : v.data) x = static_cast<double>(u(gen));
    for (auto& m : v.mask) m = gen() % 2;
    write_volume(v, dir / "f32");
    const auto back = read_volume(dir / "f32");
    CHECK(bit_equal(back.data, v.data));
    CHECK(back.mask == v.mask);
  }
}

TEST_CASE("float64 payload round trips arbitrary doubles bit-exactly") {
  TempDir dir;
  std::mt19937_64 gen(4);
  auto v = small_volume();
  for (auto& x : v.data) x = std::bit_cast<double>((gen() >> 2) | 0x3000000000000000ull);
  write_volume(v, dir / "f64", Dtype::float64);
  CHECK(bit_equal(read_volume(dir / "f64").data, v.data));
}

TEST_CASE("payload is little-endian float32, x fastest, channel slowest") {
  TempDir dir;
  auto v = small_volume(2);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<double>(i);
  write_volume(v, dir / "order");
  std::ifstream in(volume_paths(dir / "order").payload, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() == 16 * 4);
  for (std::size_t i = 0; i < 16; ++i) {
    const std::uint32_t bits = bytes[4 * i] | (bytes[4 * i + 1] << 8) | (bytes[4 * i + 2] << 16) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    CHECK(std::bit_cast<float>(bits) == static_cast<float>(i));
  }
}

TEST_CASE("mask run-length encoding round trips") {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 50; ++trial) {
    Mask m(1 + gen() % 200);
    const int density = static_cast<int>(gen() % 4);
    for (auto& b : m) b = static_cast<int>(gen() % 4) < density;
    const auto runs = encode_mask_rle(m);
    CHECK(decode_mask_rle(runs, m.size()) == m);
  }
  CHECK(encode_mask_rle(Mask{1, 1, 0}) == std::vector<std::uint64_t>{0, 2, 1});
  CHECK_THROWS_AS((void)decode_mask_rle({1, 2}, 4), Error);
}

TEST_CASE("malformed header is a parse error") {
  TempDir dir;
  write_volume(small_volume(), dir / "bad");
  atomic_write(volume_paths(dir / "bad").header, "{\"format\": \"aiddti-volume\"");
  try {
    (void)read_volume(dir / "bad");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse);
  }
}

TEST_CASE("missing payload is an io error") {
  TempDir dir;
  write_volume(small_volume(), dir / "gone");
  std::filesystem::remove(volume_paths(dir / "gone").payload);
  try {
    (void)read_volume(dir / "gone");
    FAIL("expected io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io);
  }
}

TEST_CASE("FSL scheme files round trip") {
  TempDir dir;
  std::mt19937_64 gen(2);
  GradientScheme s;
  s.bvals.push_back(0.0);
  s.bvecs.push_back({0, 0, 0});
  for (int i = 0; i < 12; ++i) {
    s.bvals.push_back(1000.0);
    s.bvecs.push_back(test::random_unit(gen));
  }
  write_scheme(s, dir / "s.bval", dir / "s.bvec");
  const auto back = read_scheme(dir / "s.bval", dir / "s.bvec");
  CHECK(back.bvals == s.bvals);
  CHECK(back.bvecs == s.bvecs);
  const std::string bvec_text = read_file(dir / "s.bvec");
  CHECK(std::count(bvec_text.begin(), bvec_text.end(), '\n') == 3);
}

TEST_CASE("FSL scheme with mismatched counts is rejected") {
  TempDir dir;
  atomic_write(dir / "a.bval", "0 1000 1000\n");
  atomic_write(dir / "a.bvec", "0 1 0\n0 0 1\n0 0 0\n0 0 0\n");
  CHECK_THROWS_AS((void)read_scheme(dir / "a.bval", dir / "a.bvec"), Error);
  atomic_write(dir / "a.bvec", "0 1\n0 0\n0 0\n");
  CHECK_THROWS_AS((void)read_scheme(dir / "a.bval", dir / "a.bvec"), Error);
}

TEST_CASE("metric maps keep their channel identity on disk") {
  TempDir dir;
  Mask m(8, 1);
  m[2] = 0;
  auto maps = MetricMaps::zeros({2, 2, 2}, m);
  maps.fa.assign(8, 0.25);
  maps.md.assign(8, 0.5);
  maps.ad.assign(8, 0.75);
  write_metric_maps(maps, dir / "maps");
  CHECK(std::filesystem::exists(volume_paths(metric_map_path(dir / "maps", Metric::md)).header));
  const auto back = read_metric_maps(dir / "maps");
  CHECK(back.fa == maps.fa);
  CHECK(back.md == maps.md);
  CHECK(back.ad == maps.ad);
  CHECK(back.mask == m);
}

TEST_CASE("generic volume keeps attributes and optional scheme") {
  TempDir dir;
  VolumeFile vf;
  vf.dims = {1, 2, 3};
  vf.channels = 2;
  vf.data.assign(12, 1.5);
  vf.mask.assign(6, 1);
  vf.attributes = {{"kind", "test"}};
  write_volume_file(vf, dir / "g");
  const auto back = read_volume_file(dir / "g");
  CHECK(back.channels == 2);
  CHECK_FALSE(back.scheme.has_value());
  CHECK(back.attributes.at("kind") == "test");
  CHECK_THROWS_AS((void)read_volume(dir / "g"), Error);
}

TEST_CASE("atomic write leaves no temporary files behind") {
  TempDir dir;
  atomic_write(dir / "sub" / "f.txt", "hello");
  atomic_write(dir / "sub" / "f.txt", "world");
  CHECK(read_file(dir / "sub" / "f.txt") == "world");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "sub")) ++entries;
  CHECK(entries == 1);
}

TEST_CASE("dtype names") {
  CHECK(parse_dtype("float32") == Dtype::float32);
  CHECK(parse_dtype("float64") == Dtype::float64);
  CHECK_THROWS_AS((void)parse_dtype("int8"), Error);
}
