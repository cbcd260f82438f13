#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "liftuq/container.hpp"
#include "liftuq/errors.hpp"
#include "liftuq/rng.hpp"

using namespace liftuq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("liftuq_test_container_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

DatasetContainer two_samples() {
  DatasetContainer c;
  c.set_meta("kind", "darcy");
  c.set_meta("samples", "2");
  c.set_meta("a_first_key_after", "ordering matters");
  RngStream r(3);
  Tensor t{"a", {2, 33, 33, 1}, {}};
  for (std::size_t i = 0; i < t.element_count(); ++i) t.data.push_back(r.normal());
  c.add(t);
  t.name = "u";
  for (double& v : t.data) v = r.uniform();
  c.add(t);
  return c;
}

}  // namespace

TEST_CASE("round trip is bit exact including metadata order") {
  const auto dir = scratch("rt");
  const auto c = two_samples();
  write_dataset(dir, c);
  const auto back = read_dataset(dir);
  CHECK(back == c);
  CHECK(back.metadata[2].first == "a_first_key_after");
  // Rewriting what was read gives byte-identical files.
  const auto dir2 = scratch("rt2");
  write_dataset(dir2, back);
  for (const auto* f : {"manifest.json", "a.bin", "u.bin"}) CHECK(slurp(dir / f) == slurp(dir2 / f));
  CHECK(fs::file_size(dir / "a.bin") == 8u * 2 * 33 * 33);
}

TEST_CASE("blob holds little-endian doubles in declared order") {
  const auto dir = scratch("le");
  DatasetContainer c;
  c.add(Tensor{"x", {2}, {1.0, -2.5}});
  write_dataset(dir, c);
  const std::string bytes = slurp(dir / "x.bin");
  REQUIRE(bytes.size() == 16);
  // 1.0 = 0x3FF0000000000000, stored low byte first.
  CHECK(static_cast<unsigned char>(bytes[7]) == 0x3F);
  CHECK(static_cast<unsigned char>(bytes[6]) == 0xF0);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x00);
}

TEST_CASE("empty dataset round-trips") {
  const auto dir = scratch("empty");
  DatasetContainer c;
  c.set_meta("samples", "0");
  c.add(Tensor{"a", {0, 5, 5, 1}, {}});
  write_dataset(dir, c);
  CHECK(read_dataset(dir) == c);
}

TEST_CASE("truncated blob is an error naming the tensor") {
  const auto dir = scratch("trunc");
  write_dataset(dir, two_samples());
  fs::resize_file(dir / "u.bin", fs::file_size(dir / "u.bin") - 8);
  try {
    read_dataset(dir);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("'u'") != std::string::npos);
  }
}

TEST_CASE("unknown schema version is rejected") {
  const auto dir = scratch("ver");
  write_dataset(dir, two_samples());
  std::string m = slurp(dir / "manifest.json");
  const auto pos = m.find("\"schema_version\": 1");
  REQUIRE(pos != std::string::npos);
  m.replace(pos, 19, "\"schema_version\": 99");
  std::ofstream(dir / "manifest.json", std::ios::binary) << m;
  CHECK_THROWS_AS(read_dataset(dir), IoError);
}

TEST_CASE("missing container and bad tensor names are errors") {
  CHECK_THROWS_AS(read_dataset(scratch("nothing")), IoError);
  DatasetContainer c;
  CHECK_THROWS_AS(c.add(Tensor{"../evil", {1}, {0.0}}), Error);
  CHECK_THROWS_AS(c.add(Tensor{"x", {2}, {0.0}}), Error);
}
