#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "geoseg/error.hpp"
#include "geoseg/io.hpp"
#include "geoseg/propagation.hpp"
#include "geoseg/rng.hpp"
#include "geoseg/synth.hpp"
#include "json.hpp"

using namespace geoseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("geoseg_io_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

void truncate(const fs::path& p, std::size_t drop) {
  const std::string s = bytes(p);
  put(p, s.substr(0, s.size() - drop));
}

Dataset small_dataset() {
  SceneSpec a = make_room_scene("alpha", 1, 6), b = make_room_scene("beta", 2, 6);
  a.intrinsics = b.intrinsics = {13.75, 13.75, 7.5, 7.5, 16, 16};
  GenerateOptions opt;
  opt.labeled_fraction = 1.0 / 3.0;
  opt.validation_views = 1;
  opt.test_views = 2;
  opt.generalization = {b};
  return generate_dataset({a}, opt, 4);
}

std::string where_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.where();
  }
  return "(no error)";
}

}  // namespace

TEST_CASE("raster round trips") {
  TempDir t("raster");
  Rng rng(1);
  ColorImage c(5, 3);
  for (auto& x : c.rgb) x = static_cast<std::uint8_t>(rng.index(256));
  LabelMap l(5, 3);
  for (auto& x : l.labels) x = rng.index(4) == 0 ? kIgnore : static_cast<std::uint8_t>(rng.index(4));
  DepthMap d(5, 3);
  for (auto& x : d.values) x = static_cast<float>(rng.index(6000)) / 1000.0f;
  io::write_ppm(t.path / "c.ppm", c);
  io::write_pgm(t.path / "l.pgm", l);
  io::write_depth(t.path / "d.gsd", d);
  CHECK(io::read_ppm(t.path / "c.ppm") == c);
  CHECK(io::read_pgm(t.path / "l.pgm") == l);
  const DepthMap back = io::read_depth(t.path / "d.gsd");
  CHECK(back.width == 5);
  for (std::size_t i = 0; i < d.values.size(); ++i) CHECK(back.values[i] == doctest::Approx(d.values[i]).epsilon(1e-6));
}

TEST_CASE("depth is stored as little-endian millimetres with 0 meaning missing") {
  TempDir t("depth");
  DepthMap d(2, 1);
  d.values = {0.0f, 1.2345f};
  io::write_depth(t.path / "d.gsd", d);
  const std::string b = bytes(t.path / "d.gsd");
  REQUIRE(b.size() == 4 + 4 + 4 + 2 * 2);
  CHECK(b.substr(0, 4) == "GSD1");
  CHECK(static_cast<unsigned char>(b[12]) == 0);
  CHECK(static_cast<unsigned char>(b[13]) == 0);
  CHECK((static_cast<unsigned char>(b[14]) | static_cast<unsigned char>(b[15]) << 8) == 1235);  // rounded
  CHECK(io::read_depth(t.path / "d.gsd").values[0] == 0.0f);
  d.values = {70.0f, 1.0f};
  CHECK_THROWS_AS(io::write_depth(t.path / "big.gsd", d), FormatError);
}

TEST_CASE("truncated and malformed rasters are rejected") {
  TempDir t("bad");
  io::write_ppm(t.path / "c.ppm", ColorImage(4, 4));
  truncate(t.path / "c.ppm", 1);
  CHECK_THROWS_AS(io::read_ppm(t.path / "c.ppm"), FormatError);
  io::write_depth(t.path / "d.gsd", DepthMap(4, 4, 1.0f));
  truncate(t.path / "d.gsd", 3);
  CHECK_THROWS_AS(io::read_depth(t.path / "d.gsd"), FormatError);
  put(t.path / "x.pgm", "P5\n2 2\n65535\n12345678");
  CHECK_THROWS_AS(io::read_pgm(t.path / "x.pgm"), FormatError);
  put(t.path / "y.pgm", "P2\n1 1\n255\n0");
  CHECK_THROWS_AS(io::read_pgm(t.path / "y.pgm"), FormatError);
  put(t.path / "z.gsd", "GSD2" + std::string(8, '\0'));
  CHECK_THROWS_AS(io::read_depth(t.path / "z.gsd"), FormatError);
  CHECK_THROWS_AS(io::read_ppm(t.path / "missing.ppm"), FormatError);
}

TEST_CASE("pose text round trip and corrupt poses") {
  TempDir t("pose");
  const RigidTransform p = RigidTransform::look_at({1, 1.5, -2}, {0, 0.5, 1});
  io::write_pose(t.path / "p.txt", p);
  const RigidTransform q = io::read_pose(t.path / "p.txt");
  CHECK((q.matrix() - p.matrix()).norm() < 1e-15);
  put(t.path / "scaled.txt", "2 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n");
  CHECK_THROWS_AS(io::read_pose(t.path / "scaled.txt"), FormatError);
  put(t.path / "short.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n");
  CHECK_THROWS_AS(io::read_pose(t.path / "short.txt"), FormatError);
  put(t.path / "row.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1 1\n");
  CHECK_THROWS_AS(io::read_pose(t.path / "row.txt"), FormatError);
  put(t.path / "junk.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 x\n");
  CHECK_THROWS_AS(io::read_pose(t.path / "junk.txt"), FormatError);
}

TEST_CASE("dataset round trip") {
  TempDir t("dataset");
  const Dataset ds = small_dataset();
  io::write_dataset(ds, t.path);
  const Dataset back = io::read_dataset(t.path);
  CHECK(back.intrinsics == ds.intrinsics);
  CHECK(back.class_names == ds.class_names);
  for (Split s : {Split::train, Split::validation, Split::test, Split::generalization}) {
    REQUIRE(back.split(s).size() == ds.split(s).size());
    for (std::size_t i = 0; i < ds.split(s).size(); ++i) {
      const Frame &a = ds.split(s)[i], &b = back.split(s)[i];
      CHECK(a.id() == b.id());
      CHECK(a.color == b.color);
      CHECK(a.annotation == b.annotation);
      CHECK(a.truth == b.truth);
      CHECK((a.pose.matrix() - b.pose.matrix()).norm() < 1e-15);
      for (std::size_t p = 0; p < a.depth.values.size(); ++p) CHECK(std::abs(a.depth.values[p] - b.depth.values[p]) <= 5e-4);
    }
  }
  const auto manifest = nlohmann::json::parse(bytes(t.path / "manifest.json"));
  CHECK(manifest["version"] == io::kManifestVersion);
}

TEST_CASE("manifest errors name the file and the field") {
  TempDir t("manifest");
  io::write_dataset(small_dataset(), t.path);
  const fs::path m = t.path / "manifest.json";
  auto j = nlohmann::json::parse(bytes(m));
  const auto original = j;

  j["frames"][1]["depth"] = "nowhere.gsd";
  put(m, j.dump());
  CHECK(where_of([&] { io::read_dataset(t.path); }).find("frames[1]") != std::string::npos);

  j = original;
  j["version"] = 99;
  put(m, j.dump());
  CHECK(where_of([&] { io::read_dataset(t.path); }).find("manifest.json") != std::string::npos);

  j = original;
  j["frames"][2].erase("pose");
  put(m, j.dump());
  CHECK(where_of([&] { io::read_dataset(t.path); }).find("frames[2].pose") != std::string::npos);

  j = original;
  j["frames"].push_back(j["frames"][0]);
  put(m, j.dump());
  CHECK_THROWS_AS(io::read_dataset(t.path), FormatError);

  put(m, "{ not json");
  CHECK_THROWS_AS(io::read_dataset(t.path), FormatError);
}

TEST_CASE("propagated cache round trip") {
  TempDir t("prop");
  const Dataset ds = small_dataset();
  const auto labels = propagate_dataset(ds, 0.05, 3).labels;
  CHECK_FALSE(io::has_propagated(t.path));
  io::write_propagated(labels, t.path);
  CHECK(io::has_propagated(t.path));
  CHECK(io::read_propagated(t.path) == labels);
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir t("ckpt");
  TrainState s = TrainState::fresh(NetConfig{2, 4, 3, 8, 8}, 5);
  s.step = 17;
  s.adam_steps = 12;
  s.pretrained = true;
  s.best_accuracy = 0.625;
  s.best_step = 10;
  s.m[0][0] = 0.5f;
  s.v[1][2] = 0.25f;
  s.best.parameters()[2].value.mutable_data()[1] = 3.0f;
  const fs::path p = t.path / "c.gsck";
  io::write_checkpoint(s, p);
  const TrainState r = io::read_checkpoint(p);
  CHECK(r.net.config() == s.net.config());
  CHECK(r.step == 17);
  CHECK(r.adam_steps == 12);
  CHECK(r.pretrained);
  CHECK(r.best_accuracy == 0.625);
  CHECK(r.best_step == 10);
  CHECK(r.m == s.m);
  CHECK(r.v == s.v);
  for (std::size_t k = 0; k < s.net.parameters().size(); ++k) {
    CHECK(std::ranges::equal(r.net.parameters()[k].value.data(), s.net.parameters()[k].value.data()));
    CHECK(std::ranges::equal(r.best.parameters()[k].value.data(), s.best.parameters()[k].value.data()));
  }
  io::write_checkpoint(r, t.path / "again.gsck");
  CHECK(bytes(p) == bytes(t.path / "again.gsck"));

  std::string b = bytes(p);
  CHECK(b.substr(0, 6) == "GSCKPT");
  b[b.size() / 2] ^= 0x10;
  put(t.path / "flip.gsck", b);
  CHECK_THROWS_AS(io::read_checkpoint(t.path / "flip.gsck"), FormatError);
  put(t.path / "short.gsck", bytes(p).substr(0, 100));
  CHECK_THROWS_AS(io::read_checkpoint(t.path / "short.gsck"), FormatError);
  std::string v2 = bytes(p);
  v2[8] = 2;
  put(t.path / "v2.gsck", v2);
  CHECK_THROWS_AS(io::read_checkpoint(t.path / "v2.gsck"), FormatError);
  CHECK_THROWS_AS(io::read_checkpoint(t.path / "none.gsck"), FormatError);
}
