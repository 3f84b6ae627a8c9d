#include <cmath>
#include <set>

#include "doctest.h"
#include "geoseg/error.hpp"
#include "geoseg/synth.hpp"

using namespace geoseg;

namespace {

SceneSpec small(const std::string& name, std::uint64_t seed, int frames = 8) {
  SceneSpec s = make_room_scene(name, seed, frames);
  s.intrinsics = {13.75, 13.75, 7.5, 7.5, 16, 16};
  return s;
}

}  // namespace

TEST_CASE("rendered depth is the optical-axis depth of the nearest ray hit") {
  SceneSpec spec = small("d", 1);
  spec.depth_noise = 0;
  const Frame f = render_frame(spec, 2);
  const Intrinsics& K = spec.intrinsics;
  for (int y = 0; y < K.height; y += 3)
    for (int x = 0; x < K.width; x += 3) {
      const Eigen::Vector3d dir = f.pose.rotation * Eigen::Vector3d((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      const auto hit = cast_ray(spec, f.pose.translation, dir);
      REQUIRE(hit);
      CHECK(f.depth.at(x, y) == doctest::Approx(hit->t).epsilon(1e-6));
      CHECK(f.truth->at(x, y) == spec.primitives[hit->primitive].label);
    }
}

TEST_CASE("ray casting against a single box") {
  SceneSpec s;
  Primitive box;
  box.lo = {-1, -1, 4};
  box.hi = {1, 1, 6};
  box.label = 2;
  s.primitives = {box};
  const auto hit = cast_ray(s, {0, 0, 0}, {0, 0, 1});
  REQUIRE(hit);
  CHECK(hit->t == doctest::Approx(4.0));
  CHECK(hit->face_axis == 2);
  CHECK_FALSE(cast_ray(s, {0, 0, 0}, {0, 0, -1}));
  CHECK_FALSE(cast_ray(s, {0, 0, 0}, {1, 0, 0}));
}

TEST_CASE("rendering is deterministic per scene seed") {
  const SceneSpec a = small("r", 7), b = small("r", 7), c = small("r", 8);
  const Frame fa = render_frame(a, 3), fb = render_frame(b, 3), fc = render_frame(c, 3);
  CHECK(fa.color == fb.color);
  CHECK(fa.depth.values == fb.depth.values);
  CHECK(*fa.truth == *fb.truth);
  CHECK_FALSE(fa.color == fc.color);
}

TEST_CASE("labels are valid classes and the room is closed") {
  const SceneSpec spec = small("l", 3);
  for (int i = 0; i < spec.trajectory.frames; ++i) {
    const Frame f = render_frame(spec, i);
    for (auto l : f.truth->labels) CHECK(l < 4);
    for (float d : f.depth.values) CHECK(d > 0);
    CHECK(f.pose.is_valid());
  }
}

TEST_CASE("labeled indices are uniformly spaced") {
  CHECK(labeled_count(30, 1.0 / 30.0) == 1);
  CHECK(labeled_indices(30, 1.0 / 10.0).size() == 3);
  const auto idx = labeled_indices(30, 0.1);
  CHECK(idx[1] - idx[0] == idx[2] - idx[1]);
  CHECK_THROWS_AS(labeled_count(10, 0.01), ConfigError);
}

TEST_CASE("generated splits: annotations, poses and determinism") {
  GenerateOptions opt;
  opt.labeled_fraction = 0.25;
  opt.unannotated = {small("na", 4)};
  opt.generalization = {small("gen", 5)};
  const std::vector<SceneSpec> specs = {small("a", 1), small("b", 2)};
  const Dataset ds = generate_dataset(specs, opt, 3);
  CHECK(ds.num_classes() == 4);
  CHECK(ds.train.size() == 24);
  CHECK(ds.labeled().size() == 4);  // 2 per annotated sequence, none for "na"
  CHECK(ds.validation.size() == 8);
  CHECK(ds.test.size() == 12);
  CHECK(ds.generalization.size() == 8);
  for (const Frame& f : ds.train) CHECK(f.truth);
  for (const Frame* f : ds.labeled()) CHECK(f->sequence != "na");
  for (const auto& split : {&ds.validation, &ds.test, &ds.generalization})
    for (const Frame& f : *split) CHECK(f.annotation);
  // Held-out views never coincide with a training pose.
  for (const Frame& v : ds.test)
    for (const Frame& t : ds.train)
      if (t.sequence == v.sequence) CHECK((t.pose.translation - v.pose.translation).norm() > 1e-6);
  const Dataset again = generate_dataset(specs, opt, 3);
  CHECK(again.test[0].color == ds.test[0].color);
  CHECK(again.train[5].depth.values == ds.train[5].depth.values);
}

TEST_CASE("benchmark scenes") {
  const BenchmarkScenes b = make_benchmark_scenes(1);
  CHECK(b.annotated.size() == 4);
  CHECK(b.unannotated.size() == 2);
  CHECK(b.generalization.size() == 2);
  std::set<std::string> names;
  for (const auto* list : {&b.annotated, &b.unannotated, &b.generalization})
    for (const auto& s : *list) {
      CHECK(s.trajectory.frames == 30);
      CHECK(s.intrinsics.width == 64);
      names.insert(s.name);
    }
  CHECK(names.size() == 8);
}

TEST_CASE("scene validation") {
  SceneSpec s = small("v", 1);
  CHECK_NOTHROW(s.validate());
  SceneSpec empty = s;
  empty.primitives.clear();
  CHECK_THROWS_AS(empty.validate(), ConfigError);
  SceneSpec one = s;
  one.trajectory.frames = 1;
  CHECK_THROWS_AS(one.validate(), ConfigError);
  SceneSpec outside = s;
  for (auto& p : outside.primitives)
    if (p.kind == PrimitiveKind::box) p.hi = {100, 100, 100};
  CHECK_THROWS_AS(outside.validate(), ConfigError);
}
