#include "geoseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "geoseg/error.hpp"
#include "geoseg/rng.hpp"

namespace geoseg {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kEps = 1e-9;

std::optional<std::pair<double, int>> intersect(const Primitive& prim, const Eigen::Vector3d& o,
                                                const Eigen::Vector3d& d) {
  if (prim.kind == PrimitiveKind::plane) {
    const double dn = d[prim.axis];
    if (prim.facing * dn >= 0) return std::nullopt;  // seen from behind or parallel
    const double t = (prim.offset - o[prim.axis]) / dn;
    if (t <= kEps) return std::nullopt;
    return std::pair{t, prim.axis};
  }
  double tnear = -std::numeric_limits<double>::infinity();
  double tfar = std::numeric_limits<double>::infinity();
  int axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < prim.lo[a] || o[a] > prim.hi[a]) return std::nullopt;
      continue;
    }
    double t1 = (prim.lo[a] - o[a]) / d[a];
    double t2 = (prim.hi[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > tnear) {
      tnear = t1;
      axis = a;
    }
    tfar = std::min(tfar, t2);
  }
  if (tnear > tfar || tnear <= kEps) return std::nullopt;
  return std::pair{tnear, axis};
}

double hash_unit(std::uint64_t a, std::int64_t b, std::int64_t c, std::uint64_t ch) {
  const std::uint64_t h = derive_seed(a, {static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(c), ch});
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

std::array<double, 3> shade(const SceneSpec& spec, const RayHit& hit, const Eigen::Vector3d& x) {
  const Primitive& prim = spec.primitives[hit.primitive];
  const int a1 = (hit.face_axis + 1) % 3, a2 = (hit.face_axis + 2) % 3;
  double factor = hit.face_axis == 1 ? 1.0 : (hit.face_axis == 0 ? 0.85 : 0.72);
  if (prim.checker_period > 0) {
    const auto c1 = static_cast<std::int64_t>(std::floor(x[a1] / prim.checker_period));
    const auto c2 = static_cast<std::int64_t>(std::floor(x[a2] / prim.checker_period));
    factor *= ((c1 + c2) & 1) ? 1.0 + prim.checker_contrast : 1.0 - prim.checker_contrast;
  }
  constexpr double cell = 0.02;
  const auto q1 = static_cast<std::int64_t>(std::floor(x[a1] / cell));
  const auto q2 = static_cast<std::int64_t>(std::floor(x[a2] / cell));
  std::array<double, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    const double n = spec.noise_amplitude *
                     hash_unit(spec.seed ^ static_cast<std::uint64_t>(hit.primitive + 1), q1, q2, c);
    rgb[c] = std::clamp(prim.color[c] * factor + n, 0.0, 1.0);
  }
  return rgb;
}

std::array<double, 3> hsv(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s, hp = h / 60.0, x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

std::array<double, 3> palette(Rng& rng, int cls) {
  switch (cls) {
    case kGround:
      return rng.uniform() < 0.6 ? hsv(rng.uniform(15, 45), rng.uniform(0.25, 0.55), rng.uniform(0.3, 0.55))
                                 : hsv(rng.uniform(0, 360), rng.uniform(0.0, 0.15), rng.uniform(0.3, 0.6));
    case kStructure:
      return hsv(rng.uniform(0, 360), rng.uniform(0.03, 0.25), rng.uniform(0.65, 0.9));
    case kFurniture:
      return rng.uniform() < 0.6 ? hsv(rng.uniform(15, 45), rng.uniform(0.3, 0.65), rng.uniform(0.25, 0.6))
                                 : hsv(rng.uniform(180, 250), rng.uniform(0.25, 0.55), rng.uniform(0.3, 0.6));
    default:
      return hsv(rng.uniform(0, 360), rng.uniform(0.55, 0.95), rng.uniform(0.5, 0.95));
  }
}

Primitive make_plane(int label, int axis, double offset, double facing, std::array<double, 3> color,
                     double period) {
  Primitive p;
  p.kind = PrimitiveKind::plane;
  p.label = label;
  p.axis = axis;
  p.offset = offset;
  p.facing = facing;
  p.color = color;
  p.checker_period = period;
  return p;
}

Primitive make_box(int label, Eigen::Vector3d lo, Eigen::Vector3d hi, std::array<double, 3> color,
                   double period) {
  Primitive p;
  p.kind = PrimitiveKind::box;
  p.label = label;
  p.lo = lo;
  p.hi = hi;
  p.color = color;
  p.checker_period = period;
  return p;
}

}  // namespace

RigidTransform Trajectory::pose_at(double t, double height_offset) const {
  const double a = start_angle + (end_angle - start_angle) * t;
  const Eigen::Vector3d dir(std::cos(a), 0.0, std::sin(a));
  const Eigen::Vector3d eye = center + radius * dir + Eigen::Vector3d(0, height + height_offset, 0);
  const Eigen::Vector3d look(std::cos(a) * std::cos(pitch), -std::sin(pitch), std::sin(a) * std::cos(pitch));
  return RigidTransform::look_at(eye, eye + look);
}

void SceneSpec::validate() const {
  if (primitives.empty()) throw ConfigError("scene '" + name + "': empty primitive list");
  if (trajectory.frames < 2) throw ConfigError("scene '" + name + "': trajectory needs >= 2 poses");
  if (num_classes < 1) throw ConfigError("scene '" + name + "': num_classes must be >= 1");
  intrinsics.validate();
  constexpr double tol = 1e-9;
  for (const auto& p : primitives) {
    if (p.label < 0 || p.label >= num_classes)
      throw ConfigError("scene '" + name + "': primitive label out of range");
    if (p.kind == PrimitiveKind::box) {
      if ((p.lo.array() > p.hi.array()).any())
        throw ConfigError("scene '" + name + "': box with lo > hi");
      if ((p.lo.array() < room_min.array() - tol).any() || (p.hi.array() > room_max.array() + tol).any())
        throw ConfigError("scene '" + name + "': box outside the room extents");
    } else {
      if (p.axis < 0 || p.axis > 2) throw ConfigError("scene '" + name + "': plane axis must be 0..2");
      if (p.offset < room_min[p.axis] - tol || p.offset > room_max[p.axis] + tol)
        throw ConfigError("scene '" + name + "': plane outside the room extents");
    }
  }
  for (int i = 0; i < trajectory.frames; ++i) pose(i).validate();
}

RigidTransform SceneSpec::pose(int index) const {
  if (index < 0 || index >= trajectory.frames)
    throw ConfigError("scene '" + name + "': pose index " + std::to_string(index) + " out of range");
  return trajectory.pose_at(static_cast<double>(index) / (trajectory.frames - 1));
}

std::optional<RayHit> cast_ray(const SceneSpec& spec, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& dir) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
    const auto hit = intersect(spec.primitives[i], origin, dir);
    if (hit && (!best || hit->first < best->t))
      best = RayHit{hit->first, static_cast<int>(i), hit->second};
  }
  return best;
}

Frame render_view(const SceneSpec& spec, const RigidTransform& pose, int index,
                  std::uint64_t noise_stream) {
  if (spec.primitives.empty()) throw ConfigError("scene '" + spec.name + "': empty primitive list");
  const Intrinsics& K = spec.intrinsics;
  Frame frame;
  frame.sequence = spec.name;
  frame.index = index;
  frame.pose = pose;
  frame.color = ColorImage(K.width, K.height);
  frame.depth = DepthMap(K.width, K.height);
  LabelMap truth(K.width, K.height);

#pragma omp parallel for schedule(static)
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const Eigen::Vector3d ray_cam((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      const Eigen::Vector3d dir = pose.rotation * ray_cam;
      const auto hit = cast_ray(spec, pose.translation, dir);
      if (!hit) continue;
      const std::size_t i = static_cast<std::size_t>(y) * K.width + x;
      frame.depth.values[i] = static_cast<float>(hit->t);
      truth.labels[i] = static_cast<std::uint8_t>(spec.primitives[hit->primitive].label);
      const auto rgb = shade(spec, *hit, pose.translation + hit->t * dir);
      for (int c = 0; c < 3; ++c)
        frame.color.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(rgb[c] * 255.0));
    }
  }
  if (spec.depth_noise > 0) {
    Rng rng(derive_seed(spec.seed, {noise_stream, static_cast<std::uint64_t>(index), 1}));
    for (auto& d : frame.depth.values)
      if (d > 0) d = std::max(0.0f, d + static_cast<float>(spec.depth_noise * rng.normal()));
  }
  frame.truth = std::move(truth);
  return frame;
}

Frame render_frame(const SceneSpec& spec, int pose_index) {
  return render_view(spec, spec.pose(pose_index), pose_index);
}

SceneSpec make_room_scene(const std::string& name, std::uint64_t seed, int frames) {
  Rng rng(seed);
  SceneSpec spec;
  spec.name = name;
  spec.seed = seed;
  const double hw = rng.uniform(2.0, 3.0), hd = rng.uniform(2.0, 3.0), h = rng.uniform(2.4, 2.8);
  spec.room_min = Eigen::Vector3d(-hw, 0.0, -hd);
  spec.room_max = Eigen::Vector3d(hw, h, hd);

  auto& prims = spec.primitives;
  prims.push_back(make_plane(kGround, 1, 0.0, 1.0, palette(rng, kGround), rng.uniform(0.3, 0.6)));
  const auto wall_a = palette(rng, kStructure), wall_b = palette(rng, kStructure);
  prims.push_back(make_plane(kStructure, 1, h, -1.0, palette(rng, kStructure), 0.0));
  prims.push_back(make_plane(kStructure, 0, -hw, 1.0, wall_a, 0.0));
  prims.push_back(make_plane(kStructure, 0, hw, -1.0, wall_b, 0.0));
  prims.push_back(make_plane(kStructure, 2, -hd, 1.0, wall_b, 0.0));
  prims.push_back(make_plane(kStructure, 2, hd, -1.0, wall_a, 0.0));

  Trajectory& traj = spec.trajectory;
  traj.frames = frames;
  traj.radius = rng.uniform(0.3, 0.7);
  traj.height = rng.uniform(1.3, 1.6);
  traj.pitch = rng.uniform(0.3, 0.45);
  traj.start_angle = rng.uniform(0.0, 2.0 * kPi);
  traj.end_angle = traj.start_angle + rng.uniform(100.0, 140.0) * kPi / 180.0;

  // rug
  {
    const double rw = rng.uniform(0.5, 1.0), rd = rng.uniform(0.5, 1.0);
    const double cx = rng.uniform(-hw + rw + 0.2, hw - rw - 0.2), cz = rng.uniform(-hd + rd + 0.2, hd - rd - 0.2);
    prims.push_back(make_box(kGround, {cx - rw, 0.0, cz - rd}, {cx + rw, 0.01, cz + rd}, palette(rng, kGround), 0.0));
  }
  // optional pillar
  if (rng.uniform() < 0.5) {
    const double a = rng.uniform(traj.start_angle, traj.end_angle);
    const double r = rng.uniform(1.2, 1.6), s = rng.uniform(0.15, 0.25);
    const double px = std::clamp(r * std::cos(a), -hw + s, hw - s), pz = std::clamp(r * std::sin(a), -hd + s, hd - s);
    prims.push_back(make_box(kStructure, {px - s, 0.0, pz - s}, {px + s, h, pz + s}, wall_a, 0.0));
  }

  // Furniture against the walls the trajectory looks at.
  std::vector<std::size_t> furniture;
  const int nf = 3 + static_cast<int>(rng.index(3));
  for (int i = 0; i < nf; ++i) {
    const double a = rng.uniform(traj.start_angle - 0.3, traj.end_angle + 0.3);
    const Eigen::Vector3d dir(std::cos(a), 0.0, std::sin(a));
    // wall hit from the room centre
    const double tx = dir.x() > 0 ? hw / dir.x() : (dir.x() < 0 ? -hw / dir.x() : 1e9);
    const double tz = dir.z() > 0 ? hd / dir.z() : (dir.z() < 0 ? -hd / dir.z() : 1e9);
    const Eigen::Vector3d p = dir * std::min(tx, tz);
    const int along = tx < tz ? 2 : 0;  // wall normal along x -> furniture extends along z
    const double len = rng.uniform(0.6, 1.6), dep = rng.uniform(0.4, 0.9), ht = rng.uniform(0.4, 1.3);
    Eigen::Vector3d lo, hi;
    lo[1] = 0.0;
    hi[1] = ht;
    lo[along] = p[along] - len / 2;
    hi[along] = p[along] + len / 2;
    const int normal = 2 - along;
    if (p[normal] > 0) {
      hi[normal] = spec.room_max[normal] - 0.02;
      lo[normal] = hi[normal] - dep;
    } else {
      lo[normal] = spec.room_min[normal] + 0.02;
      hi[normal] = lo[normal] + dep;
    }
    for (int k : {0, 2}) {
      const double shift = std::max(0.0, spec.room_min[k] + 0.02 - lo[k]) - std::max(0.0, hi[k] - (spec.room_max[k] - 0.02));
      lo[k] += shift;
      hi[k] += shift;
    }
    furniture.push_back(prims.size());
    prims.push_back(make_box(kFurniture, lo, hi, palette(rng, kFurniture),
                             rng.uniform() < 0.5 ? rng.uniform(0.15, 0.3) : 0.0));
  }

  // Props on top of furniture, or on the floor next to it.
  const int np = 5 + static_cast<int>(rng.index(5));
  for (int i = 0; i < np; ++i) {
    const Primitive base = prims[furniture[rng.index(furniture.size())]];
    const double s = rng.uniform(0.08, 0.18), ph = rng.uniform(0.1, 0.35);
    Eigen::Vector3d lo, hi;
    if (rng.uniform() < 0.75) {
      const double x = rng.uniform(base.lo.x() + s, std::max(base.lo.x() + s, base.hi.x() - s));
      const double z = rng.uniform(base.lo.z() + s, std::max(base.lo.z() + s, base.hi.z() - s));
      lo = {x - s, base.hi.y(), z - s};
      hi = {x + s, std::min(base.hi.y() + ph, h), z + s};
    } else {
      const Eigen::Vector3d c = 0.5 * (base.lo + base.hi);
      const Eigen::Vector3d toward = -c.normalized();
      const double x = std::clamp(c.x() + toward.x() * rng.uniform(0.6, 1.0), -hw + s, hw - s);
      const double z = std::clamp(c.z() + toward.z() * rng.uniform(0.6, 1.0), -hd + s, hd - s);
      lo = {x - s, 0.0, z - s};
      hi = {x + s, ph, z + s};
    }
    prims.push_back(make_box(kProps, lo, hi, palette(rng, kProps), 0.0));
  }
  return spec;
}

int labeled_count(int frames, double labeled_fraction) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw ConfigError("labeled fraction must lie in (0, 1]");
  const int k = static_cast<int>(std::floor(labeled_fraction * frames + 1e-9));
  if (k < 1)
    throw ConfigError("labeled fraction " + std::to_string(labeled_fraction) + " leaves no annotated frame in a " +
                      std::to_string(frames) + "-frame sequence");
  return k;
}

std::vector<int> labeled_indices(int frames, double labeled_fraction) {
  const int k = labeled_count(frames, labeled_fraction);
  std::vector<int> out;
  for (int i = 0; i < k; ++i)
    out.push_back(static_cast<int>(std::floor((i + 0.5) * frames / static_cast<double>(k))));
  return out;
}

Dataset generate_dataset(const std::vector<SceneSpec>& specs, const GenerateOptions& options,
                         std::uint64_t seed) {
  if (specs.empty()) throw ConfigError("generate_dataset: no annotated sequence");
  Dataset ds;
  ds.intrinsics = specs.front().intrinsics;
  ds.class_names.assign(kSceneClassNames.begin(), kSceneClassNames.begin() + specs.front().num_classes);

  auto check = [&](const SceneSpec& s) {
    s.validate();
    if (!(s.intrinsics == ds.intrinsics)) throw ConfigError("generate_dataset: scenes use different intrinsics");
    if (s.num_classes != ds.num_classes()) throw ConfigError("generate_dataset: scenes use different class counts");
  };

  for (const auto& spec : specs) {
    check(spec);
    const auto idx = labeled_indices(spec.trajectory.frames, options.labeled_fraction);
    for (int i = 0; i < spec.trajectory.frames; ++i) {
      Frame f = render_view(spec, spec.pose(i), i, seed);
      if (std::find(idx.begin(), idx.end(), i) != idx.end()) {
        LabelMap ann = *f.truth;
        if (spec.label_noise > 0) {
          Rng rng(derive_seed(spec.seed, {seed, static_cast<std::uint64_t>(i), 2}));
          for (auto& l : ann.labels)
            if (l != kIgnore && rng.uniform() < spec.label_noise)
              l = static_cast<std::uint8_t>((l + 1 + rng.index(spec.num_classes - 1)) % spec.num_classes);
        }
        f.annotation = std::move(ann);
      }
      ds.train.push_back(std::move(f));
    }
    for (int k = 0; k < options.validation_views; ++k) {
      Frame f = render_view(spec, spec.trajectory.pose_at((k + 0.25) / options.validation_views, -0.12), 1000 + k, seed);
      f.annotation = f.truth;
      ds.validation.push_back(std::move(f));
    }
    for (int k = 0; k < options.test_views; ++k) {
      Frame f = render_view(spec, spec.trajectory.pose_at((k + 0.5) / options.test_views, 0.12), 2000 + k, seed);
      f.annotation = f.truth;
      ds.test.push_back(std::move(f));
    }
  }
  for (const auto& spec : options.unannotated) {
    check(spec);
    for (int i = 0; i < spec.trajectory.frames; ++i) ds.train.push_back(render_view(spec, spec.pose(i), i, seed));
  }
  for (const auto& spec : options.generalization) {
    check(spec);
    for (int k = 0; k < options.generalization_views; ++k) {
      Frame f = render_view(spec, spec.trajectory.pose_at((k + 0.5) / options.generalization_views), 3000 + k, seed);
      f.annotation = f.truth;
      ds.generalization.push_back(std::move(f));
    }
  }
  return ds;
}

BenchmarkScenes make_benchmark_scenes(std::uint64_t seed, int sequences, int unannotated,
                                      int generalization, int frames) {
  BenchmarkScenes out;
  auto name = [](const char* prefix, int i) {
    return std::string(prefix) + (i < 10 ? "0" : "") + std::to_string(i);
  };
  for (int i = 0; i < sequences; ++i)
    out.annotated.push_back(make_room_scene(name("seq", i), derive_seed(seed, {1, static_cast<std::uint64_t>(i)}), frames));
  for (int i = 0; i < unannotated; ++i)
    out.unannotated.push_back(make_room_scene(name("na", i), derive_seed(seed, {2, static_cast<std::uint64_t>(i)}), frames));
  for (int i = 0; i < generalization; ++i)
    out.generalization.push_back(make_room_scene(name("gen", i), derive_seed(seed, {3, static_cast<std::uint64_t>(i)}), frames));
  return out;
}

}  // namespace geoseg
