#include "geoseg/config.hpp"

#include <charconv>
#include <set>

#include "json.hpp"

#include "geoseg/error.hpp"
#include "geoseg/rng.hpp"

namespace geoseg {
namespace {

// Shortest decimal that reads back as the same float, so 1e-4f logs as 0.0001.
double shortest(float v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::stod(std::string(buf, r.ptr));
}

using json = nlohmann::json;

json parse(const std::string& text, const std::string& where) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw FormatError(where, "top level must be an object");
    return j;
  } catch (const json::parse_error& e) {
    throw FormatError(where, std::string("invalid JSON: ") + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw FormatError(where, "expected an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw FormatError(where, "unknown key '" + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + "." + key, e.what());
  }
}

Eigen::Vector3d vec3(const json& j, const std::string& where) {
  std::vector<double> v;
  try {
    v = j.get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(where, e.what());
  }
  if (v.size() != 3) throw FormatError(where, "expected 3 numbers");
  return {v[0], v[1], v[2]};
}

json to_array(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Primitive parse_primitive(const json& j, const std::string& where) {
  check_keys(j, {"kind", "label", "lo", "hi", "axis", "offset", "facing", "color", "checker_period", "checker_contrast"},
             where);
  Primitive p;
  std::string kind = "box";
  read(j, "kind", kind, where);
  if (kind == "box")
    p.kind = PrimitiveKind::box;
  else if (kind == "plane")
    p.kind = PrimitiveKind::plane;
  else
    throw FormatError(where + ".kind", "expected \"box\" or \"plane\", got \"" + kind + "\"");
  read(j, "label", p.label, where);
  if (j.contains("lo")) p.lo = vec3(j["lo"], where + ".lo");
  if (j.contains("hi")) p.hi = vec3(j["hi"], where + ".hi");
  read(j, "axis", p.axis, where);
  read(j, "offset", p.offset, where);
  read(j, "facing", p.facing, where);
  read(j, "color", p.color, where);
  read(j, "checker_period", p.checker_period, where);
  read(j, "checker_contrast", p.checker_contrast, where);
  return p;
}

json primitive_json(const Primitive& p) {
  json j = {{"kind", p.kind == PrimitiveKind::box ? "box" : "plane"}, {"label", p.label}, {"color", p.color},
            {"checker_period", p.checker_period}, {"checker_contrast", p.checker_contrast}};
  if (p.kind == PrimitiveKind::box) {
    j["lo"] = to_array(p.lo);
    j["hi"] = to_array(p.hi);
  } else {
    j["axis"] = p.axis;
    j["offset"] = p.offset;
    j["facing"] = p.facing;
  }
  return j;
}

// Scene fields applied on top of `base` (procedural room or defaults).
void apply_scene(const json& j, SceneSpec& s, const std::string& where) {
  read(j, "name", s.name, where);
  read(j, "seed", s.seed, where);
  if (j.contains("room_min")) s.room_min = vec3(j["room_min"], where + ".room_min");
  if (j.contains("room_max")) s.room_max = vec3(j["room_max"], where + ".room_max");
  if (j.contains("primitives")) {
    if (!j["primitives"].is_array()) throw FormatError(where + ".primitives", "expected an array");
    s.primitives.clear();
    std::size_t i = 0;
    for (const auto& p : j["primitives"])
      s.primitives.push_back(parse_primitive(p, where + ".primitives[" + std::to_string(i++) + "]"));
  }
  read(j, "noise_amplitude", s.noise_amplitude, where);
  read(j, "depth_noise", s.depth_noise, where);
  read(j, "label_noise", s.label_noise, where);
  read(j, "num_classes", s.num_classes, where);
  if (j.contains("trajectory")) {
    const json& t = j["trajectory"];
    const std::string tw = where + ".trajectory";
    check_keys(t, {"center", "radius", "height", "start_angle", "end_angle", "pitch", "frames"}, tw);
    if (t.contains("center")) s.trajectory.center = vec3(t["center"], tw + ".center");
    read(t, "radius", s.trajectory.radius, tw);
    read(t, "height", s.trajectory.height, tw);
    read(t, "start_angle", s.trajectory.start_angle, tw);
    read(t, "end_angle", s.trajectory.end_angle, tw);
    read(t, "pitch", s.trajectory.pitch, tw);
    read(t, "frames", s.trajectory.frames, tw);
  }
  if (j.contains("intrinsics")) {
    const json& k = j["intrinsics"];
    const std::string kw = where + ".intrinsics";
    check_keys(k, {"fx", "fy", "cx", "cy", "width", "height"}, kw);
    read(k, "fx", s.intrinsics.fx, kw);
    read(k, "fy", s.intrinsics.fy, kw);
    read(k, "cx", s.intrinsics.cx, kw);
    read(k, "cy", s.intrinsics.cy, kw);
    read(k, "width", s.intrinsics.width, kw);
    read(k, "height", s.intrinsics.height, kw);
  }
}

json scene_json(const SceneSpec& s, const char* role) {
  json prims = json::array();
  for (const auto& p : s.primitives) prims.push_back(primitive_json(p));
  const Trajectory& t = s.trajectory;
  const Intrinsics& k = s.intrinsics;
  return {{"role", role},
          {"name", s.name},
          {"seed", s.seed},
          {"room_min", to_array(s.room_min)},
          {"room_max", to_array(s.room_max)},
          {"primitives", prims},
          {"noise_amplitude", s.noise_amplitude},
          {"depth_noise", s.depth_noise},
          {"label_noise", s.label_noise},
          {"num_classes", s.num_classes},
          {"trajectory",
           {{"center", to_array(t.center)},
            {"radius", t.radius},
            {"height", t.height},
            {"start_angle", t.start_angle},
            {"end_angle", t.end_angle},
            {"pitch", t.pitch},
            {"frames", t.frames}}},
          {"intrinsics",
           {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}}}};
}

}  // namespace

NetConfig RunConfig::net_config(int num_classes, int height, int width) const {
  NetConfig c;
  c.levels = levels;
  c.base_features = base_features;
  c.num_classes = num_classes;
  c.height = height;
  c.width = width;
  c.validate();
  return c;
}

RunConfig parse_run_config(const std::string& text, const std::string& where) {
  const json j = parse(text, where);
  check_keys(j,
             {"lambda", "lr", "supervised_batch", "consistency_batch", "neighbor_count", "pretrain_steps",
              "joint_steps", "validate_every", "seed", "beta1", "beta2", "epsilon", "occl_threshold",
              "class_weights", "require_pretrain", "levels", "base_features", "use_propagation", "init_seed"},
             where);
  RunConfig c;
  TrainConfig& t = c.train;
  read(j, "lambda", t.lambda, where);
  read(j, "lr", t.lr, where);
  read(j, "supervised_batch", t.supervised_batch, where);
  read(j, "consistency_batch", t.consistency_batch, where);
  read(j, "neighbor_count", t.neighbor_count, where);
  read(j, "pretrain_steps", t.pretrain_steps, where);
  read(j, "joint_steps", t.joint_steps, where);
  read(j, "validate_every", t.validate_every, where);
  read(j, "seed", t.seed, where);
  read(j, "beta1", t.beta1, where);
  read(j, "beta2", t.beta2, where);
  read(j, "epsilon", t.epsilon, where);
  read(j, "occl_threshold", t.occl_threshold, where);
  read(j, "class_weights", t.class_weights, where);
  read(j, "require_pretrain", t.require_pretrain, where);
  read(j, "levels", c.levels, where);
  read(j, "base_features", c.base_features, where);
  read(j, "use_propagation", c.use_propagation, where);
  if (j.contains("init_seed")) {
    std::uint64_t s = 0;
    read(j, "init_seed", s, where);
    c.init_seed = s;
  }
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw FormatError(where, e.what());
  }
  return c;
}

std::string to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  json weights = json::array();
  for (float w : t.class_weights) weights.push_back(shortest(w));
  json j = {{"lambda", shortest(t.lambda)},
            {"lr", shortest(t.lr)},
            {"supervised_batch", t.supervised_batch},
            {"consistency_batch", t.consistency_batch},
            {"neighbor_count", t.neighbor_count},
            {"pretrain_steps", t.pretrain_steps},
            {"joint_steps", t.joint_steps},
            {"validate_every", t.validate_every},
            {"seed", t.seed},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"epsilon", t.epsilon},
            {"occl_threshold", t.occl_threshold},
            {"class_weights", weights},
            {"require_pretrain", t.require_pretrain},
            {"levels", c.levels},
            {"base_features", c.base_features},
            {"use_propagation", c.use_propagation},
            {"init_seed", c.weight_seed()}};
  return j.dump(2);
}

SynthConfig parse_synth_config(const std::string& text, const std::string& where, std::uint64_t seed) {
  const json j = parse(text, where);
  check_keys(j,
             {"benchmark", "scenes", "labeled_fraction", "validation_views", "test_views", "generalization_views",
              "noise_amplitude", "depth_noise", "label_noise"},
             where);
  SynthConfig c;
  GenerateOptions& o = c.options;
  read(j, "labeled_fraction", o.labeled_fraction, where);
  read(j, "validation_views", o.validation_views, where);
  read(j, "test_views", o.test_views, where);
  read(j, "generalization_views", o.generalization_views, where);
  if (!(o.labeled_fraction > 0 && o.labeled_fraction <= 1))
    throw FormatError(where + ".labeled_fraction", "must lie in (0, 1]");
  if (o.validation_views < 0 || o.test_views < 0 || o.generalization_views < 0)
    throw FormatError(where, "view counts must be >= 0");

  // Scene-level noise defaults shared by every scene unless overridden per scene.
  json shared = json::object();
  for (const char* key : {"noise_amplitude", "depth_noise", "label_noise"})
    if (j.contains(key)) shared[key] = j[key];

  if (j.contains("benchmark") || !j.contains("scenes")) {
    const json b = j.value("benchmark", json::object());
    const std::string bw = where + ".benchmark";
    check_keys(b, {"sequences", "unannotated", "generalization", "frames"}, bw);
    int sequences = 4, unannotated = 2, generalization = 2, frames = 30;
    read(b, "sequences", sequences, bw);
    read(b, "unannotated", unannotated, bw);
    read(b, "generalization", generalization, bw);
    read(b, "frames", frames, bw);
    if (sequences < 1 || unannotated < 0 || generalization < 0 || frames < 2)
      throw FormatError(bw, "need sequences >= 1, unannotated and generalization >= 0, frames >= 2");
    BenchmarkScenes scenes = make_benchmark_scenes(seed, sequences, unannotated, generalization, frames);
    c.annotated = std::move(scenes.annotated);
    c.unannotated = std::move(scenes.unannotated);
    c.generalization = std::move(scenes.generalization);
    for (auto* list : {&c.annotated, &c.unannotated, &c.generalization})
      for (auto& spec : *list) apply_scene(shared, spec, where);
  }
  if (j.contains("scenes")) {
    if (!j["scenes"].is_array()) throw FormatError(where + ".scenes", "expected an array");
    std::size_t i = 0;
    for (const json& s : j["scenes"]) {
      const std::string sw = where + ".scenes[" + std::to_string(i++) + "]";
      check_keys(s,
                 {"role", "procedural", "frames", "name", "seed", "room_min", "room_max", "primitives",
                  "noise_amplitude", "depth_noise", "label_noise", "num_classes", "trajectory", "intrinsics"},
                 sw);
      std::string role = "annotated";
      bool procedural = false;
      read(s, "role", role, sw);
      read(s, "procedural", procedural, sw);
      SceneSpec spec;
      if (procedural) {
        std::string name = "room" + std::to_string(i - 1);
        std::uint64_t scene_seed = derive_seed(seed, {4, i - 1});
        int frames = 30;
        read(s, "name", name, sw);
        read(s, "seed", scene_seed, sw);
        read(s, "frames", frames, sw);
        spec = make_room_scene(name, scene_seed, frames);
      } else if (s.contains("frames")) {
        throw FormatError(sw, "'frames' applies to procedural scenes; use trajectory.frames");
      }
      apply_scene(shared, spec, sw);
      apply_scene(s, spec, sw);
      try {
        spec.validate();
      } catch (const Error& e) {
        throw FormatError(sw, e.what());
      }
      if (role == "annotated")
        c.annotated.push_back(std::move(spec));
      else if (role == "unannotated")
        c.unannotated.push_back(std::move(spec));
      else if (role == "generalization")
        c.generalization.push_back(std::move(spec));
      else
        throw FormatError(sw + ".role", "expected annotated, unannotated or generalization, got \"" + role + "\"");
    }
  }
  if (c.annotated.empty()) throw FormatError(where, "at least one annotated scene is required");
  c.options.unannotated = c.unannotated;
  c.options.generalization = c.generalization;
  return c;
}

std::string to_json(const SynthConfig& c) {
  json scenes = json::array();
  for (const auto& s : c.annotated) scenes.push_back(scene_json(s, "annotated"));
  for (const auto& s : c.unannotated) scenes.push_back(scene_json(s, "unannotated"));
  for (const auto& s : c.generalization) scenes.push_back(scene_json(s, "generalization"));
  const GenerateOptions& o = c.options;
  json j = {{"labeled_fraction", o.labeled_fraction},
            {"validation_views", o.validation_views},
            {"test_views", o.test_views},
            {"generalization_views", o.generalization_views},
            {"scenes", scenes}};
  return j.dump(2);
}

}  // namespace geoseg
