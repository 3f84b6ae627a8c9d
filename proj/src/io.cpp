#include "geoseg/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

#include "geoseg/error.hpp"

namespace geoseg::io {
namespace {

using json = nlohmann::json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string(), "cannot open file for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path.string(), "write failed");
}

// Little-endian byte writer / reader independent of host order.
struct Writer {
  std::string buf;
  template <typename T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    const U u = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  void bytes(const std::string& s) { buf += s; }
};

struct Reader {
  const std::string& buf;
  std::string where;
  std::size_t pos = 0;

  void need(std::size_t n, const char* field) {
    if (buf.size() - pos < n)
      throw FormatError(where, std::string("truncated while reading ") + field + " at byte " + std::to_string(pos));
  }
  template <typename T>
  T get(const char* field) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    need(sizeof(T), field);
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += sizeof(T);
    return std::bit_cast<T>(u);
  }
  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

// Netpbm header: magic, width, height, maxval, separated by whitespace and comments.
struct Pnm {
  int width = 0, height = 0;
  std::size_t offset = 0;
};

Pnm parse_pnm(const std::string& data, const std::string& magic, int channels, const fs::path& path) {
  const std::string where = path.string();
  if (data.size() < 2 || data.compare(0, 2, magic) != 0) throw FormatError(where, "expected " + magic + " header");
  std::size_t pos = 2;
  auto token = [&](const char* field) -> long {
    for (;;) {
      while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
      if (pos < data.size() && data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) throw FormatError(where, std::string("malformed header field ") + field);
    return std::stol(data.substr(start, pos - start));
  };
  Pnm p;
  const long w = token("width"), h = token("height"), maxval = token("maxval");
  if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16) throw FormatError(where, "invalid extent");
  if (maxval != 255) throw FormatError(where, "maxval must be 255, got " + std::to_string(maxval));
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
    throw FormatError(where, "missing separator after header");
  ++pos;
  p.width = static_cast<int>(w);
  p.height = static_cast<int>(h);
  p.offset = pos;
  const std::size_t expected = static_cast<std::size_t>(w) * h * channels;
  if (data.size() - pos != expected)
    throw FormatError(where, "expected " + std::to_string(expected) + " pixel bytes, found " +
                                 std::to_string(data.size() - pos));
  return p;
}

std::string frame_stem(const Frame& f) {
  std::ostringstream ss;
  ss << std::setw(4) << std::setfill('0') << f.index;
  return ss.str();
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + "." + key, "missing field");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + "." + key, e.what());
  }
}

// Reads a file referenced by a manifest entry; errors name the entry as well as the file.
template <class F>
auto referenced(const std::string& where, F&& read) {
  try {
    return read();
  } catch (const FormatError& e) {
    throw FormatError(where, e.what());
  }
}

void check_extent(int w, int h, const Intrinsics& K, const std::string& where) {
  if (w != K.width || h != K.height)
    throw FormatError(where, "extent " + std::to_string(w) + "x" + std::to_string(h) + " does not match intrinsics " +
                                 std::to_string(K.width) + "x" + std::to_string(K.height));
}

}  // namespace

void write_ppm(const fs::path& path, const ColorImage& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  write_file(path, out);
}

ColorImage read_ppm(const fs::path& path) {
  const std::string data = read_file(path);
  const Pnm p = parse_pnm(data, "P6", 3, path);
  ColorImage img(p.width, p.height);
  std::memcpy(img.rgb.data(), data.data() + p.offset, img.rgb.size());
  return img;
}

void write_pgm(const fs::path& path, const LabelMap& labels) {
  std::string out = "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(labels.labels.data()), labels.labels.size());
  write_file(path, out);
}

LabelMap read_pgm(const fs::path& path) {
  const std::string data = read_file(path);
  const Pnm p = parse_pnm(data, "P5", 1, path);
  LabelMap map(p.width, p.height);
  std::memcpy(map.labels.data(), data.data() + p.offset, map.labels.size());
  return map;
}

void write_depth(const fs::path& path, const DepthMap& depth) {
  Writer w;
  w.bytes("GSD1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(depth.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(depth.height));
  for (float d : depth.values) {
    if (!std::isfinite(d) || d < 0) throw FormatError(path.string(), "depth must be finite and >= 0");
    const double mm = std::round(static_cast<double>(d) * 1000.0);
    if (mm > 65535.0) throw FormatError(path.string(), "depth " + std::to_string(d) + " m exceeds the u16 mm range");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(mm));
  }
  write_file(path, w.buf);
}

DepthMap read_depth(const fs::path& path) {
  const std::string data = read_file(path);
  Reader r{data, path.string()};
  if (r.bytes(4, "magic") != "GSD1") throw FormatError(path.string(), "bad magic, expected GSD1");
  const auto w = r.get<std::uint32_t>("width");
  const auto h = r.get<std::uint32_t>("height");
  if (w == 0 || h == 0 || w > 1u << 16 || h > 1u << 16) throw FormatError(path.string(), "invalid extent");
  DepthMap depth(static_cast<int>(w), static_cast<int>(h));
  for (auto& d : depth.values) d = static_cast<float>(r.get<std::uint16_t>("depth values")) / 1000.0f;
  if (r.pos != data.size()) throw FormatError(path.string(), "trailing bytes after depth values");
  return depth;
}

void write_pose(const fs::path& path, const RigidTransform& pose) {
  std::ostringstream ss;
  ss << std::setprecision(17);
  const Eigen::Matrix4d m = pose.matrix();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) ss << (c ? " " : "") << m(r, c);
    ss << "\n";
  }
  write_file(path, ss.str());
}

RigidTransform read_pose(const fs::path& path) {
  std::istringstream ss(read_file(path));
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (!(ss >> m(r, c)))
        throw FormatError(path.string(), "expected 16 numbers, failed at row " + std::to_string(r) + " column " +
                                             std::to_string(c));
  std::string rest;
  if (ss >> rest) throw FormatError(path.string(), "unexpected trailing token '" + rest + "'");
  const Eigen::RowVector4d last = m.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9)
    throw FormatError(path.string(), "last row must be 0 0 0 1");
  try {
    return RigidTransform::from_matrix(m);
  } catch (const GeometryError& e) {
    throw FormatError(path.string(), e.what());
  }
}

void write_dataset(const Dataset& ds, const fs::path& root) {
  json manifest;
  manifest["format"] = "geoseg-dataset";
  manifest["version"] = kManifestVersion;
  manifest["intrinsics"] = {{"fx", ds.intrinsics.fx}, {"fy", ds.intrinsics.fy}, {"cx", ds.intrinsics.cx},
                            {"cy", ds.intrinsics.cy}, {"width", ds.intrinsics.width},
                            {"height", ds.intrinsics.height}};
  manifest["classes"] = ds.class_names;
  json frames = json::array();
  for (Split s : {Split::train, Split::validation, Split::test, Split::generalization}) {
    for (const Frame& f : ds.split(s)) {
      const fs::path dir = fs::path(f.sequence);
      const std::string stem = frame_stem(f);
      json e;
      e["sequence"] = f.sequence;
      e["index"] = f.index;
      e["split"] = to_string(s);
      e["color"] = (dir / ("color_" + stem + ".ppm")).generic_string();
      e["depth"] = (dir / ("depth_" + stem + ".gsd")).generic_string();
      e["pose"] = (dir / ("pose_" + stem + ".txt")).generic_string();
      write_ppm(root / e["color"].get<std::string>(), f.color);
      write_depth(root / e["depth"].get<std::string>(), f.depth);
      write_pose(root / e["pose"].get<std::string>(), f.pose);
      if (f.annotation) {
        e["annotation"] = (dir / ("label_" + stem + ".pgm")).generic_string();
        write_pgm(root / e["annotation"].get<std::string>(), *f.annotation);
      }
      if (f.truth) {
        e["truth"] = (dir / ("truth_" + stem + ".pgm")).generic_string();
        write_pgm(root / e["truth"].get<std::string>(), *f.truth);
      }
      frames.push_back(std::move(e));
    }
  }
  manifest["frames"] = std::move(frames);
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& root) {
  const fs::path mpath = root / "manifest.json";
  const std::string where = mpath.string();
  json manifest;
  try {
    manifest = json::parse(read_file(mpath));
  } catch (const json::parse_error& e) {
    throw FormatError(where, std::string("invalid JSON: ") + e.what());
  }
  if (field<std::string>(manifest, "format", where) != "geoseg-dataset")
    throw FormatError(where, "field 'format' must be \"geoseg-dataset\"");
  const int version = field<int>(manifest, "version", where);
  if (version != kManifestVersion)
    throw FormatError(where, "unsupported manifest version " + std::to_string(version));

  Dataset ds;
  const json& k = manifest.at("intrinsics");
  const std::string kwhere = where + ":intrinsics";
  ds.intrinsics = {field<double>(k, "fx", kwhere), field<double>(k, "fy", kwhere), field<double>(k, "cx", kwhere),
                   field<double>(k, "cy", kwhere), field<int>(k, "width", kwhere), field<int>(k, "height", kwhere)};
  try {
    ds.intrinsics.validate();
  } catch (const GeometryError& e) {
    throw FormatError(kwhere, e.what());
  }
  ds.class_names = field<std::vector<std::string>>(manifest, "classes", where);
  if (ds.class_names.empty() || ds.class_names.size() >= kIgnore)
    throw FormatError(where + ":classes", "need between 1 and 254 classes");
  if (!manifest.contains("frames") || !manifest["frames"].is_array())
    throw FormatError(where, "missing array field 'frames'");

  std::set<std::string> seen;
  std::size_t n = 0;
  for (const json& e : manifest["frames"]) {
    const std::string fw = where + ":frames[" + std::to_string(n++) + "]";
    Frame f;
    f.sequence = field<std::string>(e, "sequence", fw);
    f.index = field<int>(e, "index", fw);
    if (f.sequence.empty()) throw FormatError(fw, "field 'sequence' is empty");
    if (!seen.insert(f.id()).second) throw FormatError(fw, "duplicate frame " + f.id() + " (splits must be disjoint)");
    Split split;
    try {
      split = split_from_string(field<std::string>(e, "split", fw));
    } catch (const ConfigError& err) {
      throw FormatError(fw + ".split", err.what());
    }
    const fs::path color = root / field<std::string>(e, "color", fw), depth = root / field<std::string>(e, "depth", fw),
                   pose = root / field<std::string>(e, "pose", fw);
    f.color = referenced(fw + ".color", [&] { return read_ppm(color); });
    f.depth = referenced(fw + ".depth", [&] { return read_depth(depth); });
    f.pose = referenced(fw + ".pose", [&] { return read_pose(pose); });
    check_extent(f.color.width, f.color.height, ds.intrinsics, fw + ".color");
    check_extent(f.depth.width, f.depth.height, ds.intrinsics, fw + ".depth");
    auto labels = [&](const char* key) -> std::optional<LabelMap> {
      if (!e.contains(key)) return std::nullopt;
      const fs::path file = root / field<std::string>(e, key, fw);
      LabelMap m = referenced(fw + "." + key, [&] { return read_pgm(file); });
      check_extent(m.width, m.height, ds.intrinsics, fw + "." + key);
      for (auto l : m.labels)
        if (l != kIgnore && l >= ds.class_names.size())
          throw FormatError(fw + "." + key, "label " + std::to_string(l) + " outside [0, " +
                                                std::to_string(ds.class_names.size()) + ") and not 255");
      return m;
    };
    f.annotation = labels("annotation");
    f.truth = labels("truth");
    if (split != Split::train && !f.annotation)
      throw FormatError(fw, std::string(to_string(split)) + " frames need an annotation");
    ds.split(split).push_back(std::move(f));
  }
  return ds;
}

void write_propagated(const std::map<std::string, LabelMap>& labels, const fs::path& root) {
  json index = json::object();
  std::size_t n = 0;
  for (const auto& [id, map] : labels) {
    const std::string file = "propagated/" + std::to_string(n++) + ".pgm";
    write_pgm(root / file, map);
    index[id] = file;
  }
  write_file(root / "propagated" / "index.json",
             json{{"format", "geoseg-propagated"}, {"version", 1}, {"frames", index}}.dump(2) + "\n");
}

bool has_propagated(const fs::path& root) { return fs::exists(root / "propagated" / "index.json"); }

std::map<std::string, LabelMap> read_propagated(const fs::path& root) {
  const fs::path ipath = root / "propagated" / "index.json";
  const std::string where = ipath.string();
  json index;
  try {
    index = json::parse(read_file(ipath));
  } catch (const json::parse_error& e) {
    throw FormatError(where, std::string("invalid JSON: ") + e.what());
  }
  if (field<int>(index, "version", where) != 1) throw FormatError(where, "unsupported version");
  std::map<std::string, LabelMap> out;
  const json frames = field<json>(index, "frames", where);
  if (!frames.is_object()) throw FormatError(where + ":frames", "expected an object");
  for (const auto& [id, file] : frames.items()) {
    if (!file.is_string()) throw FormatError(where + ":frames." + id, "expected a file name");
    out[id] = read_pgm(root / file.get<std::string>());
  }
  return out;
}

void write_checkpoint(const TrainState& state, const fs::path& path) {
  const auto& params = state.net.parameters();
  const auto& best = state.best.parameters();
  if (state.m.size() != params.size() || state.v.size() != params.size() || best.size() != params.size())
    throw FormatError(path.string(), "train state is inconsistent (moment or snapshot count mismatch)");
  Writer w;
  w.bytes(std::string("GSCKPT\0\0", 8));
  w.put<std::uint32_t>(kCheckpointVersion);
  const NetConfig& c = state.net.config();
  for (int v : {c.levels, c.base_features, c.num_classes, c.height, c.width}) w.put<std::int32_t>(v);
  w.put<std::uint64_t>(state.step);
  w.put<std::uint64_t>(state.adam_steps);
  w.put<std::uint8_t>(state.pretrained ? 1 : 0);
  w.put<double>(state.best_accuracy);
  w.put<std::uint64_t>(state.best_step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) w.put<std::int32_t>(d);
  }
  auto put_all = [&](auto&& get) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (float x : get(k)) w.put<float>(x);
  };
  put_all([&](std::size_t k) { return params[k].value.data(); });
  put_all([&](std::size_t k) { return std::span<const float>(state.m[k]); });
  put_all([&](std::size_t k) { return std::span<const float>(state.v[k]); });
  put_all([&](std::size_t k) { return best[k].value.data(); });
  w.put<std::uint64_t>(fnv1a(w.buf));
  write_file(path, w.buf);
}

TrainState read_checkpoint(const fs::path& path) {
  const std::string data = read_file(path);
  const std::string where = path.string();
  Reader r{data, where};
  if (r.bytes(8, "magic") != std::string("GSCKPT\0\0", 8)) throw FormatError(where, "not a geoseg checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError(where, "unsupported checkpoint version " + std::to_string(version));
  if (data.size() < 8 + 8) throw FormatError(where, "truncated");
  const std::size_t body = data.size() - 8;
  {
    Reader tail{data, where, body};
    if (tail.get<std::uint64_t>("checksum") != fnv1a(std::string_view(data).substr(0, body)))
      throw FormatError(where, "checksum mismatch (file truncated or corrupted)");
  }
  NetConfig cfg;
  cfg.levels = r.get<std::int32_t>("levels");
  cfg.base_features = r.get<std::int32_t>("base_features");
  cfg.num_classes = r.get<std::int32_t>("num_classes");
  cfg.height = r.get<std::int32_t>("height");
  cfg.width = r.get<std::int32_t>("width");
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(where + ":net_config", e.what());
  }
  TrainState s = TrainState::fresh(cfg, 0);
  s.step = r.get<std::uint64_t>("step");
  s.adam_steps = r.get<std::uint64_t>("adam_steps");
  s.pretrained = r.get<std::uint8_t>("pretrained") != 0;
  s.best_accuracy = r.get<double>("best_accuracy");
  s.best_step = r.get<std::uint64_t>("best_step");
  auto& params = s.net.parameters();
  const auto count = r.get<std::uint32_t>("parameter count");
  if (count != params.size())
    throw FormatError(where, "parameter count " + std::to_string(count) + " does not match the architecture (" +
                                 std::to_string(params.size()) + ")");
  for (const auto& p : params) {
    const auto len = r.get<std::uint32_t>("parameter name length");
    const std::string name = r.bytes(len, "parameter name");
    if (name != p.name) throw FormatError(where, "expected parameter " + p.name + ", found " + name);
    const auto rank = r.get<std::uint32_t>("parameter rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank && i < 8; ++i) shape.push_back(r.get<std::int32_t>("parameter dims"));
    if (shape != p.value.shape())
      throw FormatError(where, "shape of " + name + " is " + to_string(shape) + ", expected " + to_string(p.value.shape()));
  }
  auto get_all = [&](auto&& target, const char* what) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      std::span<float> dst = target(k);
      for (auto& x : dst) x = r.get<float>(what);
    }
  };
  get_all([&](std::size_t k) { return params[k].value.mutable_data(); }, "weights");
  get_all([&](std::size_t k) { return std::span<float>(s.m[k]); }, "Adam first moments");
  get_all([&](std::size_t k) { return std::span<float>(s.v[k]); }, "Adam second moments");
  get_all([&](std::size_t k) { return s.best.parameters()[k].value.mutable_data(); }, "best snapshot");
  if (r.pos != body) throw FormatError(where, "unexpected bytes before checksum");
  return s;
}

}  // namespace geoseg::io
