#include "asap/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "asap/errors.hpp"

namespace asap::data {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[] = "PCSQ1";
constexpr std::size_t kMagicLen = 5;
constexpr std::uint16_t kNoLabel = 0xFFFF;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Kept out of line: GCC 11 at -O3 SLP-vectorizes the inlined float round trip
// away and the generated values stop matching what the file format stores.
[[gnu::noinline]] double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::kBox: return "box";
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kPlane: return "plane";
  }
  return "?";
}

ShapeKind parse_shape(const std::string& s) {
  if (s == "box") return ShapeKind::kBox;
  if (s == "sphere") return ShapeKind::kSphere;
  if (s == "plane") return ShapeKind::kPlane;
  throw ConfigError("unknown shape '" + s + "' (expected box|sphere|plane)");
}

struct Object {
  ShapeKind shape;
  double size;
  Vec3 position;  // footprint center on the ground
  Vec3 velocity;
  int label;

  double area() const {
    switch (shape) {
      case ShapeKind::kBox: return 5.0 * size * size;  // top + four sides
      case ShapeKind::kSphere: return std::numbers::pi * size * size;
      case ShapeKind::kPlane: return 0.0;
    }
    return 0.0;
  }
};

Vec3 sample_surface(const Object& o, double extent, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (o.shape) {
    case ShapeKind::kPlane:
      return {u(rng) * extent, u(rng) * extent, 0.0};
    case ShapeKind::kBox: {
      const double s = o.size, h = s / 2.0;
      const int face = static_cast<int>(u(rng) * 5.0);
      const double a = (u(rng) - 0.5) * s, b = u(rng) * s;
      Vec3 local;
      switch (face) {
        case 0: local = {a, (b / s - 0.5) * s, s}; break;  // top
        case 1: local = {a, -h, b}; break;
        case 2: local = {a, h, b}; break;
        case 3: local = {-h, a, b}; break;
        default: local = {h, a, b}; break;
      }
      return o.position + local;
    }
    case ShapeKind::kSphere: {
      std::normal_distribution<double> n(0.0, 1.0);
      Vec3 d{n(rng), n(rng), n(rng)};
      const double len = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
      const double r = o.size / 2.0;
      d = d * (r / std::max(len, 1e-12));
      return o.position + Vec3{d.x, d.y, d.z + r};
    }
  }
  return {};
}

void advance(Object& o, double extent) {
  o.position = o.position + o.velocity;
  const double margin = o.size / 2.0;
  auto bounce = [&](double& p, double& v) {
    if (p < margin) {
      p = 2.0 * margin - p;
      v = -v;
    } else if (p > extent - margin) {
      p = 2.0 * (extent - margin) - p;
      v = -v;
    }
  };
  bounce(o.position.x, o.velocity.x);
  bounce(o.position.y, o.velocity.y);
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : b_(b) {}
  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > b_.size()) throw ParseError(std::string("truncated ") + what, pos_);
    char buf[sizeof(T)];
    std::memcpy(buf, b_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

SequenceRecord decode_binary(const std::string& bytes) {
  ByteReader in(bytes);
  in.skip(kMagicLen);
  SequenceRecord rec;
  const auto num_frames = in.get<std::uint32_t>("header");
  rec.feature_width = in.get<std::uint32_t>("header");
  rec.num_classes = in.get<std::uint32_t>("header");
  const std::size_t C = rec.feature_width;
  const std::size_t record_bytes = (3 + C) * sizeof(float) + sizeof(std::uint16_t);
  for (std::uint32_t f = 0; f < num_frames; ++f) {
    PointFrame frame;
    const std::size_t frame_start = in.pos();
    frame.frame_index = in.get<std::uint32_t>("frame header");
    const auto n = in.get<std::uint32_t>("frame header");
    if (n == 0) throw ParseError("frame with zero points", frame_start);
    if (static_cast<std::size_t>(n) * record_bytes > in.remaining()) {
      throw ParseError("truncated frame " + std::to_string(f) + " (" + std::to_string(n) +
                           " points declared)",
                       in.pos());
    }
    frame.feature_width = C;
    frame.coords.resize(n);
    frame.features.resize(static_cast<std::size_t>(n) * C);
    std::vector<int> labels(n);
    bool any_label = false, any_missing = false;
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::size_t rec_start = in.pos();
      frame.coords[i].x = in.get<float>("point");
      frame.coords[i].y = in.get<float>("point");
      frame.coords[i].z = in.get<float>("point");
      for (std::size_t k = 0; k < C; ++k) frame.features[i * C + k] = in.get<float>("point");
      const auto label = in.get<std::uint16_t>("label");
      if (label == kNoLabel) {
        any_missing = true;
      } else {
        if (label >= rec.num_classes) {
          throw ParseError("label " + std::to_string(label) + " >= num_classes", rec_start);
        }
        any_label = true;
      }
      labels[i] = label;
    }
    if (any_label && any_missing) throw ParseError("frame mixes labeled and unlabeled points", frame_start);
    if (any_label) frame.labels = std::move(labels);
    rec.frames.push_back(std::move(frame));
  }
  if (in.remaining() != 0) throw ParseError("trailing bytes after last frame", in.pos());
  return rec;
}

SequenceRecord decode_text(const std::string& text) {
  SequenceRecord rec;
  std::size_t width = 0;
  bool have_width = false;
  int max_label = -1;
  PointFrame cur;
  auto flush = [&] {
    if (cur.coords.empty()) return;
    cur.frame_index = rec.frames.size();
    cur.feature_width = width;
    rec.frames.push_back(std::move(cur));
    cur = PointFrame{};
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    const std::size_t line_start = pos;
    pos = eol + 1;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line.compare(first, 5, "frame") == 0) {
      flush();
      continue;
    }
    if (line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("bad number '" + tok + "'", line_start);
      }
    }
    if (vals.size() < 4) throw ParseError("need at least 'x y z label'", line_start);
    if (!have_width) {
      width = vals.size() - 4;
      have_width = true;
    } else if (vals.size() != width + 4) {
      throw ParseError("inconsistent column count", line_start);
    }
    const double label = vals.back();
    if (label < 0 || label != std::floor(label) || label >= kNoLabel) {
      throw ParseError("label must be a non-negative integer", line_start);
    }
    cur.coords.push_back({vals[0], vals[1], vals[2]});
    for (std::size_t k = 0; k < width; ++k) cur.features.push_back(vals[3 + k]);
    cur.labels.push_back(static_cast<int>(label));
    max_label = std::max(max_label, static_cast<int>(label));
  }
  flush();
  if (rec.frames.empty()) throw ParseError("no points in text sequence", 0);
  rec.feature_width = width;
  rec.num_classes = static_cast<std::size_t>(max_label + 1);
  return rec;
}

}  // namespace

// ---- SceneConfig ------------------------------------------------------------

std::size_t SceneConfig::num_classes() const {
  int mx = -1;
  for (const auto& c : classes) mx = std::max(mx, c.class_id);
  return static_cast<std::size_t>(mx + 1);
}

void SceneConfig::validate() const {
  if (points_per_frame == 0) throw ConfigError("points_per_frame must be >= 1");
  if (num_frames == 0) throw ConfigError("num_frames must be >= 1");
  if (!(world_extent > 0.0)) throw ConfigError("world_extent must be positive");
  if (classes.empty()) throw ConfigError("scene needs at least one object template");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  for (const auto& c : classes) {
    if (c.class_id < 0) throw ConfigError("class ids must be >= 0");
    if (c.shape == ShapeKind::kPlane) continue;
    if (!(c.size_min > 0.0) || c.size_max < c.size_min) throw ConfigError("bad size range");
    if (c.speed_min < 0.0 || c.speed_max < c.speed_min) throw ConfigError("bad speed range");
    if (c.size_max >= world_extent) throw ConfigError("object larger than the world");
  }
}

bool SceneConfig::has_twin_pair() const {
  for (const auto& a : classes) {
    for (const auto& b : classes) {
      if (a.class_id == b.class_id || a.shape == ShapeKind::kPlane) continue;
      const bool same_geometry =
          a.shape == b.shape && a.size_min == b.size_min && a.size_max == b.size_max;
      if (same_geometry && a.speed_max <= 0.05 && b.speed_min > a.speed_max) return true;
    }
  }
  return false;
}

SceneConfig parse_scene(const json& j) {
  SceneConfig c;
  try {
    c.num_frames = j.value("num_frames", c.num_frames);
    c.points_per_frame = j.value("points_per_frame", c.points_per_frame);
    c.world_extent = j.value("world_extent", c.world_extent);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.feature_width = j.value("feature_width", c.feature_width);
    c.resample = j.value("resample", c.resample);
    c.num_sequences = j.value("num_sequences", c.num_sequences);
    for (const json& jc : j.at("classes")) {
      ObjectTemplate t;
      t.shape = parse_shape(jc.at("shape").get<std::string>());
      t.class_id = jc.at("class_id").get<int>();
      if (jc.contains("size")) {
        const json& s = jc.at("size");
        if (s.is_array()) {
          t.size_min = s.at(0).get<double>();
          t.size_max = s.at(1).get<double>();
        } else {
          t.size_min = t.size_max = s.get<double>();
        }
      }
      t.count = jc.value("count", std::size_t{1});
      if (jc.contains("speed")) {
        const json& s = jc.at("speed");
        if (s.is_array()) {
          t.speed_min = s.at(0).get<double>();
          t.speed_max = s.at(1).get<double>();
        } else {
          t.speed_min = t.speed_max = s.get<double>();
        }
      }
      if (jc.contains("direction")) {
        const auto d = jc.at("direction").get<std::vector<double>>();
        if (d.size() != 3) throw ConfigError("direction must have 3 components");
        t.direction = Vec3{d[0], d[1], d[2]};
      }
      c.classes.push_back(t);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

SceneConfig load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open scene config " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return parse_scene(j);
}

json to_json(const SceneConfig& c) {
  json j;
  j["num_frames"] = c.num_frames;
  j["points_per_frame"] = c.points_per_frame;
  j["world_extent"] = c.world_extent;
  j["noise_sigma"] = c.noise_sigma;
  j["rng_seed"] = c.rng_seed;
  j["feature_width"] = c.feature_width;
  j["resample"] = c.resample;
  j["num_sequences"] = c.num_sequences;
  json classes = json::array();
  for (const auto& t : c.classes) {
    json jt{{"shape", shape_name(t.shape)},
            {"class_id", t.class_id},
            {"size", {t.size_min, t.size_max}},
            {"count", t.count},
            {"speed", {t.speed_min, t.speed_max}}};
    if (t.direction) jt["direction"] = {t.direction->x, t.direction->y, t.direction->z};
    classes.push_back(jt);
  }
  j["classes"] = classes;
  return j;
}

std::uint64_t config_hash(const SceneConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_json(cfg).dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---- generation -------------------------------------------------------------

SequenceRecord generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 layout_rng(splitmix64(cfg.rng_seed));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::vector<Object> objects;
  int ground_label = -1;
  for (const auto& t : cfg.classes) {
    if (t.shape == ShapeKind::kPlane) {
      ground_label = t.class_id;
      continue;
    }
    for (std::size_t k = 0; k < t.count; ++k) {
      Object o;
      o.shape = t.shape;
      o.label = t.class_id;
      o.size = t.size_min + (t.size_max - t.size_min) * u(layout_rng);
      const double margin = o.size / 2.0;
      o.position = {margin + (cfg.world_extent - 2 * margin) * u(layout_rng),
                    margin + (cfg.world_extent - 2 * margin) * u(layout_rng), 0.0};
      const double speed = t.speed_min + (t.speed_max - t.speed_min) * u(layout_rng);
      Vec3 dir;
      if (t.direction) {
        dir = *t.direction;
      } else {
        const double angle = 2.0 * std::numbers::pi * u(layout_rng);
        dir = {std::cos(angle), std::sin(angle), 0.0};
      }
      const double len = std::sqrt(dir.x * dir.x + dir.y * dir.y + dir.z * dir.z);
      o.velocity = len > 0.0 ? dir * (speed / len) : Vec3{};
      objects.push_back(o);
    }
  }

  SequenceRecord rec;
  rec.num_classes = cfg.num_classes();
  rec.feature_width = cfg.feature_width;
  rec.config_hash = config_hash(cfg);
  const double ground_area = ground_label >= 0 ? cfg.world_extent * cfg.world_extent : 0.0;

  for (std::size_t t = 0; t < cfg.num_frames; ++t) {
    std::mt19937_64 rng(splitmix64(cfg.rng_seed ^ splitmix64(cfg.resample ? t + 1 : 1)));
    std::vector<double> weights;
    weights.push_back(ground_area);
    for (const auto& o : objects) weights.push_back(o.area());
    if (std::all_of(weights.begin(), weights.end(), [](double w) { return w <= 0.0; })) {
      throw ConfigError("scene has no surface to sample");
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0);
    const Object ground{ShapeKind::kPlane, 0.0, {}, {}, ground_label};

    PointFrame frame;
    frame.frame_index = t;
    frame.feature_width = cfg.feature_width;
    for (std::size_t i = 0; i < cfg.points_per_frame; ++i) {
      const std::size_t s = pick(rng);
      const Object& o = s == 0 ? ground : objects[s - 1];
      Vec3 p = sample_surface(o, cfg.world_extent, rng);
      if (cfg.noise_sigma > 0) p = p + Vec3{noise(rng), noise(rng), noise(rng)};
      p = p - Vec3{cfg.world_extent / 2.0, cfg.world_extent / 2.0, 0.0};
      frame.coords.push_back({to_f32(p.x), to_f32(p.y), to_f32(p.z)});
      for (std::size_t k = 0; k < cfg.feature_width; ++k) frame.features.push_back(to_f32(u(rng)));
      frame.labels.push_back(o.label);
    }
    rec.frames.push_back(std::move(frame));
    for (auto& o : objects) advance(o, cfg.world_extent);
  }
  return rec;
}

std::vector<SequenceRecord> generate_dataset(const SceneConfig& cfg) {
  std::vector<SequenceRecord> out;
  for (std::size_t i = 0; i < cfg.num_sequences; ++i) {
    SceneConfig c = cfg;
    c.rng_seed = cfg.rng_seed + i;
    out.push_back(generate_scene(c));
  }
  return out;
}

// ---- file format ------------------------------------------------------------

void SequenceRecord::validate() const {
  if (frames.empty()) throw std::invalid_argument("sequence has no frames");
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].feature_width != feature_width) {
      throw std::invalid_argument("frame feature width differs from sequence");
    }
    if (t > 0 && frames[t].frame_index <= frames[t - 1].frame_index) {
      throw std::invalid_argument("frame indices must be strictly increasing");
    }
    frames[t].validate(num_classes);
  }
}

std::string encode_sequence(const SequenceRecord& rec) {
  rec.validate();
  std::string out(kMagic, kMagicLen);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.frames.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.feature_width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.num_classes));
  const std::size_t C = rec.feature_width;
  for (const auto& f : rec.frames) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.frame_index));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) {
      put<float>(out, static_cast<float>(f.coords[i].x));
      put<float>(out, static_cast<float>(f.coords[i].y));
      put<float>(out, static_cast<float>(f.coords[i].z));
      for (std::size_t k = 0; k < C; ++k) put<float>(out, static_cast<float>(f.features[i * C + k]));
      put<std::uint16_t>(out, f.has_labels() ? static_cast<std::uint16_t>(f.labels[i]) : kNoLabel);
    }
  }
  return out;
}

SequenceRecord decode_sequence(const std::string& bytes) {
  if (bytes.compare(0, kMagicLen, kMagic) == 0) return decode_binary(bytes);
  if (bytes.size() >= 2 && bytes.compare(0, 4, "PCSQ") == 0) {
    throw ParseError("unsupported PCSQ version", 0);
  }
  return decode_text(bytes);
}

void save_sequence(const SequenceRecord& rec, const std::string& path) {
  const std::string bytes = encode_sequence(rec);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

SequenceRecord load_sequence(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_sequence(ss.str());
}

std::vector<SequenceRecord> load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a dataset directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".pcsq" || ext == ".txt")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SequenceRecord> out;
  for (const auto& p : files) out.push_back(load_sequence(p.string()));
  return out;
}

void save_dataset(const std::vector<SequenceRecord>& seqs, const std::string& dir,
                  const json& meta) {
  fs::create_directories(dir);
  json index = meta;
  index["sequences"] = json::array();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%03zu.pcsq", i);
    save_sequence(seqs[i], (fs::path(dir) / name).string());
    index["sequences"].push_back({{"file", name}, {"config_hash", seqs[i].config_hash}});
  }
  std::ofstream(fs::path(dir) / "dataset.json") << index.dump(2) << '\n';
}

// ---- windows ----------------------------------------------------------------

std::vector<Window> windows(const SequenceRecord& rec, std::size_t T, std::size_t stride) {
  const std::size_t F = rec.num_frames();
  if (T == 0 || stride == 0) throw std::invalid_argument("windows: T and stride must be >= 1");
  if (stride > T) throw std::invalid_argument("windows: stride larger than T skips frames");
  if (T > F) {
    throw std::invalid_argument("windows: T=" + std::to_string(T) + " exceeds " +
                                std::to_string(F) + " frames");
  }
  std::vector<Window> out;
  auto make = [&](std::size_t start) {
    Window w;
    w.start = start;
    for (std::size_t k = 0; k < T; ++k) w.frames.push_back(&rec.frames[start + k]);
    out.push_back(std::move(w));
  };
  std::size_t start = 0;
  for (; start + T <= F; start += stride) make(start);
  if (out.back().start + T < F) make(F - T);
  return out;
}

std::vector<WindowSlot> last_window_slots(const std::vector<Window>& wins, std::size_t num_frames) {
  std::vector<WindowSlot> slots(num_frames);
  std::vector<char> seen(num_frames, 0);
  for (std::size_t w = 0; w < wins.size(); ++w) {
    for (std::size_t k = 0; k < wins[w].frames.size(); ++k) {
      const std::size_t f = wins[w].start + k;
      slots[f] = {w, k};
      seen[f] = 1;
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw std::logic_error("windows do not cover every frame");
  }
  return slots;
}

}  // namespace asap::data
