#pragma once

// Synthetic dynamic scenes, the PCSQ1 sequence file format and windowing.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "asap/geometry.hpp"

namespace asap::data {

using geometry::PointFrame;
using geometry::Vec3;

enum class ShapeKind { kBox, kSphere, kPlane };

/// One object class. Boxes are axis-aligned cubes of edge `size` resting on the
/// ground; spheres have diameter `size`; a plane is the ground and ignores size,
/// count and speed.
struct ObjectTemplate {
  ShapeKind shape = ShapeKind::kBox;
  double size_min = 1.0;
  double size_max = 1.0;
  std::size_t count = 1;
  double speed_min = 0.0;  // meters per frame
  double speed_max = 0.0;
  std::optional<Vec3> direction;  // fixed heading; uniform in the xy-plane if absent
  int class_id = 0;
};

struct SceneConfig {
  std::size_t num_frames = 12;
  std::size_t points_per_frame = 2048;
  double world_extent = 16.0;  // scene spans [-extent/2, extent/2]^2 in x, y
  std::vector<ObjectTemplate> classes;
  double noise_sigma = 0.02;
  std::uint64_t rng_seed = 0;
  std::size_t feature_width = 1;
  bool resample = true;  // draw fresh surface samples every frame
  std::size_t num_sequences = 1;

  std::size_t num_classes() const;
  void validate() const;
  /// Two templates with the same geometry distribution, one near-static
  /// (speed_max <= 0.05) and one fast (speed_min > the static one's speed_max).
  bool has_twin_pair() const;
};

SceneConfig parse_scene(const nlohmann::json& j);
SceneConfig load_scene(const std::string& path);
nlohmann::json to_json(const SceneConfig& cfg);
std::uint64_t config_hash(const SceneConfig& cfg);

struct SequenceRecord {
  std::vector<PointFrame> frames;
  std::size_t num_classes = 0;
  std::size_t feature_width = 0;
  std::uint64_t config_hash = 0;  // generator metadata; not part of the file format

  std::size_t num_frames() const { return frames.size(); }
  void validate() const;
};

SequenceRecord generate_scene(const SceneConfig& cfg);
/// Sequence `i` of a multi-sequence dataset uses seed rng_seed + i.
std::vector<SequenceRecord> generate_dataset(const SceneConfig& cfg);

/// PCSQ1 binary: "PCSQ1", u32 num_frames, u32 feature_width, u32 num_classes,
/// then per frame u32 frame_index, u32 N and N records of (3 + C) f32 and a
/// u16 label (0xFFFF for unlabeled frames). Little-endian throughout.
std::string encode_sequence(const SequenceRecord& rec);
/// Decodes PCSQ1 or, when the magic is absent, the text variant: one point per
/// line "x y z f1..fC label"; a blank line or a line starting with "frame" ends a
/// frame; '#' lines are comments.
SequenceRecord decode_sequence(const std::string& bytes);
void save_sequence(const SequenceRecord& rec, const std::string& path);
SequenceRecord load_sequence(const std::string& path);

/// All *.pcsq / *.txt files of a directory, sorted by file name.
std::vector<SequenceRecord> load_dataset(const std::string& dir);
void save_dataset(const std::vector<SequenceRecord>& seqs, const std::string& dir,
                  const nlohmann::json& meta);

struct Window {
  std::size_t start = 0;
  std::vector<const PointFrame*> frames;
};

/// Windows [0, T), [stride, stride + T), ...; if the last regular window stops
/// short of the end, one extra window [F - T, F) is appended so that every
/// frame is covered. Requires 1 <= stride <= T <= num_frames.
std::vector<Window> windows(const SequenceRecord& rec, std::size_t T, std::size_t stride);

struct WindowSlot {
  std::size_t window = 0;
  std::size_t position = 0;
};

/// For each frame: the last window containing it and its position there.
std::vector<WindowSlot> last_window_slots(const std::vector<Window>& wins, std::size_t num_frames);

}  // namespace asap::data
