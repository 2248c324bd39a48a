#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "anacto/annotations.hpp"
#include "anacto/boxes.hpp"
#include "anacto/image.hpp"
#include "anacto/rng.hpp"

namespace anacto {

inline constexpr int kNumCategories = 8;

// Scripted egocentric-like scene: a hand finishes carrying one object,
// reaches for the target object and contacts it at the action start. A
// cropping camera window drifts over the 2D arena, so the target's
// position in view at contact differs from its last observed position.
struct SceneConfig {
  int arena_size = 96;        // world is arena_size x arena_size pixels
  int crop_size = 32;         // camera window, also the native frame size
  int num_objects = 4;        // distinct categories drawn from kNumCategories
  double clip_fps = 8.0;
  double clip_len = 13.0;     // seconds
  double contact_time = 11.0; // tau_s, seconds; strictly inside the clip
  double camera_drift = 1.0;  // max per-frame translation, pixels
  std::uint64_t seed = 0;

  int frame_count() const;
  int action_start_index() const;
  void validate() const;
};

// Stand-in for a pretrained object detector: ground-truth boxes plus
// Gaussian center/scale noise, category dropout, and a confidence that is
// a deterministic function of the drawn noise magnitude.
struct OracleDetectorConfig {
  double center_noise_sigma = 0.5;  // pixels
  double scale_noise_sigma = 0.03;  // relative
  double dropout_prob = 0.02;       // [0, 1)
  double base_confidence = 0.99;    // confidence at zero noise
  double confidence_falloff = 4.0;  // pixels of noise magnitude per e^(-1/2)

  void validate() const;
};

struct ClipGenConfig {
  SceneConfig scene;
  OracleDetectorConfig detector;
  // Per-clip probability that the annotation stream misses the active
  // object for the first lookup window after contact (the contact is still
  // scripted; only the annotations go missing, mimicking sequences whose
  // true interaction is annotated later than the nominal action start).
  double nao_annotation_miss_prob = 0.05;
  int nao_lookup_hint = 10;
};

// Ground truth for one frame, in that frame's view coordinates (boxes
// clamped to the crop; fully out-of-view entities are absent).
struct ObjectTruth {
  int category = 0;
  Box box{};
  bool active = false;
};

struct FrameTruth {
  int frame_index = 0;
  std::optional<Box> hand;
  bool hand_contact = false;
  std::vector<ObjectTruth> objects;
};

struct ClipRecord {
  std::vector<Raster> frames;
  double fps = 0.0;
  int native_width = 0;
  int native_height = 0;
  int action_start_index = 0;
  int target_category = 0;
  std::uint64_t seed = 0;
  std::vector<FrameTruth> truth;
  std::vector<AnnotationRecord> annotations;
};

// Renderer input: world coordinates plus the camera crop corner.
struct SceneState {
  int crop_size = 32;
  int camera_x = 0;
  int camera_y = 0;
  struct Obj {
    double x = 0, y = 0, w = 0, h = 0;
    int category = 0;
  };
  std::vector<Obj> objects;  // drawn in order, hand on top
  bool hand_present = false;
  double hand_x = 0, hand_y = 0, hand_radius = 2.5;
};

Raster render_frame(const SceneState& state);

ClipRecord generate_clip(const ClipGenConfig& config);

// One detector pass over a frame's truth. Deterministic given the rng
// stream. When a category has several instances, the highest-confidence
// detection wins the slot.
DetectionSet oracle_detect(const FrameTruth& truth, const OracleDetectorConfig& config, Rng& rng,
                           int num_categories = kNumCategories);

// Clip directory layout: frame_<k>.ppm + meta.json + annotations.jsonl.
void write_clip_dir(const std::filesystem::path& dir, const ClipRecord& clip);

struct ClipMeta {
  double fps = 0.0;
  int native_width = 0;
  int native_height = 0;
  int action_start_index = 0;
  int target_category = 0;
  std::uint64_t seed = 0;
};

ClipMeta read_clip_meta(const std::filesystem::path& dir);
std::filesystem::path clip_frame_path(const std::filesystem::path& dir, int frame_index);

std::array<std::uint8_t, 3> category_color(int category);
std::array<std::uint8_t, 3> hand_color();
std::array<std::uint8_t, 3> background_color();

}  // namespace anacto
