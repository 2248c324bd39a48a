#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anacto/annotations.hpp"
#include "anacto/boxes.hpp"
#include "anacto/image.hpp"
#include "anacto/model.hpp"
#include "anacto/pipeline.hpp"
#include "anacto/world.hpp"

namespace anacto {

struct LoadedClip {
  std::filesystem::path dir;
  std::string id;
  ClipMeta meta;
  std::vector<AnnotationRecord> annotations;
};

// Scans `dir` for clip_<n> subdirectories, ordered by n.
std::vector<LoadedClip> load_dataset(const std::filesystem::path& dir);
LoadedClip load_clip(const std::filesystem::path& clip_dir);

struct SamplePrepConfig {
  double tau_a = 0.25;
  int num_frames = 10;
  double det_threshold = 0.5;
  int lookup = 10;
};

// One model-ready training/evaluation sample: sampled frames resized to
// the model input size, thresholded and rescaled detections, per-frame
// current-active-object ground truth, and the curated contact-point
// target. All boxes are in model pixel coordinates.
struct ModelSample {
  std::string clip_id;
  std::vector<Raster> frames;
  std::vector<DetectionSet> dets;
  std::vector<BoxPair> cao_gt;
  BoxPair nao_gt;
  ClipWindows windows;
};

// nullopt when the lookup window holds no active object (the clip is
// excluded upstream of training and evaluation).
std::optional<ModelSample> make_sample(const LoadedClip& clip, const ModelConfig& model_cfg,
                                       const SamplePrepConfig& prep);

struct SampleSet {
  std::vector<ModelSample> samples;
  int excluded = 0;  // clips without NAO ground truth in the window
};

SampleSet prepare_samples(const std::vector<LoadedClip>& clips, const ModelConfig& model_cfg,
                          const SamplePrepConfig& prep);

}  // namespace anacto
