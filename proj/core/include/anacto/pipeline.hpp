#pragma once

#include <optional>
#include <vector>

#include "anacto/annotations.hpp"
#include "anacto/boxes.hpp"

namespace anacto {

// Observed-segment sampling plan. The observed window ends tau_a seconds
// before the action start; consecutive sampled timestamps differ by
// exactly tau_a before frame rounding, so tau_o = num_frames * tau_a.
struct ClipWindows {
  double tau_o = 0.0;
  double tau_a = 0.0;
  double tau_s = 0.0;  // seconds
  int num_frames = 10;
  std::vector<int> sampled_indices;  // strictly increasing
};

// Resamples an annotation stream to dst_fps. Boxes are interpolated
// linearly per coordinate between the two nearest source frames carrying
// the same track (hand side, object category, active-object category);
// scores interpolate too. Booleans and track presence use the nearest
// source frame, ties resolving to the earlier one. Identity when
// src_fps == dst_fps.
std::vector<AnnotationRecord> normalize_fps(const std::vector<AnnotationRecord>& records, double src_fps,
                                            double dst_fps = 30.0);

// Scans [action_start_index, action_start_index + lookup) for the first
// frame with any active object and returns its boxes; nullopt when the
// window has none. Records must cover the whole window.
std::optional<BoxPair> curate_nao_gt(const std::vector<AnnotationRecord>& records, int action_start_index,
                                     int lookup = 10);

// index_k = round(tau_s_frames - fps * tau_a * (num_frames - k)). Errors
// when history is too short, unless allow_clamp permits clamping at 0.
ClipWindows sample_frames(double clip_fps, int action_start_index, double tau_a, int num_frames = 10,
                          bool allow_clamp = false);

struct Extent2 {
  double width = 0.0;
  double height = 0.0;
};

// Scales each coordinate by the per-axis ratio; the zero-size sentinel is
// preserved.
Box rescale_box(const Box& box, const Extent2& from, const Extent2& to);
BoxPair rescale_box_pair(const BoxPair& pair, const Extent2& from, const Extent2& to);

// Slots with score below min_score (exclusive; exactly min_score is kept)
// become empty sentinels.
DetectionSet threshold_detections(const DetectionSet& dets, double min_score = 0.5);

}  // namespace anacto
