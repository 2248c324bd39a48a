#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anacto/boxes.hpp"
#include "anacto/dataset.hpp"
#include "anacto/model.hpp"

namespace anacto {

inline constexpr std::array<double, 4> kIouThresholds{0.05, 0.10, 0.20, 0.50};

// Intersection over union of center-format boxes; 0 when either is the
// empty sentinel.
double iou(const Box& a, const Box& b);

// Per-slot scores for score-ranked AP, aligned with the prediction list.
using SlotScores = std::vector<std::array<double, 2>>;

// Average precision of slot-matched box pairs at one IoU threshold.
// Scoreless mode (a plain regressor): the fraction of valid ground-truth
// slots whose same-slot prediction reaches the threshold. With scores:
// area under the score-ranked precision-recall curve (precision
// envelope), greedy per-slot matching. Predictions on slots whose ground
// truth is invalid are outside the evaluation set. Throws on an empty
// ground-truth set.
double ap_at(std::span<const BoxPair> pred, std::span<const BoxPair> gt, double threshold,
             const SlotScores* scores = nullptr);

struct EvalReport {
  std::array<double, 4> ap{};  // aligned with kIouThresholds
  double ap_avg = 0.0;
  int n_clips = 0;
  std::string model_id;
  double tau_a = 0.0;
  std::string ap_definition = "slot-matched fraction (scoreless regressor)";
};

// Autoregressive inference per sample, last-step predictions clamped to
// frame bounds, compared against the curated ground truth in model pixel
// coordinates.
EvalReport evaluate_samples(const AnticipationModel& model, std::span<const ModelSample> samples,
                            double tau_a, const std::string& model_id);

// Loads/prepares samples at tau_a (clips without ground truth are
// excluded), then scores them.
EvalReport evaluate(const AnticipationModel& model, const std::vector<LoadedClip>& clips, double tau_a,
                    const SamplePrepConfig& prep, const std::string& model_id);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

// Fixed-width comparison table, model rows by threshold columns; the last
// column is the arithmetic mean of the four.
std::string render_compare_table(std::span<const EvalReport> reports);

}  // namespace anacto
