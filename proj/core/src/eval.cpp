#include "anacto/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "anacto/errors.hpp"

namespace anacto {

double iou(const Box& a, const Box& b) {
  if (a.empty() || b.empty()) return 0.0;
  const double ax0 = a.x - a.w / 2, ax1 = a.x + a.w / 2;
  const double ay0 = a.y - a.h / 2, ay1 = a.y + a.h / 2;
  const double bx0 = b.x - b.w / 2, bx1 = b.x + b.w / 2;
  const double by0 = b.y - b.h / 2, by1 = b.y + b.h / 2;
  const double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
  const double ih = std::min(ay1, by1) - std::max(ay0, by0);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return inter / uni;
}

double ap_at(std::span<const BoxPair> pred, std::span<const BoxPair> gt, double threshold,
             const SlotScores* scores) {
  if (pred.size() != gt.size()) throw std::invalid_argument("ap_at: prediction/ground-truth length mismatch");
  if (scores && scores->size() != pred.size()) {
    throw std::invalid_argument("ap_at: score list length mismatch");
  }

  struct Entry {
    double score;
    bool hit;
    std::size_t clip;
    std::size_t slot;
  };
  std::vector<Entry> entries;
  std::size_t total_gt = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (!gt[i].valid[slot]) continue;
      ++total_gt;
      const bool hit = iou(pred[i].boxes[slot], gt[i].boxes[slot]) >= threshold;
      const double score = scores ? (*scores)[i][slot] : 0.0;
      entries.push_back(Entry{score, hit, i, slot});
    }
  }
  if (total_gt == 0) throw DataError("ap_at: empty ground-truth set, the metric is undefined");

  if (!scores) {
    std::size_t hits = 0;
    for (const Entry& e : entries) hits += e.hit ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(total_gt);
  }

  // Score-ranked precision envelope. Ties break by clip then slot index so
  // the ranking is deterministic.
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.clip != b.clip) return a.clip < b.clip;
    return a.slot < b.slot;
  });
  std::vector<double> precision(entries.size()), recall(entries.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    tp += entries[k].hit ? 1 : 0;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }
  for (std::size_t k = entries.size(); k-- > 1;) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

EvalReport evaluate_samples(const AnticipationModel& model, std::span<const ModelSample> samples,
                            double tau_a, const std::string& model_id) {
  std::vector<BoxPair> preds, gts;
  preds.reserve(samples.size());
  gts.reserve(samples.size());
  for (const ModelSample& s : samples) {
    preds.push_back(model.predict_nao(s.frames, s.dets));
    gts.push_back(s.nao_gt);
  }
  EvalReport report;
  report.model_id = model_id;
  report.tau_a = tau_a;
  report.n_clips = static_cast<int>(samples.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < kIouThresholds.size(); ++i) {
    report.ap[i] = ap_at(preds, gts, kIouThresholds[i]);
    acc += report.ap[i];
  }
  report.ap_avg = acc / static_cast<double>(kIouThresholds.size());
  return report;
}

EvalReport evaluate(const AnticipationModel& model, const std::vector<LoadedClip>& clips, double tau_a,
                    const SamplePrepConfig& prep, const std::string& model_id) {
  SamplePrepConfig cfg = prep;
  cfg.tau_a = tau_a;
  cfg.num_frames = model.config().num_frames;
  const SampleSet set = prepare_samples(clips, model.config(), cfg);
  return evaluate_samples(model, set.samples, tau_a, model_id);
}

std::string eval_report_to_json(const EvalReport& report) {
  nlohmann::json j;
  nlohmann::json ap;
  char key[16];
  for (std::size_t i = 0; i < kIouThresholds.size(); ++i) {
    std::snprintf(key, sizeof key, "%.2f", kIouThresholds[i]);
    ap[key] = report.ap[i];
  }
  j["ap"] = std::move(ap);
  j["ap_avg"] = report.ap_avg;
  j["n_clips"] = report.n_clips;
  j["model_id"] = report.model_id;
  j["tau_a"] = report.tau_a;
  j["ap_definition"] = report.ap_definition;
  return j.dump();
}

EvalReport eval_report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("eval report: parse error: ") + e.what());
  }
  EvalReport report;
  try {
    char key[16];
    for (std::size_t i = 0; i < kIouThresholds.size(); ++i) {
      std::snprintf(key, sizeof key, "%.2f", kIouThresholds[i]);
      report.ap[i] = j.at("ap").at(key).get<double>();
    }
    report.ap_avg = j.at("ap_avg").get<double>();
    report.n_clips = j.at("n_clips").get<int>();
    report.model_id = j.at("model_id").get<std::string>();
    report.tau_a = j.at("tau_a").get<double>();
    report.ap_definition = j.value("ap_definition", report.ap_definition);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("eval report: schema error: ") + e.what());
  }
  return report;
}

std::string render_compare_table(std::span<const EvalReport> reports) {
  std::ostringstream os;
  char buf[64];
  os << "model                            ";
  for (double t : kIouThresholds) {
    std::snprintf(buf, sizeof buf, "AP@%.2f", t);
    os << ' ' << std::string(12 - std::string(buf).size(), ' ') << buf << "      ";
  }
  os << "       AP_avg\n";
  for (const EvalReport& r : reports) {
    std::string id = r.model_id;
    if (id.size() > 32) id = id.substr(0, 32);
    os << id << std::string(33 - id.size(), ' ');
    for (double v : r.ap) {
      std::snprintf(buf, sizeof buf, "%.15f", v);
      os << ' ' << buf;
    }
    std::snprintf(buf, sizeof buf, "%.15f", r.ap_avg);
    os << ' ' << buf << '\n';
  }
  return os.str();
}

}  // namespace anacto
