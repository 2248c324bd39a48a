#include "anacto/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "anacto/errors.hpp"

namespace anacto {

namespace {

Box lerp_box(const Box& a, const Box& b, double alpha) {
  return Box{a.x + (b.x - a.x) * alpha, a.y + (b.y - a.y) * alpha, a.w + (b.w - a.w) * alpha,
             a.h + (b.h - a.h) * alpha};
}

// Presence rule for a track seen in only one of the two bracketing source
// frames: it exists on the output frame nearest to it (ties -> earlier).
bool take_left(double alpha) { return alpha <= 0.5; }

}  // namespace

std::vector<AnnotationRecord> normalize_fps(const std::vector<AnnotationRecord>& records, double src_fps,
                                            double dst_fps) {
  if (records.empty()) throw DataError("normalize_fps: empty record stream");
  if (src_fps <= 0.0 || dst_fps <= 0.0) throw std::invalid_argument("normalize_fps: fps must be positive");
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].frame_index <= records[i - 1].frame_index) {
      throw DataError("normalize_fps: records must be sorted by frame_index");
    }
  }
  if (src_fps == dst_fps) return records;

  const std::size_t m = records.size();
  const double span = static_cast<double>(m - 1) / src_fps;  // seconds covered
  const std::size_t out_count = static_cast<std::size_t>(std::floor(span * dst_fps + 1e-9)) + 1;

  std::vector<AnnotationRecord> out;
  out.reserve(out_count);
  for (std::size_t k = 0; k < out_count; ++k) {
    const double u = static_cast<double>(k) * src_fps / dst_fps;  // source frame units
    std::size_t k0 = static_cast<std::size_t>(std::floor(u + 1e-9));
    k0 = std::min(k0, m - 1);
    const std::size_t k1 = std::min(k0 + 1, m - 1);
    const double alpha = std::clamp(u - static_cast<double>(k0), 0.0, 1.0);

    const AnnotationRecord& a = records[k0];
    const AnnotationRecord& b = records[k1];
    AnnotationRecord rec;
    rec.frame_index = static_cast<int>(k);

    if (k0 == k1 || alpha == 0.0) {
      rec.hands = a.hands;
      rec.objects = a.objects;
      rec.active_objects = a.active_objects;
      out.push_back(std::move(rec));
      continue;
    }

    // hands, tracked by side
    for (const HandAnnotation& ha : a.hands) {
      const auto it = std::find_if(b.hands.begin(), b.hands.end(),
                                   [&](const HandAnnotation& hb) { return hb.side == ha.side; });
      if (it != b.hands.end()) {
        HandAnnotation h = ha;
        h.box = lerp_box(ha.box, it->box, alpha);
        h.score = ha.score + (it->score - ha.score) * alpha;
        h.contact_state = take_left(alpha) ? ha.contact_state : it->contact_state;
        rec.hands.push_back(std::move(h));
      } else if (take_left(alpha)) {
        rec.hands.push_back(ha);
      }
    }
    for (const HandAnnotation& hb : b.hands) {
      const bool in_a = std::any_of(a.hands.begin(), a.hands.end(),
                                    [&](const HandAnnotation& ha) { return ha.side == hb.side; });
      if (!in_a && !take_left(alpha)) rec.hands.push_back(hb);
    }

    // objects, tracked by category
    for (const ObjectAnnotation& oa : a.objects) {
      const auto it = std::find_if(b.objects.begin(), b.objects.end(),
                                   [&](const ObjectAnnotation& ob) { return ob.category == oa.category; });
      if (it != b.objects.end()) {
        ObjectAnnotation o = oa;
        o.box = lerp_box(oa.box, it->box, alpha);
        o.score = oa.score + (it->score - oa.score) * alpha;
        rec.objects.push_back(std::move(o));
      } else if (take_left(alpha)) {
        rec.objects.push_back(oa);
      }
    }
    for (const ObjectAnnotation& ob : b.objects) {
      const bool in_a = std::any_of(a.objects.begin(), a.objects.end(),
                                    [&](const ObjectAnnotation& oa) { return oa.category == ob.category; });
      if (!in_a && !take_left(alpha)) rec.objects.push_back(ob);
    }

    // active objects, tracked by category
    for (const ActiveObjectAnnotation& aa : a.active_objects) {
      const auto it =
          std::find_if(b.active_objects.begin(), b.active_objects.end(),
                       [&](const ActiveObjectAnnotation& ab) { return ab.category == aa.category; });
      if (it != b.active_objects.end()) {
        ActiveObjectAnnotation act = aa;
        act.box = lerp_box(aa.box, it->box, alpha);
        rec.active_objects.push_back(std::move(act));
      } else if (take_left(alpha)) {
        rec.active_objects.push_back(aa);
      }
    }
    for (const ActiveObjectAnnotation& ab : b.active_objects) {
      const bool in_a =
          std::any_of(a.active_objects.begin(), a.active_objects.end(),
                      [&](const ActiveObjectAnnotation& aa) { return aa.category == ab.category; });
      if (!in_a && !take_left(alpha)) rec.active_objects.push_back(ab);
    }

    out.push_back(std::move(rec));
  }
  return out;
}

std::optional<BoxPair> curate_nao_gt(const std::vector<AnnotationRecord>& records, int action_start_index,
                                     int lookup) {
  if (lookup < 1) throw std::invalid_argument("curate_nao_gt: lookup must be >= 1");
  std::map<int, const AnnotationRecord*> by_index;
  for (const AnnotationRecord& rec : records) by_index[rec.frame_index] = &rec;
  for (int f = action_start_index; f < action_start_index + lookup; ++f) {
    if (!by_index.contains(f)) {
      throw DataError("curate_nao_gt: records do not cover frame " + std::to_string(f) +
                      " of the lookup window");
    }
  }
  for (int f = action_start_index; f < action_start_index + lookup; ++f) {
    const AnnotationRecord& rec = *by_index.at(f);
    if (!rec.active_objects.empty()) return active_objects_to_boxpair(rec);
  }
  return std::nullopt;
}

ClipWindows sample_frames(double clip_fps, int action_start_index, double tau_a, int num_frames,
                          bool allow_clamp) {
  if (clip_fps <= 0.0) throw std::invalid_argument("sample_frames: fps must be positive");
  if (tau_a <= 0.0) throw std::invalid_argument("sample_frames: tau_a must be positive");
  if (num_frames < 1) throw std::invalid_argument("sample_frames: num_frames must be >= 1");

  const long needed = std::lround(clip_fps * tau_a * num_frames);
  if (action_start_index < needed && !allow_clamp) {
    throw DataError("sample_frames: insufficient history, action starts at frame " +
                    std::to_string(action_start_index) + " but " + std::to_string(needed) +
                    " frames of observation are required");
  }

  ClipWindows w;
  w.tau_a = tau_a;
  w.tau_o = tau_a * num_frames;
  w.tau_s = static_cast<double>(action_start_index) / clip_fps;
  w.num_frames = num_frames;
  w.sampled_indices.reserve(static_cast<std::size_t>(num_frames));
  for (int k = 0; k < num_frames; ++k) {
    const double pos = static_cast<double>(action_start_index) - clip_fps * tau_a * (num_frames - k);
    const long idx = std::max(0L, std::lround(pos));
    w.sampled_indices.push_back(static_cast<int>(idx));
  }
  for (std::size_t i = 1; i < w.sampled_indices.size(); ++i) {
    if (w.sampled_indices[i] <= w.sampled_indices[i - 1]) {
      throw DataError("sample_frames: sampled indices are not strictly increasing (fps too low for tau_a)");
    }
  }
  return w;
}

Box rescale_box(const Box& box, const Extent2& from, const Extent2& to) {
  if (from.width <= 0.0 || from.height <= 0.0 || to.width <= 0.0 || to.height <= 0.0) {
    throw std::invalid_argument("rescale_box: sizes must be positive");
  }
  if (box.empty()) return Box::sentinel();
  const double rx = to.width / from.width;
  const double ry = to.height / from.height;
  return Box{box.x * rx, box.y * ry, box.w * rx, box.h * ry};
}

BoxPair rescale_box_pair(const BoxPair& pair, const Extent2& from, const Extent2& to) {
  BoxPair out = pair;
  for (std::size_t i = 0; i < 2; ++i) {
    if (out.valid[i]) out.boxes[i] = rescale_box(out.boxes[i], from, to);
  }
  return out;
}

DetectionSet threshold_detections(const DetectionSet& dets, double min_score) {
  DetectionSet out(dets.num_categories());
  for (std::size_t i = 0; i < dets.slots.size(); ++i) {
    if (dets.slots[i].score >= min_score && !dets.slots[i].box.empty()) {
      out.slots[i] = dets.slots[i];
    }
  }
  return out;
}

}  // namespace anacto
