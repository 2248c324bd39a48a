#include "anacto/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "anacto/errors.hpp"

namespace anacto {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, kNumCategories> kPalette = {{
    {230, 60, 60},
    {60, 200, 60},
    {70, 90, 235},
    {230, 200, 50},
    {200, 70, 220},
    {60, 210, 210},
    {240, 140, 40},
    {160, 160, 160},
}};

constexpr std::array<std::uint8_t, 3> kHandColor = {255, 230, 200};
constexpr std::array<std::uint8_t, 3> kBackground = {25, 25, 25};

struct Vec2 {
  double x = 0, y = 0;
};

Vec2 lerp(const Vec2& a, const Vec2& b, double s) {
  return Vec2{a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * s};
}

bool rects_closer_than(const Vec2& ca, double wa, double ha, const Vec2& cb, double wb, double hb,
                       double margin) {
  return std::abs(ca.x - cb.x) < (wa + wb) / 2.0 + margin &&
         std::abs(ca.y - cb.y) < (ha + hb) / 2.0 + margin;
}

}  // namespace

std::array<std::uint8_t, 3> category_color(int category) {
  if (category < 0 || category >= kNumCategories) throw std::invalid_argument("category_color: bad category");
  return kPalette[static_cast<std::size_t>(category)];
}

std::array<std::uint8_t, 3> hand_color() { return kHandColor; }
std::array<std::uint8_t, 3> background_color() { return kBackground; }

int SceneConfig::frame_count() const { return static_cast<int>(std::lround(clip_len * clip_fps)); }

int SceneConfig::action_start_index() const {
  return static_cast<int>(std::lround(contact_time * clip_fps));
}

void SceneConfig::validate() const {
  if (arena_size <= 0 || crop_size <= 0) throw std::invalid_argument("SceneConfig: non-positive sizes");
  if (crop_size > arena_size) {
    throw std::invalid_argument("SceneConfig: infeasible geometry, camera crop larger than arena");
  }
  if (num_objects < 1 || num_objects > kNumCategories) {
    throw std::invalid_argument("SceneConfig: num_objects must be in [1, " +
                                std::to_string(kNumCategories) + "]");
  }
  if (clip_fps <= 0.0 || clip_len <= 0.0) throw std::invalid_argument("SceneConfig: fps/len must be positive");
  const int frames = frame_count();
  const int contact = action_start_index();
  if (contact < 1 || contact >= frames - 1) {
    throw std::invalid_argument("SceneConfig: contact_time must lie strictly inside the clip");
  }
  if (camera_drift < 0.0) throw std::invalid_argument("SceneConfig: camera_drift must be >= 0");
}

void OracleDetectorConfig::validate() const {
  if (center_noise_sigma < 0.0 || scale_noise_sigma < 0.0) {
    throw std::invalid_argument("OracleDetectorConfig: negative noise sigma");
  }
  if (dropout_prob < 0.0 || dropout_prob > 1.0) {
    throw std::invalid_argument("OracleDetectorConfig: dropout_prob outside [0, 1]");
  }
  if (base_confidence <= 0.0 || base_confidence >= 1.0) {
    throw std::invalid_argument("OracleDetectorConfig: base_confidence must be in (0, 1)");
  }
  if (confidence_falloff <= 0.0) throw std::invalid_argument("OracleDetectorConfig: falloff must be > 0");
}

Raster render_frame(const SceneState& state) {
  Raster img(state.crop_size, state.crop_size, kBackground);
  const double r2 = state.hand_radius * state.hand_radius;
  for (int py = 0; py < state.crop_size; ++py) {
    const double wy = state.camera_y + py + 0.5;
    for (int px = 0; px < state.crop_size; ++px) {
      const double wx = state.camera_x + px + 0.5;
      std::array<std::uint8_t, 3> color = kBackground;
      for (const SceneState::Obj& o : state.objects) {
        if (std::abs(wx - o.x) <= o.w / 2.0 && std::abs(wy - o.y) <= o.h / 2.0) {
          color = category_color(o.category);
        }
      }
      if (state.hand_present) {
        const double dx = wx - state.hand_x, dy = wy - state.hand_y;
        if (dx * dx + dy * dy <= r2) color = kHandColor;
      }
      auto* p = img.px(px, py);
      p[0] = color[0];
      p[1] = color[1];
      p[2] = color[2];
    }
  }
  return img;
}

DetectionSet oracle_detect(const FrameTruth& truth, const OracleDetectorConfig& config, Rng& rng,
                           int num_categories) {
  config.validate();
  DetectionSet set(static_cast<std::size_t>(num_categories));
  for (const ObjectTruth& obj : truth.objects) {
    if (obj.category < 0 || obj.category >= num_categories) {
      throw DataError("oracle_detect: category out of range");
    }
    // Draw order is fixed per object: center noise, scale noise, dropout.
    const double dx = rng.normal(0.0, config.center_noise_sigma);
    const double dy = rng.normal(0.0, config.center_noise_sigma);
    const double sx = 1.0 + rng.normal(0.0, config.scale_noise_sigma);
    const double sy = 1.0 + rng.normal(0.0, config.scale_noise_sigma);
    const double drop = rng.uniform();
    if (drop < config.dropout_prob) continue;
    if (obj.box.empty()) continue;

    Box noisy;
    noisy.x = obj.box.x + dx;
    noisy.y = obj.box.y + dy;
    noisy.w = std::max(0.5, obj.box.w * sx);
    noisy.h = std::max(0.5, obj.box.h * sy);

    const double dw = noisy.w - obj.box.w;
    const double dh = noisy.h - obj.box.h;
    const double mag2 = dx * dx + dy * dy + dw * dw + dh * dh;
    const double conf =
        config.base_confidence * std::exp(-mag2 / (2.0 * config.confidence_falloff * config.confidence_falloff));

    Detection& slot = set.slots[static_cast<std::size_t>(obj.category)];
    if (conf > slot.score) slot = Detection{noisy, conf};
  }
  return set;
}

ClipRecord generate_clip(const ClipGenConfig& config) {
  const SceneConfig& sc = config.scene;
  sc.validate();
  config.detector.validate();
  if (config.nao_annotation_miss_prob < 0.0 || config.nao_annotation_miss_prob >= 1.0) {
    throw std::invalid_argument("ClipGenConfig: nao_annotation_miss_prob outside [0, 1)");
  }

  const int frames = sc.frame_count();
  const int contact = sc.action_start_index();
  const double crop = sc.crop_size;
  const double center = sc.arena_size / 2.0;
  const double hand_radius = crop / 12.8;

  Rng base(sc.seed);
  Rng layout_rng = base.substream("layout");
  Rng hand_rng = base.substream("hand");
  Rng cam_rng = base.substream("camera");
  Rng det_rng = base.substream("detector");
  Rng miss_rng = base.substream("miss");

  // --- layout ---------------------------------------------------------
  std::vector<int> cats(kNumCategories);
  std::iota(cats.begin(), cats.end(), 0);
  layout_rng.shuffle(cats);
  cats.resize(static_cast<std::size_t>(sc.num_objects));

  const int target_slot = static_cast<int>(layout_rng.below(static_cast<std::uint64_t>(sc.num_objects)));
  int previous_slot = -1;
  if (sc.num_objects > 1) {
    previous_slot = static_cast<int>(layout_rng.below(static_cast<std::uint64_t>(sc.num_objects - 1)));
    if (previous_slot >= target_slot) ++previous_slot;
  }

  const double target_band = std::max(2.0, crop * 3.0 / 16.0);
  const double other_band = std::max(4.0, crop * 3.0 / 8.0);

  struct ObjLayout {
    Vec2 pos;
    double w = 0, h = 0;
    int category = 0;
  };
  std::vector<ObjLayout> objects(static_cast<std::size_t>(sc.num_objects));
  for (int i = 0; i < sc.num_objects; ++i) {
    ObjLayout& o = objects[static_cast<std::size_t>(i)];
    o.category = cats[static_cast<std::size_t>(i)];
    o.w = layout_rng.uniform(0.2 * crop, 0.4 * crop);
    o.h = layout_rng.uniform(0.2 * crop, 0.4 * crop);
    const double band = (i == target_slot) ? target_band : other_band;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      o.pos.x = center + layout_rng.uniform(-band, band);
      o.pos.y = center + layout_rng.uniform(-band, band);
      placed = true;
      for (int j = 0; j < i; ++j) {
        const ObjLayout& other = objects[static_cast<std::size_t>(j)];
        if (rects_closer_than(o.pos, o.w, o.h, other.pos, other.w, other.h, 2.0)) {
          placed = false;
          break;
        }
      }
    }
    // After 200 rejections the last draw stands; overlap is tolerated.
  }
  const ObjLayout& target = objects[static_cast<std::size_t>(target_slot)];

  // --- hand script ------------------------------------------------------
  // Carry the "previous" object from its spot to a put-down point, then
  // reach for the target and stay in contact from the action start on.
  const Vec2 hand_start = previous_slot >= 0
                              ? objects[static_cast<std::size_t>(previous_slot)].pos
                              : Vec2{center + hand_rng.uniform(-other_band, other_band),
                                     center + hand_rng.uniform(-other_band, other_band)};
  Vec2 put_down{};
  for (int attempt = 0; attempt < 40; ++attempt) {
    put_down.x = center + hand_rng.uniform(-other_band, other_band);
    put_down.y = center + hand_rng.uniform(-other_band, other_band);
    const double dx = put_down.x - target.pos.x, dy = put_down.y - target.pos.y;
    if (std::sqrt(dx * dx + dy * dy) >= crop / 4.0) break;
  }
  const double reach_seconds = hand_rng.uniform(0.8, 1.8);
  int release = contact - static_cast<int>(std::lround(reach_seconds * sc.clip_fps));
  release = std::clamp(release, 1, contact - 1);

  const Vec2 contact_point = target.pos;
  const double settle_x = std::max(0.25, target.w / 2.0 - 0.5);
  const double settle_y = std::max(0.25, target.h / 2.0 - 0.5);

  std::vector<Vec2> hand_path(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    Vec2 p;
    const double jx = hand_rng.normal(0.0, 0.4);
    const double jy = hand_rng.normal(0.0, 0.4);
    if (t < release) {
      const double s = release > 1 ? static_cast<double>(t) / (release - 1) : 1.0;
      p = lerp(hand_start, put_down, s);
      p.x += jx;
      p.y += jy;
    } else if (t < contact) {
      const double s = static_cast<double>(t - release + 1) / (contact - release);
      p = lerp(put_down, contact_point, s);
      // Shrink jitter near contact so the approach stays smooth.
      p.x += jx * (1.0 - s * 0.5);
      p.y += jy * (1.0 - s * 0.5);
    } else {
      p = contact_point;
      p.x += std::clamp(jx, -settle_x, settle_x);
      p.y += std::clamp(jy, -settle_y, settle_y);
    }
    hand_path[static_cast<std::size_t>(t)] = p;
  }

  // --- camera: bounded random walk -------------------------------------
  const int corner0 = (sc.arena_size - sc.crop_size) / 2;
  const int walk_bound = std::min(sc.crop_size / 4, corner0);
  const int max_corner = sc.arena_size - sc.crop_size;
  const int drift = static_cast<int>(std::lround(sc.camera_drift));
  std::vector<std::pair<int, int>> camera(static_cast<std::size_t>(frames));
  int cx = corner0, cy = corner0;
  for (int t = 0; t < frames; ++t) {
    if (t > 0 && drift > 0) {
      cx += static_cast<int>(cam_rng.range(-drift, drift));
      cy += static_cast<int>(cam_rng.range(-drift, drift));
      cx = std::clamp(cx, std::max(0, corner0 - walk_bound), std::min(max_corner, corner0 + walk_bound));
      cy = std::clamp(cy, std::max(0, corner0 - walk_bound), std::min(max_corner, corner0 + walk_bound));
    }
    camera[static_cast<std::size_t>(t)] = {cx, cy};
  }

  const bool miss_event = miss_rng.uniform() < config.nao_annotation_miss_prob;
  const int miss_until = contact + config.nao_lookup_hint + 2;

  // --- per-frame assembly ----------------------------------------------
  ClipRecord clip;
  clip.fps = sc.clip_fps;
  clip.native_width = sc.crop_size;
  clip.native_height = sc.crop_size;
  clip.action_start_index = contact;
  clip.target_category = target.category;
  clip.seed = sc.seed;
  clip.frames.reserve(static_cast<std::size_t>(frames));
  clip.truth.reserve(static_cast<std::size_t>(frames));
  clip.annotations.reserve(static_cast<std::size_t>(frames));

  for (int t = 0; t < frames; ++t) {
    const auto [cam_x, cam_y] = camera[static_cast<std::size_t>(t)];
    const Vec2 hand = hand_path[static_cast<std::size_t>(t)];
    const bool carrying = previous_slot >= 0 && t < release;
    const bool in_contact = t >= contact;

    SceneState state;
    state.crop_size = sc.crop_size;
    state.camera_x = cam_x;
    state.camera_y = cam_y;
    for (int i = 0; i < sc.num_objects; ++i) {
      const ObjLayout& o = objects[static_cast<std::size_t>(i)];
      Vec2 pos = o.pos;
      if (i == previous_slot) pos = (t < release) ? hand : put_down;
      state.objects.push_back(SceneState::Obj{pos.x, pos.y, o.w, o.h, o.category});
    }
    state.hand_present = true;
    state.hand_x = hand.x;
    state.hand_y = hand.y;
    state.hand_radius = hand_radius;

    clip.frames.push_back(render_frame(state));

    FrameTruth truth;
    truth.frame_index = t;
    const Box hand_world{hand.x - cam_x, hand.y - cam_y, 2.0 * hand_radius, 2.0 * hand_radius};
    const Box hand_view = clamp_box(hand_world, crop, crop);
    if (!hand_view.empty()) truth.hand = hand_view;
    truth.hand_contact = carrying || in_contact;
    for (int i = 0; i < sc.num_objects; ++i) {
      const SceneState::Obj& o = state.objects[static_cast<std::size_t>(i)];
      const Box view = clamp_box(Box{o.x - cam_x, o.y - cam_y, o.w, o.h}, crop, crop);
      if (view.empty()) continue;
      const bool active = (i == previous_slot && carrying) || (i == target_slot && in_contact);
      truth.objects.push_back(ObjectTruth{o.category, view, active});
    }

    AnnotationRecord rec;
    rec.frame_index = t;
    if (truth.hand) {
      rec.hands.push_back(HandAnnotation{*truth.hand, 0.99, "right", truth.hand_contact});
    }
    const DetectionSet dets = oracle_detect(truth, config.detector, det_rng, kNumCategories);
    for (int c = 0; c < kNumCategories; ++c) {
      const Detection& d = dets.slots[static_cast<std::size_t>(c)];
      if (!d.empty()) rec.objects.push_back(ObjectAnnotation{c, d.box, d.score});
    }
    for (const ObjectTruth& obj : truth.objects) {
      if (!obj.active) continue;
      const bool suppressed = miss_event && obj.category == target.category && t >= contact && t < miss_until;
      if (!suppressed) rec.active_objects.push_back(ActiveObjectAnnotation{obj.box, obj.category});
    }

    clip.truth.push_back(std::move(truth));
    clip.annotations.push_back(std::move(rec));
  }

  return clip;
}

std::filesystem::path clip_frame_path(const std::filesystem::path& dir, int frame_index) {
  return dir / ("frame_" + std::to_string(frame_index) + ".ppm");
}

void write_clip_dir(const std::filesystem::path& dir, const ClipRecord& clip) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    write_ppm(clip_frame_path(dir, static_cast<int>(t)), clip.frames[t]);
  }
  nlohmann::json meta;
  meta["fps"] = clip.fps;
  meta["native_size"] = {clip.native_width, clip.native_height};
  meta["action_start_index"] = clip.action_start_index;
  meta["target_category"] = clip.target_category;
  meta["seed"] = clip.seed;
  std::ofstream out(dir / "meta.json", std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_clip_dir: cannot write meta.json in " + dir.string());
  out << meta.dump() << '\n';
  write_annotations_jsonl(dir / "annotations.jsonl", clip.annotations);
}

ClipMeta read_clip_meta(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json", std::ios::binary);
  if (!in) throw DataError("read_clip_meta: cannot open " + (dir / "meta.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_clip_meta: parse error: " + std::string(e.what()));
  }
  ClipMeta meta;
  try {
    meta.fps = j.at("fps").get<double>();
    meta.native_width = j.at("native_size").at(0).get<int>();
    meta.native_height = j.at("native_size").at(1).get<int>();
    meta.action_start_index = j.at("action_start_index").get<int>();
    meta.target_category = j.at("target_category").get<int>();
    meta.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_clip_meta: schema error: " + std::string(e.what()));
  }
  return meta;
}

}  // namespace anacto
