#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "anacto/errors.hpp"
#include "anacto/pipeline.hpp"
#include "anacto/rng.hpp"

using namespace anacto;

namespace {

AnnotationRecord make_record(int frame, Box hand_box, bool contact) {
  AnnotationRecord rec;
  rec.frame_index = frame;
  rec.hands.push_back(HandAnnotation{hand_box, 0.9, "right", contact});
  return rec;
}

}  // namespace

TEST_CASE("normalize_fps is the identity when rates match") {
  std::vector<AnnotationRecord> records;
  records.push_back(make_record(0, Box{10, 5, 4, 4}, false));
  records.push_back(make_record(1, Box{12, 5, 4, 4}, true));
  const auto out = normalize_fps(records, 30.0, 30.0);
  REQUIRE(out.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(annotation_to_json(out[i]) == annotation_to_json(records[i]));
  }
}

TEST_CASE("normalize_fps 15->30 inserts the linear midpoint") {
  std::vector<AnnotationRecord> records;
  records.push_back(make_record(0, Box{10, 7, 4, 4}, false));
  records.push_back(make_record(1, Box{20, 7, 4, 4}, false));
  const auto out = normalize_fps(records, 15.0, 30.0);
  REQUIRE(out.size() == 3);
  CHECK(out[0].hands[0].box.x == doctest::Approx(10.0));
  CHECK(out[1].hands[0].box.x == doctest::Approx(15.0));
  CHECK(out[2].hands[0].box.x == doctest::Approx(20.0));
  CHECK(out[0].frame_index == 0);
  CHECK(out[1].frame_index == 1);
  CHECK(out[2].frame_index == 2);
}

TEST_CASE("boolean fields copy from the nearest source frame") {
  // Contact true only at source frame 1 (of 0,1,2 at 10fps). At 30fps the
  // outputs nearest to source frame 1 carry it: u in (0.5, 1.5].
  std::vector<AnnotationRecord> records;
  records.push_back(make_record(0, Box{10, 7, 4, 4}, false));
  records.push_back(make_record(1, Box{20, 7, 4, 4}, true));
  records.push_back(make_record(2, Box{30, 7, 4, 4}, false));
  const auto out = normalize_fps(records, 10.0, 30.0);
  REQUIRE(out.size() == 7);
  // source position of output k is k/3
  const bool expect[7] = {false, false, true, true, true, false, false};
  for (int k = 0; k < 7; ++k) {
    CAPTURE(k);
    CHECK(out[static_cast<std::size_t>(k)].hands[0].contact_state == expect[k]);
  }
}

TEST_CASE("normalize_fps round trip recovers box tracks on matching grids") {
  Rng rng(9);
  std::vector<AnnotationRecord> records;
  for (int f = 0; f < 12; ++f) {
    AnnotationRecord rec;
    rec.frame_index = f;
    rec.hands.push_back(HandAnnotation{Box{rng.uniform(5, 25), rng.uniform(5, 25), 4, 4}, 0.9, "left",
                                       f % 3 == 0});
    rec.objects.push_back(ObjectAnnotation{2, Box{rng.uniform(5, 25), rng.uniform(5, 25), 6, 6}, 0.8});
    rec.active_objects.push_back(ActiveObjectAnnotation{Box{rng.uniform(5, 25), 10, 3, 3}, 2});
    records.push_back(std::move(rec));
  }
  const auto up = normalize_fps(records, 15.0, 30.0);
  const auto back = normalize_fps(up, 30.0, 15.0);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(std::abs(back[i].hands[0].box.x - records[i].hands[0].box.x) < 1e-9);
    CHECK(std::abs(back[i].hands[0].box.y - records[i].hands[0].box.y) < 1e-9);
    CHECK(std::abs(back[i].objects[0].box.x - records[i].objects[0].box.x) < 1e-9);
    CHECK(std::abs(back[i].active_objects[0].box.x - records[i].active_objects[0].box.x) < 1e-9);
  }
}

TEST_CASE("normalize_fps rejects an empty stream") {
  CHECK_THROWS_AS(normalize_fps({}, 30.0, 30.0), DataError);
}

namespace {

std::vector<AnnotationRecord> curation_stream(int first_active_frame) {
  std::vector<AnnotationRecord> records;
  for (int f = 90; f < 120; ++f) {
    AnnotationRecord rec;
    rec.frame_index = f;
    if (f >= first_active_frame) {
      rec.active_objects.push_back(ActiveObjectAnnotation{Box{double(f), 10, 4, 4}, 3});
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

TEST_CASE("curate_nao_gt picks the first active frame in the window") {
  const int tau_s = 100;
  SUBCASE("active at tau_s") {
    const auto gt = curate_nao_gt(curation_stream(tau_s), tau_s, 10);
    REQUIRE(gt.has_value());
    CHECK(gt->boxes[0].x == doctest::Approx(100.0));
    CHECK(gt->valid[0]);
    CHECK_FALSE(gt->valid[1]);
  }
  SUBCASE("first active at tau_s + 9 is inside") {
    const auto gt = curate_nao_gt(curation_stream(tau_s + 9), tau_s, 10);
    REQUIRE(gt.has_value());
    CHECK(gt->boxes[0].x == doctest::Approx(109.0));
  }
  SUBCASE("first active at tau_s + 10 is outside") {
    const auto gt = curate_nao_gt(curation_stream(tau_s + 10), tau_s, 10);
    CHECK_FALSE(gt.has_value());
  }
}

TEST_CASE("curate_nao_gt never uses boxes outside the window") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const int first = 95 + static_cast<int>(rng.below(30));
    const auto gt = curate_nao_gt(curation_stream(first), 100, 10);
    if (gt.has_value()) {
      CHECK(gt->boxes[0].x >= 100.0);
      CHECK(gt->boxes[0].x < 110.0);
    } else {
      CHECK(first >= 110);
    }
  }
}

TEST_CASE("curate_nao_gt requires window coverage") {
  auto records = curation_stream(100);
  CHECK_THROWS_AS(curate_nao_gt(records, 115, 10), DataError);
}

TEST_CASE("sample_frames reproduces the integer-stride example") {
  const ClipWindows w = sample_frames(8.0, 100, 0.5, 10);
  const std::vector<int> expect{60, 64, 68, 72, 76, 80, 84, 88, 92, 96};
  CHECK(w.sampled_indices == expect);
  CHECK(w.tau_o == doctest::Approx(5.0));
}

TEST_CASE("sample_frames rounds the non-integer stride as specified") {
  const ClipWindows w = sample_frames(30.0, 300, 0.25, 10);
  const std::vector<int> expect{225, 233, 240, 248, 255, 263, 270, 278, 285, 293};
  CHECK(w.sampled_indices == expect);
}

TEST_CASE("observed length scales with anticipation time") {
  const ClipWindows a = sample_frames(30.0, 400, 1.0, 10);
  const ClipWindows b = sample_frames(30.0, 400, 0.25, 10);
  CHECK(a.tau_o == doctest::Approx(10.0));
  CHECK(b.tau_o == doctest::Approx(2.5));
  CHECK(a.sampled_indices.back() == 400 - 30);
  CHECK(b.sampled_indices.back() == 393);  // round(400 - 7.5), halves away from zero
}

TEST_CASE("sample_frames errors on insufficient history unless clamping is chosen") {
  CHECK_THROWS_AS(sample_frames(8.0, 30, 0.5, 10), DataError);
  CHECK_THROWS_AS(sample_frames(8.0, 30, 0.5, 10, false), DataError);
  // fps too low relative to tau_a: indices would repeat
  CHECK_THROWS_AS(sample_frames(1.0, 100, 0.25, 10), DataError);
}

TEST_CASE("sample_frames is deterministic and strictly increasing") {
  const ClipWindows a = sample_frames(24.0, 500, 0.4, 10);
  const ClipWindows b = sample_frames(24.0, 500, 0.4, 10);
  CHECK(a.sampled_indices == b.sampled_indices);
  for (std::size_t i = 1; i < a.sampled_indices.size(); ++i) {
    CHECK(a.sampled_indices[i] > a.sampled_indices[i - 1]);
  }
}

TEST_CASE("rescale_box applies per-axis ratios") {
  SUBCASE("identity") {
    const Box b{10, 20, 5, 6};
    CHECK(rescale_box(b, {100, 50}, {100, 50}) == b);
  }
  SUBCASE("worked 1920x1080 -> 224x224 example") {
    const Box b{960, 540, 192, 108};
    const Box r = rescale_box(b, {1920, 1080}, {224, 224});
    CHECK(r.x == doctest::Approx(112.0));
    CHECK(r.y == doctest::Approx(112.0));
    CHECK(r.w == doctest::Approx(22.4));
    CHECK(r.h == doctest::Approx(22.4));
  }
  SUBCASE("sentinel preserved") {
    CHECK(rescale_box(Box::sentinel(), {100, 100}, {32, 32}) == Box::sentinel());
  }
  SUBCASE("round trip within 1e-9") {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
      const Box b{rng.uniform(0, 1000), rng.uniform(0, 600), rng.uniform(1, 300), rng.uniform(1, 200)};
      const Box r = rescale_box(rescale_box(b, {1920, 1080}, {224, 224}), {224, 224}, {1920, 1080});
      CHECK(std::abs(r.x - b.x) < 1e-9);
      CHECK(std::abs(r.y - b.y) < 1e-9);
      CHECK(std::abs(r.w - b.w) < 1e-9);
      CHECK(std::abs(r.h - b.h) < 1e-9);
    }
  }
  SUBCASE("bad sizes rejected") {
    CHECK_THROWS_AS(rescale_box(Box{1, 1, 1, 1}, {0, 10}, {5, 5}), std::invalid_argument);
  }
}

TEST_CASE("threshold_detections keeps the boundary score") {
  DetectionSet dets(4);
  dets.slots[0] = Detection{Box{5, 5, 2, 2}, 0.9};
  dets.slots[1] = Detection{Box{6, 6, 2, 2}, 0.5};
  dets.slots[2] = Detection{Box{7, 7, 2, 2}, 0.4};
  dets.slots[3] = Detection{Box{8, 8, 2, 2}, 0.6};

  const DetectionSet out = threshold_detections(dets, 0.5);
  CHECK_FALSE(out.slots[0].empty());
  CHECK_FALSE(out.slots[1].empty());  // >= semantics at the boundary
  CHECK(out.slots[2].empty());
  CHECK_FALSE(out.slots[3].empty());

  DetectionSet high(1);
  high.slots[0] = Detection{Box{5, 5, 2, 2}, 0.9};
  const DetectionSet unchanged = threshold_detections(high, 0.5);
  CHECK(unchanged.slots[0].box == high.slots[0].box);
  CHECK(unchanged.slots[0].score == high.slots[0].score);
}

TEST_CASE("record_to_detections keeps the best entry per category") {
  AnnotationRecord rec;
  rec.objects.push_back(ObjectAnnotation{1, Box{5, 5, 2, 2}, 0.6});
  rec.objects.push_back(ObjectAnnotation{1, Box{9, 9, 2, 2}, 0.8});
  const DetectionSet dets = record_to_detections(rec, 4);
  CHECK(dets.slots[1].score == doctest::Approx(0.8));
  CHECK(dets.slots[1].box.x == doctest::Approx(9.0));
  CHECK_THROWS_AS(record_to_detections([] {
    AnnotationRecord bad;
    bad.objects.push_back(ObjectAnnotation{9, Box{1, 1, 1, 1}, 0.5});
    return bad;
  }(), 8), DataError);
}
