#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace anacto {

// Axis-aligned box in center format (x_c, y_c, w, h). A box with
// non-positive width or height is the empty sentinel; the canonical
// sentinel is all-zero.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool empty() const { return !(w > 0.0) || !(h > 0.0); }
  static Box sentinel() { return Box{}; }

  bool operator==(const Box&) const = default;
};

// Intersects a box with [0, width] x [0, height]; empty boxes stay empty,
// fully outside boxes become the sentinel.
Box clamp_box(const Box& b, double width, double height);

// Two (x_c, y_c, w, h) slots plus a validity mask: the R^8 regression
// target/prediction, one active-object slot per hand. Invalid slots are
// all-zero.
struct BoxPair {
  std::array<Box, 2> boxes{};
  std::array<bool, 2> valid{false, false};

  bool any_valid() const { return valid[0] || valid[1]; }

  std::array<double, 8> flat() const {
    return {boxes[0].x, boxes[0].y, boxes[0].w, boxes[0].h,
            boxes[1].x, boxes[1].y, boxes[1].w, boxes[1].h};
  }

  static BoxPair single(const Box& b) {
    BoxPair p;
    p.boxes[0] = b;
    p.valid[0] = true;
    return p;
  }

  bool operator==(const BoxPair&) const = default;
};

// One detector slot per object category; empty slots carry a zero box and
// zero confidence.
struct Detection {
  Box box{};
  double score = 0.0;

  bool empty() const { return score <= 0.0 || box.empty(); }
};

struct DetectionSet {
  std::vector<Detection> slots;

  explicit DetectionSet(std::size_t num_categories = 0) : slots(num_categories) {}
  std::size_t num_categories() const { return slots.size(); }
};

}  // namespace anacto
