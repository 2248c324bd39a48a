#include "anacto/boxes.hpp"

#include <algorithm>

namespace anacto {

Box clamp_box(const Box& b, double width, double height) {
  if (b.empty()) return Box::sentinel();
  const double x0 = std::max(0.0, b.x - b.w / 2.0);
  const double y0 = std::max(0.0, b.y - b.h / 2.0);
  const double x1 = std::min(width, b.x + b.w / 2.0);
  const double y1 = std::min(height, b.y + b.h / 2.0);
  if (!(x1 > x0) || !(y1 > y0)) return Box::sentinel();
  return Box{(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
}

}  // namespace anacto
