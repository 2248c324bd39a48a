#include "anacto/image.hpp"

#include <fstream>
#include <string>

#include "anacto/errors.hpp"

namespace anacto {

Raster::Raster(int w, int h, std::array<std::uint8_t, 3> fill)
    : width(w), height(h), rgb(static_cast<std::size_t>(3) * w * h) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill[0];
    rgb[i + 1] = fill[1];
    rgb[i + 2] = fill[2];
  }
}

Raster resize_nearest(const Raster& src, int width, int height) {
  if (src.width <= 0 || src.height <= 0) throw DataError("resize_nearest: empty source raster");
  Raster out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(src.height - 1, y * src.height / height);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(src.width - 1, x * src.width / width);
      const auto* s = src.px(sx, sy);
      auto* d = out.px(x, y);
      d[0] = s[0];
      d[1] = s[1];
      d[2] = s[2];
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Raster& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_ppm: cannot open " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw DataError("write_ppm: write failed for " + path.string());
}

namespace {

int read_pnm_int(std::istream& in, const std::filesystem::path& path) {
  // Skips whitespace and '#' comments, as the format allows.
  int c = in.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
    }
    c = in.get();
  }
  int value = 0;
  bool any = false;
  while (std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw DataError("read_ppm: malformed header in " + path.string());
  return value;
}

}  // namespace

Raster read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_ppm: cannot open " + path.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw DataError("read_ppm: not a binary PPM: " + path.string());
  const int w = read_pnm_int(in, path);
  const int h = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (maxval != 255) throw DataError("read_ppm: unsupported maxval in " + path.string());
  Raster img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw DataError("read_ppm: truncated pixel data in " + path.string());
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayRaster& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_pgm: cannot open " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pix.data()), static_cast<std::streamsize>(img.pix.size()));
  if (!out) throw DataError("write_pgm: write failed for " + path.string());
}

}  // namespace anacto
