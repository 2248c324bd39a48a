#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace anacto {

// 8-bit RGB raster, row-major, channels interleaved.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Raster() = default;
  Raster(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0});

  std::uint8_t* px(int x, int y) { return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* px(int x, int y) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }

  bool operator==(const Raster&) const = default;
};

struct GrayRaster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pix;

  GrayRaster() = default;
  GrayRaster(int w, int h) : width(w), height(h), pix(static_cast<std::size_t>(w) * h, 0) {}
};

Raster resize_nearest(const Raster& src, int width, int height);

// Binary PPM (P6) / PGM (P5), maxval 255. Round trips are byte-exact.
void write_ppm(const std::filesystem::path& path, const Raster& img);
Raster read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayRaster& img);

}  // namespace anacto
