#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace alps {

template <class T>
struct Raster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<T> pixels;

  Raster() = default;
  Raster(std::uint32_t w, std::uint32_t h, T fill = T{}) : width(w), height(h), pixels(std::size_t{w} * h, fill) {}

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }

  T& at(std::uint32_t x, std::uint32_t y) { return pixels[std::size_t{y} * width + x]; }
  const T& at(std::uint32_t x, std::uint32_t y) const { return pixels[std::size_t{y} * width + x]; }

  bool operator==(const Raster&) const = default;
};

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  auto operator<=>(const Rgb&) const = default;
};

using RgbRaster = Raster<Rgb>;

/// Per-pixel instance identifiers: 0 = uncovered, 1..M = instances.
using InstanceMap = Raster<std::uint16_t>;

/// Per-pixel pseudo class labels in [0, N); kIgnoreLabel marks uncovered pixels.
using LabelRaster = Raster<std::uint8_t>;

inline constexpr std::uint8_t kIgnoreLabel = 255;

}  // namespace alps
