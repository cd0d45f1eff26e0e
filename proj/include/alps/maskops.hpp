#pragma once

// Instance-map decomposition, instance proportion and the area filtering gate.

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "alps/error.hpp"
#include "alps/raster.hpp"

namespace alps {

struct BoundingBox {
  std::uint32_t x0 = 0;
  std::uint32_t y0 = 0;
  std::uint32_t x1 = 0;  // inclusive
  std::uint32_t y1 = 0;  // inclusive

  std::uint32_t width() const { return x1 - x0 + 1; }
  std::uint32_t height() const { return y1 - y0 + 1; }
  bool operator==(const BoundingBox&) const = default;
};

/// One instance's boolean raster. Bits are stored cropped to the tight
/// bounding box; the logical extent is always width x height.
class BinaryMask {
 public:
  BinaryMask() = default;

  /// Builds from a full-size raster where non-zero means instance pixel.
  static BinaryMask from_raster(std::uint16_t instance_id, std::uint32_t width, std::uint32_t height,
                                std::span<const std::uint8_t> bits) {
    if (bits.size() != std::size_t{width} * height) throw Error(Errc::size_mismatch, "mask bits vs dimensions");
    BinaryMask m;
    m.id_ = instance_id;
    m.width_ = width;
    m.height_ = height;
    BoundingBox box{width, height, 0, 0};
    for (std::uint32_t y = 0; y < height; ++y)
      for (std::uint32_t x = 0; x < width; ++x)
        if (bits[std::size_t{y} * width + x]) {
          box.x0 = std::min(box.x0, x);
          box.y0 = std::min(box.y0, y);
          box.x1 = std::max(box.x1, x);
          box.y1 = std::max(box.y1, y);
        }
    if (box.x0 > box.x1) return m;
    m.bbox_ = box;
    m.crop_.assign(std::size_t{box.width()} * box.height(), 0);
    for (std::uint32_t y = box.y0; y <= box.y1; ++y)
      for (std::uint32_t x = box.x0; x <= box.x1; ++x)
        if (bits[std::size_t{y} * width + x]) m.set_local(x - box.x0, y - box.y0);
    return m;
  }

  static BinaryMask from_raster(std::uint16_t instance_id, const Raster<std::uint8_t>& r) {
    return from_raster(instance_id, r.width, r.height, r.pixels);
  }

  std::uint16_t instance_id() const { return id_; }
  std::uint32_t width() const { return width_; }
  std::uint32_t height() const { return height_; }
  std::uint64_t pixel_count() const { return count_; }
  bool empty() const { return count_ == 0; }
  /// Meaningless when empty().
  const BoundingBox& bbox() const { return bbox_; }

  bool contains(std::uint32_t x, std::uint32_t y) const {
    if (empty() || x < bbox_.x0 || x > bbox_.x1 || y < bbox_.y0 || y > bbox_.y1) return false;
    return crop_[std::size_t{y - bbox_.y0} * bbox_.width() + (x - bbox_.x0)] != 0;
  }

  /// Visits instance pixels in row-major order.
  template <class Fn>
  void for_each_pixel(Fn&& fn) const {
    if (empty()) return;
    const auto bw = bbox_.width();
    for (std::uint32_t y = bbox_.y0; y <= bbox_.y1; ++y) {
      const auto* row = crop_.data() + std::size_t{y - bbox_.y0} * bw;
      for (std::uint32_t i = 0; i < bw; ++i)
        if (row[i]) fn(bbox_.x0 + i, y);
    }
  }

  /// 1 = instance, 0 = background.
  Raster<std::uint8_t> to_raster() const {
    Raster<std::uint8_t> r(width_, height_, 0);
    for_each_pixel([&](std::uint32_t x, std::uint32_t y) { r.at(x, y) = 1; });
    return r;
  }

  /// Export encoding: 0 = instance, 255 = background.
  Raster<std::uint8_t> to_export_raster() const {
    Raster<std::uint8_t> r(width_, height_, 255);
    for_each_pixel([&](std::uint32_t x, std::uint32_t y) { r.at(x, y) = 0; });
    return r;
  }

  bool operator==(const BinaryMask& o) const {
    return id_ == o.id_ && width_ == o.width_ && height_ == o.height_ && count_ == o.count_ &&
           (empty() || (bbox_ == o.bbox_ && crop_ == o.crop_));
  }

 private:
  friend std::vector<BinaryMask> decompose(const InstanceMap& map);

  void set_local(std::uint32_t lx, std::uint32_t ly) {
    auto& b = crop_[std::size_t{ly} * bbox_.width() + lx];
    if (!b) {
      b = 1;
      ++count_;
    }
  }

  std::uint16_t id_ = 0;
  std::uint32_t width_ = 0;
  std::uint32_t height_ = 0;
  std::uint64_t count_ = 0;
  BoundingBox bbox_;
  std::vector<std::uint8_t> crop_;
};

/// One mask per identifier 1..M, ascending.
inline std::vector<BinaryMask> decompose(const InstanceMap& map) {
  std::uint16_t m = 0;
  for (auto id : map.pixels) m = std::max(m, id);
  std::vector<BoundingBox> boxes(std::size_t{m} + 1, BoundingBox{map.width, map.height, 0, 0});
  for (std::uint32_t y = 0; y < map.height; ++y)
    for (std::uint32_t x = 0; x < map.width; ++x) {
      auto id = map.at(x, y);
      if (id == 0) continue;
      auto& b = boxes[id];
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x);
      b.y1 = std::max(b.y1, y);
    }

  std::vector<BinaryMask> masks(m);
  for (std::uint16_t id = 1; id <= m && id != 0; ++id) {
    auto& mask = masks[id - 1];
    mask.id_ = id;
    mask.width_ = map.width;
    mask.height_ = map.height;
    if (boxes[id].x0 > boxes[id].x1) continue;
    mask.bbox_ = boxes[id];
    mask.crop_.assign(std::size_t{boxes[id].width()} * boxes[id].height(), 0);
  }
  for (std::uint32_t y = 0; y < map.height; ++y)
    for (std::uint32_t x = 0; x < map.width; ++x) {
      auto id = map.at(x, y);
      if (id == 0) continue;
      auto& mask = masks[id - 1];
      mask.set_local(x - mask.bbox_.x0, y - mask.bbox_.y0);
    }
  // Identifiers absent from the map (only possible for unvalidated input) yield no mask.
  std::erase_if(masks, [](const BinaryMask& mk) { return mk.empty(); });
  return masks;
}

/// Fraction of the mask's extent occupied by the instance.
inline double instance_proportion(const BinaryMask& m) {
  const auto area = std::uint64_t{m.width()} * m.height();
  if (area == 0) return 0.0;
  return static_cast<double>(m.pixel_count()) / static_cast<double>(area);
}

struct FilterConfig {
  double sigma = 0.3;

  void validate() const {
    if (!(sigma >= 0.0 && sigma <= 1.0)) throw Error(Errc::invalid_config, "sigma must lie in [0, 1]");
  }
};

enum class GateDecision { keep, discard };

/// Keeps masks whose instance proportion is at most sigma (inclusive).
inline GateDecision filter_gate(const BinaryMask& m, const FilterConfig& cfg) {
  return instance_proportion(m) <= cfg.sigma ? GateDecision::keep : GateDecision::discard;
}

namespace detail {

// Nearest source index for half-pixel centers: src = (dst + 0.5) * in / out - 0.5,
// rounded half down, clamped. Evaluated in exact integer arithmetic.
inline std::uint32_t nearest_source_index(std::uint32_t dst, std::uint32_t in, std::uint32_t out) {
  const std::int64_t num = (2 * std::int64_t{dst} + 1) * in - 2 * std::int64_t{out};
  const std::int64_t den = 2 * std::int64_t{out};
  std::int64_t q = num / den;
  if (num % den != 0 && num > 0) ++q;  // ceil
  return static_cast<std::uint32_t>(std::clamp<std::int64_t>(q, 0, std::int64_t{in} - 1));
}

}  // namespace detail

/// Nearest-neighbor resampling. A non-empty mask can come back empty.
inline BinaryMask resize_mask(const BinaryMask& m, std::uint32_t out_w, std::uint32_t out_h) {
  if (out_w == 0 || out_h == 0) throw Error(Errc::bad_shape, "resize target must be at least 1x1");
  if (out_w == m.width() && out_h == m.height()) return m;
  Raster<std::uint8_t> bits(out_w, out_h, 0);
  if (!m.empty()) {
    const auto& box = m.bbox();
    std::vector<std::uint32_t> xs(out_w), ys(out_h);
    for (std::uint32_t x = 0; x < out_w; ++x) xs[x] = detail::nearest_source_index(x, m.width(), out_w);
    for (std::uint32_t y = 0; y < out_h; ++y) ys[y] = detail::nearest_source_index(y, m.height(), out_h);
    for (std::uint32_t y = 0; y < out_h; ++y) {
      if (ys[y] < box.y0 || ys[y] > box.y1) continue;
      for (std::uint32_t x = 0; x < out_w; ++x)
        if (m.contains(xs[x], ys[y])) bits.at(x, y) = 1;
    }
  }
  return BinaryMask::from_raster(m.instance_id(), bits);
}

}  // namespace alps
