#pragma once

// Feature alignment: bilinear upsampling of encoder feature maps and masked
// mean pooling into one pseudo-feature label (PFL) per surviving mask.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alps/error.hpp"
#include "alps/instance_map.hpp"
#include "alps/manifest.hpp"
#include "alps/maskops.hpp"
#include "alps/parallel.hpp"
#include "alps/tensor.hpp"

#include <spdlog/spdlog.h>

namespace alps {

inline constexpr std::uint32_t kFeatureChannels = 256;
inline constexpr std::uint32_t kMaskGrid = 256;

/// Channels-first float32 tensor (C, H, W).
struct FeatureMap {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(std::uint32_t c, std::uint32_t h, std::uint32_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(std::size_t{c} * h * w, fill) {}

  std::size_t plane_size() const { return std::size_t{height} * width; }
  float& at(std::uint32_t c, std::uint32_t y, std::uint32_t x) {
    return data[c * plane_size() + std::size_t{y} * width + x];
  }
  float at(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
    return data[c * plane_size() + std::size_t{y} * width + x];
  }
  const float* plane(std::uint32_t c) const { return data.data() + c * plane_size(); }
  float* plane(std::uint32_t c) { return data.data() + c * plane_size(); }

  bool operator==(const FeatureMap&) const = default;
};

/// The upsampled map lives on the mask grid; same layout as FeatureMap.
using AlignedFeatureMap = FeatureMap;

inline void check_finite(const FeatureMap& f) {
  for (float v : f.data)
    if (!std::isfinite(v)) throw Error(Errc::non_finite, "feature map contains NaN or Inf");
}

inline FeatureMap feature_map_from_tensor(const Tensor& t) {
  if (t.dtype != DType::f32 || t.dims.size() != 3) throw Error(Errc::bad_shape, "expected rank-3 float32 feature map");
  FeatureMap f;
  f.channels = static_cast<std::uint32_t>(t.dims[0]);
  f.height = static_cast<std::uint32_t>(t.dims[1]);
  f.width = static_cast<std::uint32_t>(t.dims[2]);
  f.data = t.values<float>();
  return f;
}

inline Tensor feature_map_to_tensor(const FeatureMap& f) {
  return Tensor::from<float>({f.channels, f.height, f.width}, f.data);
}

namespace detail {

struct LerpTap {
  std::uint32_t lo = 0;
  std::uint32_t hi = 0;
  double frac = 0.0;
};

// Half-pixel centers, source coordinate clamped to [0, in - 1].
inline std::vector<LerpTap> lerp_taps(std::uint32_t in, std::uint32_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::uint32_t d = 0; d < out; ++d) {
    double s = std::clamp((d + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
    auto lo = static_cast<std::uint32_t>(s);
    taps[d] = {lo, std::min(lo + 1, in - 1), s - lo};
  }
  return taps;
}

}  // namespace detail

/// Per-channel bilinear interpolation onto an out_h x out_w grid. Computed
/// separably in double precision: rows first, then columns.
inline AlignedFeatureMap bilinear_upsample(const FeatureMap& f, std::uint32_t out_h = kMaskGrid,
                                           std::uint32_t out_w = kMaskGrid) {
  if (f.channels == 0 || f.height == 0 || f.width == 0 || f.data.size() != f.channels * f.plane_size())
    throw Error(Errc::bad_shape, "feature map has no data");
  if (out_h == 0 || out_w == 0) throw Error(Errc::bad_shape, "upsample target must be at least 1x1");
  check_finite(f);

  const auto xt = detail::lerp_taps(f.width, out_w);
  const auto yt = detail::lerp_taps(f.height, out_h);
  AlignedFeatureMap out(f.channels, out_h, out_w);
  std::vector<double> rows(std::size_t{f.height} * out_w);
  for (std::uint32_t c = 0; c < f.channels; ++c) {
    const float* src = f.plane(c);
    for (std::uint32_t y = 0; y < f.height; ++y) {
      const float* s = src + std::size_t{y} * f.width;
      double* r = rows.data() + std::size_t{y} * out_w;
      for (std::uint32_t x = 0; x < out_w; ++x) {
        const auto& t = xt[x];
        r[x] = (1.0 - t.frac) * s[t.lo] + t.frac * s[t.hi];
      }
    }
    float* dst = out.plane(c);
    for (std::uint32_t y = 0; y < out_h; ++y) {
      const auto& t = yt[y];
      const double* a = rows.data() + std::size_t{t.lo} * out_w;
      const double* b = rows.data() + std::size_t{t.hi} * out_w;
      float* o = dst + std::size_t{y} * out_w;
      for (std::uint32_t x = 0; x < out_w; ++x) o[x] = static_cast<float>((1.0 - t.frac) * a[x] + t.frac * b[x]);
    }
  }
  return out;
}

struct PseudoFeatureLabel {
  std::vector<float> vector;
  std::string image_id;
  std::uint16_t instance_id = 0;
  std::uint64_t pixel_count_at_grid = 0;

  bool operator==(const PseudoFeatureLabel&) const = default;
};

/// Masked mean of the aligned map over the mask's instance pixels, one value
/// per channel. Pixels are summed in row-major order in double precision.
inline PseudoFeatureLabel extract_pfl(const AlignedFeatureMap& aligned, const BinaryMask& mask) {
  if (mask.empty()) throw Error(Errc::empty_mask, "instance " + std::to_string(mask.instance_id()));
  if (mask.width() != aligned.width || mask.height() != aligned.height)
    throw Error(Errc::size_mismatch, "mask grid does not match aligned feature map");
  PseudoFeatureLabel pfl;
  pfl.instance_id = mask.instance_id();
  pfl.pixel_count_at_grid = mask.pixel_count();
  pfl.vector.resize(aligned.channels);
  const double n = static_cast<double>(mask.pixel_count());
  for (std::uint32_t c = 0; c < aligned.channels; ++c) {
    const float* p = aligned.plane(c);
    double sum = 0.0;
    mask.for_each_pixel([&](std::uint32_t x, std::uint32_t y) { sum += p[std::size_t{y} * aligned.width + x]; });
    pfl.vector[c] = static_cast<float>(sum / n);
  }
  return pfl;
}

inline void l2_normalize(std::vector<float>& v) {
  double ss = 0.0;
  for (float x : v) ss += double{x} * x;
  if (ss <= 0.0) return;
  const double inv = 1.0 / std::sqrt(ss);
  for (float& x : v) x = static_cast<float>(x * inv);
}

struct ExtractConfig {
  FilterConfig filter;
  std::uint32_t grid = kMaskGrid;
  bool normalize = false;
  Rgb background{};  // only used for RGB-bitmap instance maps
};

/// Everything derived from one image: the masks that survive both the gate
/// and the resize to the grid, and their PFLs (parallel arrays).
struct ImageExtraction {
  std::string image_id;
  std::size_t masks_total = 0;
  std::size_t dropped_gate = 0;
  std::size_t dropped_empty = 0;
  std::vector<BinaryMask> kept;
  std::vector<PseudoFeatureLabel> pfls;
};

inline ImageExtraction extract_image(const ManifestEntry& entry, const ExtractConfig& cfg) {
  ImageExtraction out;
  out.image_id = entry.image_id;
  auto map = load_instance_map(entry.instance_map, cfg.background);
  if ((entry.source_width != 0 && entry.source_width != map.width) ||
      (entry.source_height != 0 && entry.source_height != map.height))
    throw Error(Errc::size_mismatch, entry.image_id + ": instance map size differs from manifest");

  auto masks = decompose(map);
  out.masks_total = masks.size();
  std::vector<BinaryMask> gridded;
  for (auto& m : masks) {
    if (filter_gate(m, cfg.filter) == GateDecision::discard) {
      ++out.dropped_gate;
      continue;
    }
    auto g = resize_mask(m, cfg.grid, cfg.grid);
    if (g.empty()) {
      ++out.dropped_empty;
      continue;
    }
    out.kept.push_back(std::move(m));
    gridded.push_back(std::move(g));
  }
  if (out.dropped_empty > 0)
    spdlog::debug("{}: {} masks vanished at {}x{}", entry.image_id, out.dropped_empty, cfg.grid, cfg.grid);
  if (gridded.empty()) return out;

  auto features = feature_map_from_tensor(read_tensor(entry.feature_map));
  auto aligned = bilinear_upsample(features, cfg.grid, cfg.grid);
  out.pfls.reserve(gridded.size());
  for (const auto& g : gridded) {
    auto pfl = extract_pfl(aligned, g);
    pfl.image_id = entry.image_id;
    if (cfg.normalize) l2_normalize(pfl.vector);
    out.pfls.push_back(std::move(pfl));
  }
  return out;
}

struct ImageFailure {
  std::string image_id;
  std::string message;
};

struct BatchExtraction {
  std::vector<PseudoFeatureLabel> pfls;  // ascending (image_id, instance_id)
  std::vector<ImageExtraction> images;   // successful images, masks and PFLs moved out
  std::vector<ImageFailure> failures;

  std::size_t error_count() const { return failures.size(); }
};

/// Runs extract_image over all entries. Failed images are reported and
/// skipped; results are merged in image_id order regardless of workers.
inline BatchExtraction extract_pfl_batch(std::span<const ManifestEntry> entries, const ExtractConfig& cfg,
                                         std::size_t workers = 1) {
  cfg.filter.validate();
  std::vector<const ManifestEntry*> sorted;
  for (const auto& e : entries) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });

  std::vector<std::optional<ImageExtraction>> results(sorted.size());
  std::vector<std::string> errors(sorted.size());
  parallel_for(sorted.size(), workers, [&](std::size_t i) {
    try {
      results[i] = extract_image(*sorted[i], cfg);
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });

  BatchExtraction out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (!results[i]) {
      spdlog::warn("{}: skipped ({})", sorted[i]->image_id, errors[i]);
      out.failures.push_back({sorted[i]->image_id, errors[i]});
      continue;
    }
    auto& r = *results[i];
    for (auto& p : r.pfls) out.pfls.push_back(std::move(p));
    r.pfls.clear();
    r.kept.clear();
    out.images.push_back(std::move(r));
  }
  return out;
}

}  // namespace alps
