#pragma once

// Pseudo-label assembly: label assignment, raster composition, palettes and
// the on-disk dataset layout.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "alps/clustering.hpp"
#include "alps/error.hpp"
#include "alps/featalign.hpp"
#include "alps/manifest.hpp"
#include "alps/maskops.hpp"
#include "alps/parallel.hpp"
#include "alps/png_io.hpp"
#include "alps/raster.hpp"
#include "alps/rng.hpp"

#include <spdlog/spdlog.h>

namespace alps {

inline constexpr Rgb kIgnoreColor{255, 255, 255};
inline constexpr std::uint32_t kMaxClasses = 255;

/// Fixed 256-entry base table (bit-interleaved index -> RGB). Entries are
/// pairwise distinct and no channel exceeds 224, so white never appears.
inline constexpr std::array<Rgb, 256> base_color_table() {
  std::array<Rgb, 256> table{};
  for (unsigned i = 0; i < 256; ++i) {
    unsigned r = 0, g = 0, b = 0, c = i;
    for (int j = 0; j < 3; ++j) {
      r |= ((c >> 0) & 1u) << (7 - j);
      g |= ((c >> 1) & 1u) << (7 - j);
      b |= ((c >> 2) & 1u) << (7 - j);
      c >>= 3;
    }
    table[i] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
  }
  return table;
}

struct Palette {
  std::vector<Rgb> colors;  // index = class

  std::uint32_t size() const { return static_cast<std::uint32_t>(colors.size()); }
  bool operator==(const Palette&) const = default;
};

/// Seeded permutation of the base table, truncated to k entries.
inline Palette make_palette(std::uint32_t k, std::uint64_t seed) {
  if (k == 0 || k > kMaxClasses) throw Error(Errc::invalid_config, "palette size must lie in [1, 255]");
  auto table = base_color_table();
  Engine eng(derive_seed(seed, "palette"));
  stable_shuffle(std::span<Rgb>(table), eng);
  return Palette{std::vector<Rgb>(table.begin(), table.begin() + k)};
}

using LabelKey = std::pair<std::string, std::uint16_t>;  // (image_id, instance_id)

inline std::map<LabelKey, std::uint32_t> assign_labels(std::span<const PseudoFeatureLabel> pfls,
                                                       const ClusterModel& model) {
  std::map<LabelKey, std::uint32_t> out;
  for (const auto& p : pfls) out[{p.image_id, p.instance_id}] = predict(model, p.vector);
  return out;
}

/// Paints masks largest first (ties by ascending instance_id) so smaller
/// instances win overlaps. Unpainted pixels stay kIgnoreLabel.
inline LabelRaster compose_raster(std::span<const BinaryMask> masks,
                                  const std::map<std::uint16_t, std::uint32_t>& labels, std::uint32_t width,
                                  std::uint32_t height) {
  std::vector<const BinaryMask*> order;
  order.reserve(masks.size());
  for (const auto& m : masks) {
    if (m.width() != width || m.height() != height)
      throw Error(Errc::size_mismatch, "mask " + std::to_string(m.instance_id()) + " does not match raster size");
    order.push_back(&m);
  }
  std::sort(order.begin(), order.end(), [](const BinaryMask* a, const BinaryMask* b) {
    if (a->pixel_count() != b->pixel_count()) return a->pixel_count() > b->pixel_count();
    return a->instance_id() < b->instance_id();
  });

  LabelRaster raster(width, height, kIgnoreLabel);
  for (const auto* m : order) {
    auto it = labels.find(m->instance_id());
    if (it == labels.end()) throw Error(Errc::missing_label, "instance " + std::to_string(m->instance_id()));
    if (it->second >= kIgnoreLabel)
      throw Error(Errc::label_out_of_range, "class " + std::to_string(it->second) + " collides with ignore");
    const auto label = static_cast<std::uint8_t>(it->second);
    m->for_each_pixel([&](std::uint32_t x, std::uint32_t y) { raster.at(x, y) = label; });
  }
  return raster;
}

inline RgbRaster colorize(const LabelRaster& raster, const Palette& palette) {
  RgbRaster out(raster.width, raster.height);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    auto v = raster.pixels[i];
    if (v == kIgnoreLabel) out.pixels[i] = kIgnoreColor;
    else if (v < palette.size()) out.pixels[i] = palette.colors[v];
    else throw Error(Errc::label_out_of_range, "class " + std::to_string(v) + " has no palette entry");
  }
  return out;
}

/// Inverse of colorize.
inline LabelRaster decode_colors(const RgbRaster& rgb, const Palette& palette) {
  std::map<Rgb, std::uint8_t> inverse;
  for (std::uint32_t c = 0; c < palette.size(); ++c) inverse.emplace(palette.colors[c], static_cast<std::uint8_t>(c));
  LabelRaster out(rgb.width, rgb.height);
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    if (rgb.pixels[i] == kIgnoreColor) {
      out.pixels[i] = kIgnoreLabel;
      continue;
    }
    auto it = inverse.find(rgb.pixels[i]);
    if (it == inverse.end()) throw Error(Errc::label_out_of_range, "color not in palette");
    out.pixels[i] = it->second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset construction.

struct ImageStats {
  std::string image_id;
  Split split = Split::train;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint64_t masks_total = 0;
  std::uint64_t masks_kept = 0;
  std::uint64_t dropped_gate = 0;
  std::uint64_t dropped_empty = 0;
  std::uint64_t covered_pixels = 0;
  std::vector<std::uint64_t> histogram;  // pixels per class

  bool operator==(const ImageStats&) const = default;
};

/// Associative, commutative totals over ImageStats.
struct StatsTotals {
  std::uint64_t images = 0;
  std::uint64_t masks_total = 0;
  std::uint64_t masks_kept = 0;
  std::uint64_t dropped_gate = 0;
  std::uint64_t dropped_empty = 0;
  std::uint64_t covered_pixels = 0;
  std::vector<std::uint64_t> histogram;

  void add(const ImageStats& s) {
    ++images;
    masks_total += s.masks_total;
    masks_kept += s.masks_kept;
    dropped_gate += s.dropped_gate;
    dropped_empty += s.dropped_empty;
    covered_pixels += s.covered_pixels;
    if (histogram.size() < s.histogram.size()) histogram.resize(s.histogram.size(), 0);
    for (std::size_t i = 0; i < s.histogram.size(); ++i) histogram[i] += s.histogram[i];
  }

  void merge(const StatsTotals& o) {
    images += o.images;
    masks_total += o.masks_total;
    masks_kept += o.masks_kept;
    dropped_gate += o.dropped_gate;
    dropped_empty += o.dropped_empty;
    covered_pixels += o.covered_pixels;
    if (histogram.size() < o.histogram.size()) histogram.resize(o.histogram.size(), 0);
    for (std::size_t i = 0; i < o.histogram.size(); ++i) histogram[i] += o.histogram[i];
  }

  bool operator==(const StatsTotals&) const = default;
};

struct BuildConfig {
  ExtractConfig extract;
  std::uint64_t palette_seed = 0;
  std::size_t workers = 1;
};

struct BuildSummary {
  std::vector<ImageStats> images;  // ascending image_id
  std::vector<ImageFailure> failures;
  StatsTotals totals;
  Palette palette;
};

namespace detail {

inline std::string join_counts(std::span<const std::uint64_t> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(Errc::io, "write failed: " + path.string());
}

}  // namespace detail

inline std::string format_stats(const BuildSummary& s) {
  std::ostringstream os;
  os << "image_id\tsplit\twidth\theight\tmasks_total\tmasks_kept\tdropped_gate\tdropped_empty\tcovered_pixels\t"
        "class_histogram\n";
  for (const auto& r : s.images) {
    os << r.image_id << '\t' << split_name(r.split) << '\t' << r.width << '\t' << r.height << '\t' << r.masks_total
       << '\t' << r.masks_kept << '\t' << r.dropped_gate << '\t' << r.dropped_empty << '\t' << r.covered_pixels
       << '\t' << detail::join_counts(r.histogram) << '\n';
  }
  const auto& t = s.totals;
  os << "#total\t" << t.images << "\t-\t-\t" << t.masks_total << '\t' << t.masks_kept << '\t' << t.dropped_gate
     << '\t' << t.dropped_empty << '\t' << t.covered_pixels << '\t' << detail::join_counts(t.histogram) << '\n';
  os << "#failed\t" << s.failures.size() << '\n';
  return os.str();
}

inline std::string format_palette(const Palette& p) {
  std::ostringstream os;
  os << "class\tr\tg\tb\n";
  for (std::uint32_t c = 0; c < p.size(); ++c)
    os << c << '\t' << int{p.colors[c].r} << '\t' << int{p.colors[c].g} << '\t' << int{p.colors[c].b} << '\n';
  os << int{kIgnoreLabel} << '\t' << int{kIgnoreColor.r} << '\t' << int{kIgnoreColor.g} << '\t' << int{kIgnoreColor.b}
     << '\n';
  return os.str();
}

struct ImageLabels {
  ImageStats stats;
  LabelRaster labels;
};

/// Labels one image: extraction, nearest-center prediction and composition.
inline ImageLabels label_image(const ManifestEntry& entry, const ClusterModel& model, const ExtractConfig& cfg) {
  auto ex = extract_image(entry, cfg);
  std::map<std::uint16_t, std::uint32_t> labels;
  for (const auto& p : ex.pfls) labels[p.instance_id] = predict(model, p.vector);

  ImageLabels out;
  auto& st = out.stats;
  st.image_id = entry.image_id;
  st.split = entry.split;
  st.masks_total = ex.masks_total;
  st.masks_kept = ex.kept.size();
  st.dropped_gate = ex.dropped_gate;
  st.dropped_empty = ex.dropped_empty;
  st.histogram.assign(model.k, 0);

  // Dimensions come from the instance map when no mask survived.
  std::uint32_t w = entry.source_width, h = entry.source_height;
  if (!ex.kept.empty()) {
    w = ex.kept.front().width();
    h = ex.kept.front().height();
  } else if (w == 0 || h == 0) {
    auto map = load_instance_map(entry.instance_map, cfg.background);
    w = map.width;
    h = map.height;
  }
  st.width = w;
  st.height = h;
  out.labels = compose_raster(ex.kept, labels, w, h);
  for (auto v : out.labels.pixels)
    if (v != kIgnoreLabel) {
      ++st.covered_pixels;
      ++st.histogram[v];
    }
  return out;
}

/// Writes <root>/{train,val}/{labels,color}/<image_id>.png, stats.tsv and
/// palette.tsv. Failed images are logged, tallied and skipped.
inline BuildSummary build_dataset(const CorpusManifest& manifest, const ClusterModel& model, const BuildConfig& cfg,
                                  const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  cfg.extract.filter.validate();
  if (model.k > kMaxClasses) throw Error(Errc::invalid_config, "more classes than an 8-bit raster can hold");
  BuildSummary summary;
  summary.palette = make_palette(model.k, cfg.palette_seed);
  for (auto split : {Split::train, Split::val})
    for (auto kind : {"labels", "color"}) fs::create_directories(root / split_name(split) / kind);

  const auto& entries = manifest.entries;
  std::vector<std::optional<ImageStats>> stats(entries.size());
  std::vector<std::string> errors(entries.size());
  parallel_for(entries.size(), cfg.workers, [&](std::size_t i) {
    const auto& e = entries[i];
    try {
      auto result = label_image(e, model, cfg.extract);
      auto dir = root / split_name(e.split);
      write_png_gray(dir / "labels" / (e.image_id + ".png"), result.labels);
      write_png_rgb(dir / "color" / (e.image_id + ".png"), colorize(result.labels, summary.palette));
      stats[i] = std::move(result.stats);
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });

  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return entries[a].image_id < entries[b].image_id; });
  for (auto i : order) {
    if (!stats[i]) {
      spdlog::warn("{}: not labeled ({})", entries[i].image_id, errors[i]);
      summary.failures.push_back({entries[i].image_id, errors[i]});
      continue;
    }
    summary.totals.add(*stats[i]);
    summary.images.push_back(std::move(*stats[i]));
  }
  detail::write_text(root / "stats.tsv", format_stats(summary));
  detail::write_text(root / "palette.tsv", format_palette(summary.palette));
  return summary;
}

}  // namespace alps
