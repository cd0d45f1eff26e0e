#pragma once

// Synthetic corpora with known latent classes, for tests, benchmarks and
// demos. Instances are axis-aligned rectangles snapped to the feature grid;
// each latent class has a constant feature signature plus bounded noise.

#include <cmath>
#include <cstdio>
#include <limits>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "alps/error.hpp"
#include "alps/featalign.hpp"
#include "alps/instance_map.hpp"
#include "alps/manifest.hpp"
#include "alps/png_io.hpp"
#include "alps/raster.hpp"
#include "alps/rng.hpp"

namespace alps::synthetic {

struct CorpusConfig {
  std::uint32_t images = 200;
  std::uint32_t size = 256;  // native width = height
  std::uint32_t classes = 4;
  std::uint32_t channels = kFeatureChannels;
  std::uint32_t feature_size = 64;
  std::uint32_t slots = 4;        // slots per side, at most one instance each
  double fill = 0.75;             // probability that a slot holds an instance
  double amplitude = 1.0;         // signature value on the class's channels
  double noise_radius = 0.4;      // max L2 norm of per-cell feature noise
  std::uint64_t seed = 0;
  SplitRatio ratio{7, 3};
};

/// Class j is `amplitude` on channels c with c % classes == j, zero elsewhere.
inline std::vector<float> signature(std::uint32_t cls, const CorpusConfig& cfg) {
  std::vector<float> v(cfg.channels, 0.0f);
  for (std::uint32_t c = 0; c < cfg.channels; ++c)
    if (c % cfg.classes == cls) v[c] = static_cast<float>(cfg.amplitude);
  return v;
}

/// Smallest distance between two class signatures.
inline double signature_separation(const CorpusConfig& cfg) {
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t a = 0; a < cfg.classes; ++a)
    for (std::uint32_t b = a + 1; b < cfg.classes; ++b) {
      auto sa = signature(a, cfg), sb = signature(b, cfg);
      double d = 0.0;
      for (std::uint32_t c = 0; c < cfg.channels; ++c) d += (double{sa[c]} - sb[c]) * (double{sa[c]} - sb[c]);
      best = std::min(best, std::sqrt(d));
    }
  return best;
}

struct SyntheticImage {
  InstanceMap instances;
  FeatureMap features;
  LabelRaster ground_truth;               // latent class per instance pixel, 255 elsewhere
  std::vector<std::uint32_t> latent;      // latent[id - 1] = class of instance id
};

inline SyntheticImage make_image(const CorpusConfig& cfg, Engine& eng) {
  if (cfg.size % cfg.feature_size != 0 || cfg.size % cfg.slots != 0)
    throw Error(Errc::invalid_config, "size must be a multiple of feature_size and slots");
  const std::uint32_t cell = cfg.size / cfg.feature_size;
  const std::uint32_t slot = cfg.size / cfg.slots;
  const std::uint32_t margin = cell;
  if (slot < 4 * cell + 2 * margin) throw Error(Errc::invalid_config, "slots too small for the feature grid");

  SyntheticImage img;
  img.instances = InstanceMap(cfg.size, cfg.size, 0);
  img.ground_truth = LabelRaster(cfg.size, cfg.size, kIgnoreLabel);
  std::uint16_t next_id = 1;
  for (std::uint32_t sy = 0; sy < cfg.slots; ++sy)
    for (std::uint32_t sx = 0; sx < cfg.slots; ++sx) {
      if (uniform01(eng) >= cfg.fill) continue;
      // Sizes and offsets in whole feature cells, keeping a one-cell margin.
      const std::uint32_t max_cells = (slot - 2 * margin) / cell;
      const auto w = static_cast<std::uint32_t>(2 + uniform_index(eng, max_cells - 1)) * cell;
      const auto h = static_cast<std::uint32_t>(2 + uniform_index(eng, max_cells - 1)) * cell;
      const auto ox = sx * slot + margin + static_cast<std::uint32_t>(uniform_index(eng, (slot - 2 * margin - w) / cell + 1)) * cell;
      const auto oy = sy * slot + margin + static_cast<std::uint32_t>(uniform_index(eng, (slot - 2 * margin - h) / cell + 1)) * cell;
      const auto cls = static_cast<std::uint32_t>(uniform_index(eng, cfg.classes));
      for (std::uint32_t y = oy; y < oy + h; ++y)
        for (std::uint32_t x = ox; x < ox + w; ++x) {
          img.instances.at(x, y) = next_id;
          img.ground_truth.at(x, y) = static_cast<std::uint8_t>(cls);
        }
      img.latent.push_back(cls);
      ++next_id;
    }

  const double per_entry = cfg.noise_radius / std::sqrt(static_cast<double>(cfg.channels));
  img.features = FeatureMap(cfg.channels, cfg.feature_size, cfg.feature_size);
  std::vector<std::vector<float>> sigs;
  for (std::uint32_t j = 0; j < cfg.classes; ++j) sigs.push_back(signature(j, cfg));
  for (std::uint32_t fy = 0; fy < cfg.feature_size; ++fy)
    for (std::uint32_t fx = 0; fx < cfg.feature_size; ++fx) {
      const auto id = img.instances.at(fx * cell, fy * cell);
      for (std::uint32_t c = 0; c < cfg.channels; ++c) {
        const double base = id == 0 ? 0.0 : sigs[img.latent[id - 1]][c];
        img.features.at(c, fy, fx) = static_cast<float>(base + (2.0 * uniform01(eng) - 1.0) * per_entry);
      }
    }
  return img;
}

struct Corpus {
  CorpusManifest manifest;
  std::filesystem::path manifest_path;
  std::filesystem::path gt_dir;
  std::map<std::string, std::vector<std::uint32_t>> latent;  // image_id -> latent class per instance
};

inline std::string image_name(std::uint32_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05u", i);
  return buf;
}

/// Writes maps/, features/, gt/ and manifest.tsv under `root`.
inline Corpus write_corpus(const std::filesystem::path& root, const CorpusConfig& cfg) {
  namespace fs = std::filesystem;
  for (auto d : {"maps", "features", "gt"}) fs::create_directories(root / d);
  Engine eng(derive_seed(cfg.seed, "synthetic"));
  Corpus corpus;
  std::vector<ManifestEntry> entries;
  for (std::uint32_t i = 0; i < cfg.images; ++i) {
    auto img = make_image(cfg, eng);
    const auto id = image_name(i);
    save_instance_map(img.instances, root / "maps" / (id + ".alpt"));
    write_tensor(feature_map_to_tensor(img.features), root / "features" / (id + ".alpt"));
    write_png_gray(root / "gt" / (id + ".png"), img.ground_truth);
    entries.push_back({id, fs::path("maps") / (id + ".alpt"), fs::path("features") / (id + ".alpt"), cfg.size,
                       cfg.size, Split::train});
    corpus.latent[id] = std::move(img.latent);
  }
  ManifestParams params;
  params.k = cfg.classes;
  corpus.manifest = split_corpus(std::move(entries), cfg.ratio, cfg.seed, params);
  corpus.manifest_path = root / "manifest.tsv";
  save_manifest(corpus.manifest, corpus.manifest_path);
  corpus.manifest = load_manifest(corpus.manifest_path);
  corpus.gt_dir = root / "gt";
  return corpus;
}

/// Random rectangles painted in sequence (later ones overwrite earlier ones),
/// then renumbered so identifiers are contiguous. Sizes span the whole image,
/// so instance proportions cover (0, 1].
inline InstanceMap random_instance_map(std::uint32_t width, std::uint32_t height, std::uint32_t rects, Engine& eng) {
  InstanceMap raw(width, height, 0);
  for (std::uint32_t r = 1; r <= rects; ++r) {
    const auto w = static_cast<std::uint32_t>(1 + uniform_index(eng, width));
    const auto h = static_cast<std::uint32_t>(1 + uniform_index(eng, height));
    const auto ox = static_cast<std::uint32_t>(uniform_index(eng, width - w + 1));
    const auto oy = static_cast<std::uint32_t>(uniform_index(eng, height - h + 1));
    for (std::uint32_t y = oy; y < oy + h; ++y)
      for (std::uint32_t x = ox; x < ox + w; ++x) raw.at(x, y) = static_cast<std::uint16_t>(r);
  }
  std::vector<std::uint16_t> remap(std::size_t{rects} + 1, 0);
  for (auto id : raw.pixels) remap[id] = 1;
  std::uint16_t next = 1;
  for (std::size_t id = 1; id < remap.size(); ++id) remap[id] = remap[id] ? next++ : 0;
  for (auto& id : raw.pixels) id = remap[id];
  return raw;
}

}  // namespace alps::synthetic
