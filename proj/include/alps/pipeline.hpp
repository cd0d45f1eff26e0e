#pragma once

// Stage drivers behind the command-line tool. Every stage reads the corpus
// manifest and writes under the output root:
//
//   <out>/config.txt            resolved configuration
//   <out>/masks/                survivors per image + survival.tsv
//   <out>/pfl/                  pfl.alpt (rows x channels) + index.tsv
//   <out>/model/                cluster checkpoint
//   <out>/dataset/              labels, colorized labels, stats, palette
//   <out>/eval.tsv              agreement report (when ground truth is given)

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "alps/assembly.hpp"
#include "alps/clustering.hpp"
#include "alps/error.hpp"
#include "alps/evaluation.hpp"
#include "alps/featalign.hpp"
#include "alps/instance_map.hpp"
#include "alps/manifest.hpp"
#include "alps/maskops.hpp"
#include "alps/parallel.hpp"
#include "alps/png_io.hpp"
#include "alps/tensor.hpp"

#include <spdlog/spdlog.h>

namespace alps {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitPartial = 2, kExitFatal = 3 };

enum class MappingMode { one_to_one, many_to_one };

struct PipelineConfig {
  std::filesystem::path manifest;
  std::filesystem::path out;
  std::filesystem::path gt;  // ground-truth label directory, optional
  std::optional<double> sigma;
  std::optional<std::uint32_t> k;
  std::optional<std::uint64_t> batch_size;
  std::uint32_t epochs = 2;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::optional<std::uint64_t> palette_seed;
  std::uint32_t grid = kMaskGrid;
  bool normalize = false;
  Rgb background{};
  double tolerance = 1e-4;
  std::uint64_t checkpoint_every = 0;
  bool resume = false;
  bool export_masks = false;
  MappingMode mapping = MappingMode::one_to_one;
  std::optional<std::uint32_t> gt_classes;

  /// Applies one key=value setting; unknown keys and bad values throw.
  void set(std::string_view key, std::string_view value);

  /// Fills sigma, k and batch_size from the manifest where unset.
  void resolve(const CorpusManifest& m) {
    if (!sigma) sigma = m.params.sigma;
    if (!k) k = m.params.k;
    if (!batch_size) batch_size = m.params.batch_size;
  }

  void validate() const {
    if (manifest.empty()) throw Error(Errc::invalid_config, "manifest is required");
    if (out.empty()) throw Error(Errc::invalid_config, "out is required");
    if (sigma) FilterConfig{*sigma}.validate();
    if (k && (*k == 0 || *k > kMaxClasses)) throw Error(Errc::invalid_config, "k must lie in [1, 255]");
    if (batch_size && *batch_size == 0) throw Error(Errc::invalid_config, "batch_size must be at least 1");
    if (grid == 0) throw Error(Errc::invalid_config, "grid must be at least 1");
    if (workers == 0) throw Error(Errc::invalid_config, "workers must be at least 1");
  }

  std::uint64_t effective_palette_seed() const { return palette_seed.value_or(seed); }

  ExtractConfig extract_config() const {
    ExtractConfig e;
    e.filter.sigma = sigma.value_or(0.3);
    e.grid = grid;
    e.normalize = normalize;
    e.background = background;
    return e;
  }

  FitConfig fit_config() const {
    FitConfig f;
    f.k = k.value_or(0);
    f.batch_size = batch_size.value_or(4096);
    f.epochs = epochs;
    f.seed = seed;
    f.tolerance = tolerance;
    f.checkpoint_every = checkpoint_every;
    return f;
  }

  /// Canonical key=value text of every setting that affects outputs. Paths,
  /// worker count and resume are excluded so output trees are comparable.
  std::string serialize() const {
    std::ostringstream os;
    os << "sigma=" << format_double(sigma.value_or(0.3)) << '\n';
    os << "k=" << k.value_or(0) << '\n';
    os << "batch_size=" << batch_size.value_or(4096) << '\n';
    os << "epochs=" << epochs << '\n';
    os << "seed=" << seed << '\n';
    os << "palette_seed=" << effective_palette_seed() << '\n';
    os << "grid=" << grid << '\n';
    os << "normalize=" << (normalize ? "true" : "false") << '\n';
    os << "background=" << int{background.r} << ',' << int{background.g} << ',' << int{background.b} << '\n';
    os << "tolerance=" << format_double(tolerance) << '\n';
    os << "checkpoint_every=" << checkpoint_every << '\n';
    os << "export_masks=" << (export_masks ? "true" : "false") << '\n';
    os << "mapping=" << (mapping == MappingMode::one_to_one ? "one_to_one" : "many_to_one") << '\n';
    if (gt_classes) os << "gt_classes=" << *gt_classes << '\n';
    return os.str();
  }
};

namespace detail {

inline bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(Errc::invalid_config, "bad boolean '" + std::string(v) + "'");
}

template <class T>
T config_number(std::string_view key, std::string_view v) {
  try {
    return parse_number<T>(v, key);
  } catch (const Error&) {
    throw Error(Errc::invalid_config, "bad value for " + std::string(key) + ": '" + std::string(v) + "'");
  }
}

}  // namespace detail

inline void PipelineConfig::set(std::string_view key, std::string_view value) {
  using detail::config_number;
  if (key == "manifest") manifest = std::string(value);
  else if (key == "out") out = std::string(value);
  else if (key == "gt") gt = std::string(value);
  else if (key == "sigma") sigma = config_number<double>(key, value);
  else if (key == "k") k = config_number<std::uint32_t>(key, value);
  else if (key == "batch_size") batch_size = config_number<std::uint64_t>(key, value);
  else if (key == "epochs") epochs = config_number<std::uint32_t>(key, value);
  else if (key == "seed") seed = config_number<std::uint64_t>(key, value);
  else if (key == "workers") workers = config_number<std::size_t>(key, value);
  else if (key == "palette_seed") palette_seed = config_number<std::uint64_t>(key, value);
  else if (key == "grid") grid = config_number<std::uint32_t>(key, value);
  else if (key == "normalize") normalize = detail::parse_bool(value);
  else if (key == "tolerance") tolerance = config_number<double>(key, value);
  else if (key == "checkpoint_every") checkpoint_every = config_number<std::uint64_t>(key, value);
  else if (key == "resume") resume = detail::parse_bool(value);
  else if (key == "export_masks") export_masks = detail::parse_bool(value);
  else if (key == "gt_classes") gt_classes = config_number<std::uint32_t>(key, value);
  else if (key == "mapping") {
    if (value == "one_to_one") mapping = MappingMode::one_to_one;
    else if (value == "many_to_one") mapping = MappingMode::many_to_one;
    else throw Error(Errc::invalid_config, "mapping must be one_to_one or many_to_one");
  } else if (key == "background") {
    unsigned r = 0, g = 0, b = 0;
    char tail = 0;
    std::string v(value);
    if (std::sscanf(v.c_str(), "%u,%u,%u%c", &r, &g, &b, &tail) != 3 || r > 255 || g > 255 || b > 255)
      throw Error(Errc::invalid_config, "background must be r,g,b");
    background = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
  } else {
    throw Error(Errc::invalid_config, "unknown setting '" + std::string(key) + "'");
  }
}

/// Reads key=value lines; blank lines and '#' comments are ignored.
inline void load_config_file(PipelineConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::invalid_config, "cannot read config " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    auto trim = [](std::string_view s) {
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
      return s;
    };
    auto s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    auto eq = s.find('=');
    if (eq == std::string_view::npos) throw Error(Errc::invalid_config, "expected key=value: " + std::string(s));
    cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

struct RunReport {
  int exit_code = kExitOk;
  std::size_t failures = 0;
  std::size_t processed = 0;
  std::optional<Scores> scores;

  void absorb(const RunReport& o) {
    exit_code = std::max(exit_code, o.exit_code);
    failures += o.failures;
    if (o.scores) scores = o.scores;
  }
};

namespace detail {

inline CorpusManifest prepare(PipelineConfig& cfg) {
  cfg.validate();
  auto manifest = load_manifest(cfg.manifest);
  cfg.resolve(manifest);
  if (!cfg.k || *cfg.k == 0 || *cfg.k > kMaxClasses) throw Error(Errc::invalid_config, "k must lie in [1, 255]");
  FilterConfig{*cfg.sigma}.validate();
  std::filesystem::create_directories(cfg.out);
  write_text(cfg.out / "config.txt", cfg.serialize());
  return manifest;
}

inline RunReport finish(std::size_t processed, std::size_t failures) {
  return {failures ? kExitPartial : kExitOk, failures, processed, std::nullopt};
}

}  // namespace detail

/// Decomposes and gates every instance map; writes the surviving instances
/// of each image as a uint16 ALPT raster and a survival table.
inline RunReport cmd_decompose(PipelineConfig cfg) {
  namespace fs = std::filesystem;
  auto manifest = detail::prepare(cfg);
  const auto dir = cfg.out / "masks";
  fs::create_directories(dir);
  if (cfg.export_masks) fs::create_directories(dir / "png");
  const FilterConfig filter{*cfg.sigma};

  struct Row {
    std::size_t total = 0, kept = 0;
  };
  const auto& entries = manifest.entries;
  std::vector<std::optional<Row>> rows(entries.size());
  std::vector<std::string> errors(entries.size());
  parallel_for(entries.size(), cfg.workers, [&](std::size_t i) {
    const auto& e = entries[i];
    try {
      auto map = load_instance_map(e.instance_map, cfg.background);
      auto masks = decompose(map);
      InstanceMap survivors(map.width, map.height, 0);
      Row row{masks.size(), 0};
      for (const auto& m : masks) {
        if (filter_gate(m, filter) == GateDecision::discard) continue;
        ++row.kept;
        m.for_each_pixel([&](std::uint32_t x, std::uint32_t y) { survivors.at(x, y) = m.instance_id(); });
        if (cfg.export_masks)
          write_png_gray(dir / "png" / (e.image_id + "_" + std::to_string(m.instance_id()) + ".png"),
                         m.to_export_raster());
      }
      write_tensor(Tensor::from<std::uint16_t>({survivors.height, survivors.width}, survivors.pixels),
                   dir / (e.image_id + ".alpt"));
      rows[i] = row;
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });

  std::ostringstream os;
  os << "image_id\tmasks_total\tmasks_kept\tmasks_discarded\n";
  std::size_t failures = 0, total = 0, kept = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!rows[i]) {
      spdlog::warn("{}: decompose failed ({})", entries[i].image_id, errors[i]);
      ++failures;
      continue;
    }
    total += rows[i]->total;
    kept += rows[i]->kept;
    os << entries[i].image_id << '\t' << rows[i]->total << '\t' << rows[i]->kept << '\t'
       << rows[i]->total - rows[i]->kept << '\n';
  }
  os << "#total\t" << total << '\t' << kept << '\t' << total - kept << '\n';
  os << "#failed\t" << failures << '\n';
  detail::write_text(dir / "survival.tsv", os.str());
  spdlog::info("decompose: {}/{} masks survive sigma={}", kept, total, *cfg.sigma);
  return detail::finish(entries.size() - failures, failures);
}

/// Writes pfl.alpt (one row per surviving mask) and index.tsv mapping each
/// row to (image_id, instance_id).
inline RunReport cmd_extract(PipelineConfig cfg) {
  auto manifest = detail::prepare(cfg);
  const auto dir = cfg.out / "pfl";
  std::filesystem::create_directories(dir);
  auto batch = extract_pfl_batch(manifest.entries, cfg.extract_config(), cfg.workers);

  std::ostringstream index;
  index << "row\timage_id\tinstance_id\tpixel_count_at_grid\n";
  std::vector<float> rows;
  std::uint64_t dim = batch.pfls.empty() ? 0 : batch.pfls.front().vector.size();
  for (std::size_t r = 0; r < batch.pfls.size(); ++r) {
    const auto& p = batch.pfls[r];
    if (p.vector.size() != dim) throw Error(Errc::dim_mismatch, p.image_id + ": feature channel count differs");
    rows.insert(rows.end(), p.vector.begin(), p.vector.end());
    index << r << '\t' << p.image_id << '\t' << p.instance_id << '\t' << p.pixel_count_at_grid << '\n';
  }
  detail::write_text(dir / "index.tsv", index.str());

  std::ostringstream stats;
  stats << "image_id\tmasks_total\tmasks_kept\tdropped_gate\tdropped_empty\n";
  for (const auto& im : batch.images)
    stats << im.image_id << '\t' << im.masks_total << '\t' << im.masks_total - im.dropped_gate - im.dropped_empty
          << '\t' << im.dropped_gate << '\t' << im.dropped_empty << '\n';
  for (const auto& f : batch.failures) stats << "#failed\t" << f.image_id << '\n';
  detail::write_text(dir / "extract.tsv", stats.str());

  std::filesystem::remove(dir / "pfl.alpt");
  if (batch.pfls.empty()) {
    spdlog::error("extract: no masks survived; nothing to cluster");
    return {kExitFatal, batch.error_count(), batch.images.size(), std::nullopt};
  }
  write_tensor(Tensor::from<float>({batch.pfls.size(), dim}, rows), dir / "pfl.alpt");
  spdlog::info("extract: {} PFLs from {} images ({} failed)", batch.pfls.size(), batch.images.size(),
               batch.error_count());
  return detail::finish(batch.images.size(), batch.error_count());
}

/// Fits the cluster model over pfl.alpt; checkpoints into <out>/model.
inline RunReport cmd_fit(PipelineConfig cfg) {
  auto manifest = detail::prepare(cfg);
  RowReader reader(cfg.out / "pfl" / "pfl.alpt");
  const auto model_dir = cfg.out / "model";
  std::optional<ClusterModel> resume;
  if (cfg.resume && std::filesystem::exists(model_dir / "header.tsv")) {
    resume = load_checkpoint(model_dir, {cfg.k, static_cast<std::uint32_t>(reader.cols())});
    if (resume->seed != cfg.seed) throw Error(Errc::checkpoint_mismatch, "checkpoint seed differs from config");
    spdlog::info("fit: resuming at epoch {} row {}", resume->epoch, resume->cursor);
  }
  auto model = fit_stream(reader, cfg.fit_config(), std::move(resume), [&](const ClusterModel& m) {
    save_checkpoint(m, model_dir);
    if (m.cursor == 0 && !m.inertia_history.empty())
      spdlog::info("fit: epoch {} inertia {}", m.epoch, m.inertia_history.back().mean_sq_distance);
  });
  save_checkpoint(model, model_dir);
  return detail::finish(reader.rows(), 0);
}

inline RunReport cmd_build(PipelineConfig cfg) {
  auto manifest = detail::prepare(cfg);
  auto model = load_checkpoint(cfg.out / "model", {cfg.k, std::nullopt});
  BuildConfig b;
  b.extract = cfg.extract_config();
  b.palette_seed = cfg.effective_palette_seed();
  b.workers = cfg.workers;
  auto summary = build_dataset(manifest, model, b, cfg.out / "dataset");
  spdlog::info("build: {} images labeled, {} failed", summary.images.size(), summary.failures.size());
  return detail::finish(summary.images.size(), summary.failures.size());
}

/// Scores <out>/dataset labels against <gt>/<image_id>.png.
inline RunReport cmd_eval(PipelineConfig cfg) {
  auto manifest = detail::prepare(cfg);
  if (cfg.gt.empty()) throw Error(Errc::invalid_config, "eval needs gt");
  const auto root = cfg.out / "dataset";

  struct Pair {
    LabelRaster pred, gt;
  };
  std::vector<Pair> pairs;
  std::size_t failures = 0;
  std::uint32_t g = 0;
  for (const auto& e : manifest.entries) {
    try {
      Pair p{read_png_gray(root / split_name(e.split) / "labels" / (e.image_id + ".png")),
             read_png_gray(cfg.gt / (e.image_id + ".png"))};
      for (auto v : p.gt.pixels)
        if (v != kIgnoreLabel) g = std::max<std::uint32_t>(g, v + 1u);
      pairs.push_back(std::move(p));
    } catch (const std::exception& ex) {
      spdlog::warn("{}: eval skipped ({})", e.image_id, ex.what());
      ++failures;
    }
  }
  if (cfg.gt_classes) {
    if (g > *cfg.gt_classes) throw Error(Errc::label_out_of_range, "ground truth exceeds gt_classes");
    g = *cfg.gt_classes;
  }
  if (g == 0) throw Error(Errc::no_pixels, "ground truth has no labeled pixels");

  ConfusionMatrix cm(*cfg.k, g);
  for (const auto& p : pairs) cm.accumulate(p.pred, p.gt);
  auto mapping = cfg.mapping == MappingMode::one_to_one ? optimal_mapping(cm) : many_to_one_mapping(cm);
  auto scores = miou_macc(cm, mapping);
  detail::write_text(cfg.out / "eval.tsv", format_report(scores));
  spdlog::info("eval: mIoU {:.4f} mAcc {:.4f}", scores.miou, scores.macc);
  auto report = detail::finish(pairs.size(), failures);
  report.scores = std::move(scores);
  return report;
}

/// All stages in order; evaluation runs when ground truth is configured.
inline RunReport cmd_pipeline(const PipelineConfig& cfg) {
  RunReport report;
  report.absorb(cmd_decompose(cfg));
  auto ex = cmd_extract(cfg);
  report.absorb(ex);
  if (ex.exit_code == kExitFatal) return report;
  report.absorb(cmd_fit(cfg));
  report.absorb(cmd_build(cfg));
  if (!cfg.gt.empty()) report.absorb(cmd_eval(cfg));
  return report;
}

}  // namespace alps
