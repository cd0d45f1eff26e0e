// alps: batch pseudo-label generation from instance maps and feature maps.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "alps/alps.hpp"
#include "alps/synthetic.hpp"

namespace {

struct StageFlags {
  std::string config;
  std::optional<std::string> manifest, out, gt;
  std::optional<double> sigma;
  std::optional<std::uint32_t> k, epochs;
  std::optional<std::uint64_t> seed, batch_size, palette_seed;
  std::optional<std::size_t> workers;
  bool resume = false;
  bool export_masks = false;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "key=value config file");
    cmd->add_option("--manifest", manifest, "corpus manifest (TSV)");
    cmd->add_option("--out", out, "output root");
    cmd->add_option("--gt", gt, "ground-truth label directory (<image_id>.png)");
    cmd->add_option("--sigma", sigma, "area size threshold in [0, 1]");
    cmd->add_option("--k", k, "number of pseudo classes");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--workers", workers, "worker threads");
    cmd->add_option("--batch-size", batch_size, "mini-batch size for clustering");
    cmd->add_option("--epochs", epochs, "passes over the PFL set");
    cmd->add_option("--palette-seed", palette_seed, "palette seed (defaults to --seed)");
    cmd->add_flag("--resume", resume, "resume clustering from <out>/model");
    cmd->add_flag("--export-masks", export_masks, "also write binary mask PNGs during decompose");
    cmd->add_option("--set", overrides, "extra key=value setting (repeatable)");
  }

  alps::PipelineConfig resolve() const {
    alps::PipelineConfig cfg;
    if (!config.empty()) alps::load_config_file(cfg, config);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw alps::Error(alps::Errc::invalid_config, "--set expects key=value");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (manifest) cfg.manifest = *manifest;
    if (out) cfg.out = *out;
    if (gt) cfg.gt = *gt;
    if (sigma) cfg.sigma = *sigma;
    if (k) cfg.k = *k;
    if (epochs) cfg.epochs = *epochs;
    if (seed) cfg.seed = *seed;
    if (batch_size) cfg.batch_size = *batch_size;
    if (palette_seed) cfg.palette_seed = *palette_seed;
    if (workers) cfg.workers = *workers;
    if (resume) cfg.resume = true;
    if (export_masks) cfg.export_masks = true;
    cfg.validate();
    return cfg;
  }
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("alps");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  if (const char* lvl = std::getenv("ALPS_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
  else spdlog::set_level(spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Automatic pseudo-label generation for segmentation pre-training"};
  app.require_subcommand(1);

  StageFlags flags;
  using Stage = alps::RunReport (*)(alps::PipelineConfig);
  std::vector<std::pair<CLI::App*, Stage>> stages;
  auto add_stage = [&](const char* name, const char* help, Stage fn) {
    auto* cmd = app.add_subcommand(name, help);
    flags.attach(cmd);
    stages.emplace_back(cmd, fn);
  };
  add_stage("decompose", "split instance maps into gated binary masks", alps::cmd_decompose);
  add_stage("extract", "compute one pseudo-feature label per surviving mask", alps::cmd_extract);
  add_stage("fit", "stream mini-batch k-means over the PFL set", alps::cmd_fit);
  add_stage("build", "write pseudo-label rasters, color renders and stats", alps::cmd_build);
  add_stage("eval", "score pseudo-labels against ground truth", alps::cmd_eval);
  add_stage("pipeline", "run every stage in order",
            [](alps::PipelineConfig c) { return alps::cmd_pipeline(c); });

  std::string split_in, split_out, ratio = "7:3";
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "re-partition a manifest into train/val");
  split->add_option("--manifest", split_in, "input manifest")->required();
  split->add_option("--output", split_out, "output manifest")->required();
  split->add_option("--ratio", ratio, "train:val parts");
  split->add_option("--seed", split_seed, "split seed");

  alps::synthetic::CorpusConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus with known latent classes");
  synth->add_option("--out", synth_out, "corpus directory")->required();
  synth->add_option("--images", synth_cfg.images, "image count");
  synth->add_option("--classes", synth_cfg.classes, "latent classes");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("--noise", synth_cfg.noise_radius, "feature noise radius");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? alps::kExitOk : alps::kExitConfig;
  }

  try {
    for (auto& [cmd, fn] : stages) {
      if (!cmd->parsed()) continue;
      auto report = fn(flags.resolve());
      if (report.scores)
        std::cout << "mIoU " << report.scores->miou << " mAcc " << report.scores->macc << '\n';
      if (report.failures) spdlog::warn("{} image(s) failed", report.failures);
      return report.exit_code;
    }
    if (split->parsed()) {
      auto m = alps::load_manifest(split_in);
      auto colon = ratio.find(':');
      if (colon == std::string::npos) throw alps::Error(alps::Errc::invalid_config, "ratio must be train:val");
      alps::SplitRatio r{static_cast<std::uint32_t>(std::stoul(ratio.substr(0, colon))),
                         static_cast<std::uint32_t>(std::stoul(ratio.substr(colon + 1)))};
      auto out = alps::split_corpus(m.entries, r, split_seed, m.params);
      alps::save_manifest(out, split_out);
      std::cout << out.count(alps::Split::train) << " train, " << out.count(alps::Split::val) << " val\n";
      return alps::kExitOk;
    }
    if (synth->parsed()) {
      auto corpus = alps::synthetic::write_corpus(synth_out, synth_cfg);
      std::cout << corpus.manifest_path.string() << '\n';
      return alps::kExitOk;
    }
  } catch (const alps::Error& e) {
    spdlog::error("{}", e.what());
    return e.code() == alps::Errc::invalid_config ? alps::kExitConfig : alps::kExitFatal;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return alps::kExitFatal;
  }
  return alps::kExitFatal;
}
