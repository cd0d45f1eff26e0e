#include "alps/pipeline.hpp"

#include <cstdlib>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "alps/synthetic.hpp"
#include "test_util.hpp"

namespace alps {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

synthetic::CorpusConfig small_corpus_config(std::uint32_t images = 10) {
  synthetic::CorpusConfig cfg;
  cfg.images = images;
  cfg.size = 64;
  cfg.feature_size = 16;
  cfg.slots = 2;
  cfg.channels = 16;
  cfg.classes = 3;
  cfg.fill = 1.0;
  cfg.seed = 4;
  return cfg;
}

PipelineConfig stage_config(const synthetic::Corpus& corpus, const fs::path& out) {
  PipelineConfig cfg;
  cfg.manifest = corpus.manifest_path;
  cfg.out = out;
  cfg.gt = corpus.gt_dir;
  cfg.k = 3;
  cfg.grid = 64;
  cfg.batch_size = 8;
  return cfg;
}

// Survival counts straight from the gate definition, per decomposed mask.
std::pair<std::size_t, std::size_t> oracle_survival(const CorpusManifest& m, double sigma) {
  std::size_t total = 0, kept = 0;
  for (const auto& e : m.entries) {
    auto map = load_instance_map(e.instance_map);
    std::map<std::uint16_t, std::uint64_t> counts;
    for (auto id : map.pixels)
      if (id) ++counts[id];
    for (auto [id, n] : counts) {
      ++total;
      if (static_cast<double>(n) / static_cast<double>(map.size()) <= sigma) ++kept;
    }
  }
  return {total, kept};
}

std::pair<std::size_t, std::size_t> survival_totals(const fs::path& out) {
  std::istringstream in(testing::slurp(out / "masks" / "survival.tsv"));
  std::string line;
  while (std::getline(in, line))
    if (line.starts_with("#total\t")) {
      std::size_t total = 0, kept = 0;
      std::istringstream fields(line.substr(7));
      fields >> total >> kept;
      return {total, kept};
    }
  return {0, 0};
}

TEST(ConfigTest, SetAndValidate) {
  PipelineConfig cfg;
  cfg.set("sigma", "0.5");
  cfg.set("k", "8");
  cfg.set("normalize", "true");
  cfg.set("background", "1,2,3");
  cfg.set("mapping", "many_to_one");
  EXPECT_EQ(*cfg.sigma, 0.5);
  EXPECT_EQ(*cfg.k, 8u);
  EXPECT_TRUE(cfg.normalize);
  EXPECT_EQ(cfg.background, (Rgb{1, 2, 3}));
  EXPECT_EQ(cfg.mapping, MappingMode::many_to_one);

  auto code = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::io;
  };
  EXPECT_EQ(code([&] { cfg.set("nonsense", "1"); }), Errc::invalid_config);
  EXPECT_EQ(code([&] { cfg.set("k", "many"); }), Errc::invalid_config);
  EXPECT_EQ(code([&] { cfg.set("background", "1,2"); }), Errc::invalid_config);
  EXPECT_EQ(code([&] { cfg.validate(); }), Errc::invalid_config);  // no manifest
  cfg.manifest = "m.tsv";
  cfg.out = "o";
  cfg.validate();
  cfg.sigma = 1.5;
  EXPECT_EQ(code([&] { cfg.validate(); }), Errc::invalid_config);
  cfg.sigma = 0.3;
  cfg.k = 256;
  EXPECT_EQ(code([&] { cfg.validate(); }), Errc::invalid_config);
}

TEST(ConfigTest, FileParsingAndResolution) {
  TempDir dir;
  testing::spit(dir / "run.cfg", "# comment\n\nsigma = 0.7\n  seed=9\nepochs=3\n");
  PipelineConfig cfg;
  load_config_file(cfg, dir / "run.cfg");
  EXPECT_EQ(*cfg.sigma, 0.7);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.epochs, 3u);
  EXPECT_EQ(cfg.effective_palette_seed(), 9u);

  CorpusManifest m;
  m.params.sigma = 0.1;
  m.params.k = 5;
  m.params.batch_size = 17;
  cfg.resolve(m);
  EXPECT_EQ(*cfg.sigma, 0.7);  // explicit value wins over manifest
  EXPECT_EQ(*cfg.k, 5u);
  EXPECT_EQ(*cfg.batch_size, 17u);

  testing::spit(dir / "bad.cfg", "sigma\n");
  EXPECT_THROW(load_config_file(cfg, dir / "bad.cfg"), Error);
  EXPECT_THROW(load_config_file(cfg, dir / "missing.cfg"), Error);
}

TEST(ConfigTest, SerializationOmitsPathsAndWorkers) {
  PipelineConfig a, b;
  a.manifest = "x.tsv";
  a.out = "out1";
  a.workers = 1;
  b.manifest = "elsewhere/y.tsv";
  b.out = "out2";
  b.workers = 8;
  b.resume = true;
  EXPECT_EQ(a.serialize(), b.serialize());
  b.seed = 1;
  EXPECT_NE(a.serialize(), b.serialize());
}

TEST(PipelineTest, SigmaSweepMatchesGateOracle) {
  TempDir dir;
  // Random overlapping rectangles give proportions spread over (0, 1].
  Engine eng(17);
  std::vector<ManifestEntry> entries;
  fs::create_directories(dir / "maps");
  testing::spit(dir / "unused.alpt", "");  // decompose never reads features
  for (int i = 0; i < 12; ++i) {
    auto map = synthetic::random_instance_map(32, 24, 6, eng);
    auto id = "m" + std::to_string(i);
    save_instance_map(map, dir / "maps" / (id + ".alpt"));
    entries.push_back({id, dir / "maps" / (id + ".alpt"), dir / "unused.alpt", 32, 24, Split::train});
  }
  auto manifest = split_corpus(entries, {7, 3}, 0, {});
  save_manifest(manifest, dir / "manifest.tsv");
  auto loaded = load_manifest(dir / "manifest.tsv", false);

  std::size_t previous = 0;
  for (double sigma : {0.0, 0.1, 0.3, 0.5, 0.7, 1.0}) {
    PipelineConfig cfg;
    cfg.manifest = dir / "manifest.tsv";
    cfg.out = dir / "out";
    cfg.sigma = sigma;
    cfg.k = 2;
    EXPECT_EQ(cmd_decompose(cfg).exit_code, kExitOk);
    auto [total, kept] = survival_totals(cfg.out);
    auto [o_total, o_kept] = oracle_survival(loaded, sigma);
    EXPECT_EQ(total, o_total);
    EXPECT_EQ(kept, o_kept) << "sigma " << sigma;
    EXPECT_GE(kept, previous);
    previous = kept;
    if (sigma == 0.0) {
      EXPECT_EQ(kept, 0u);
    }
    if (sigma == 1.0) {
      EXPECT_EQ(kept, total);
    }
  }
}

TEST(PipelineTest, DecomposeSurvivorRasterAndExports) {
  TempDir dir;
  InstanceMap map(4, 4, 0);
  map.at(0, 0) = 1;                       // 1/16: kept
  for (std::uint32_t x = 0; x < 4; ++x)   // 8/16: dropped at sigma 0.3
    for (std::uint32_t y = 2; y < 4; ++y) map.at(x, y) = 2;
  save_instance_map(map, dir / "a.alpt");
  testing::spit(dir / "f.alpt", "");
  auto manifest = split_corpus({{"a", dir / "a.alpt", dir / "f.alpt", 4, 4, Split::train}}, {1, 1}, 0, {});
  save_manifest(manifest, dir / "manifest.tsv");

  PipelineConfig cfg;
  cfg.manifest = dir / "manifest.tsv";
  cfg.out = dir / "out";
  cfg.k = 1;
  cfg.export_masks = true;
  ASSERT_EQ(cmd_decompose(cfg).exit_code, kExitOk);
  auto survivors = instance_map_from_tensor(read_tensor(cfg.out / "masks" / "a.alpt"));
  InstanceMap expected(4, 4, 0);
  expected.at(0, 0) = 1;
  EXPECT_EQ(survivors, expected);
  auto png = read_png_gray(cfg.out / "masks" / "png" / "a_1.png");
  EXPECT_EQ(png.pixels[0], 0);
  EXPECT_EQ(png.pixels[1], 255);
  EXPECT_FALSE(fs::exists(cfg.out / "masks" / "png" / "a_2.png"));
  EXPECT_EQ(testing::slurp(cfg.out / "masks" / "survival.tsv"),
            "image_id\tmasks_total\tmasks_kept\tmasks_discarded\na\t2\t1\t1\n#total\t2\t1\t1\n#failed\t0\n");
}

TEST(PipelineTest, StagesEqualPipelineAndRecoverClasses) {
  TempDir dir;
  auto corpus = synthetic::write_corpus(dir / "corpus", small_corpus_config());

  auto staged = stage_config(corpus, dir / "staged");
  EXPECT_EQ(cmd_decompose(staged).exit_code, kExitOk);
  EXPECT_EQ(cmd_extract(staged).exit_code, kExitOk);
  EXPECT_EQ(cmd_fit(staged).exit_code, kExitOk);
  EXPECT_EQ(cmd_build(staged).exit_code, kExitOk);
  auto eval = cmd_eval(staged);
  ASSERT_TRUE(eval.scores);
  EXPECT_EQ(eval.scores->miou, 1.0);
  EXPECT_EQ(eval.scores->macc, 1.0);

  auto whole = stage_config(corpus, dir / "whole");
  auto report = cmd_pipeline(whole);
  EXPECT_EQ(report.exit_code, kExitOk);
  ASSERT_TRUE(report.scores);
  EXPECT_EQ(report.scores->miou, 1.0);
  EXPECT_EQ(testing::snapshot_tree(dir / "staged"), testing::snapshot_tree(dir / "whole"));

  auto index = testing::slurp(whole.out / "pfl" / "index.tsv");
  EXPECT_TRUE(index.starts_with("row\timage_id\tinstance_id\tpixel_count_at_grid\n0\timg_00000\t1\t"));
  auto pfl = read_tensor(whole.out / "pfl" / "pfl.alpt");
  EXPECT_EQ(pfl.dims, (std::vector<std::uint64_t>{40, 16}));  // 10 images x 4 slots
  EXPECT_TRUE(fs::exists(whole.out / "model" / "header.tsv"));
  EXPECT_TRUE(fs::exists(whole.out / "eval.tsv"));
}

TEST(PipelineTest, WorkerCountAndRerunsAreByteIdentical) {
  TempDir dir;
  auto corpus = synthetic::write_corpus(dir / "corpus", small_corpus_config(8));
  auto a = stage_config(corpus, dir / "a");
  auto b = stage_config(corpus, dir / "b");
  b.workers = 3;
  ASSERT_EQ(cmd_pipeline(a).exit_code, kExitOk);
  ASSERT_EQ(cmd_pipeline(b).exit_code, kExitOk);
  auto first = testing::snapshot_tree(dir / "a");
  EXPECT_EQ(first, testing::snapshot_tree(dir / "b"));
  ASSERT_EQ(cmd_pipeline(a).exit_code, kExitOk);
  EXPECT_EQ(first, testing::snapshot_tree(dir / "a"));
}

TEST(PipelineTest, ResumeAfterInterruptedFitMatches) {
  TempDir dir;
  auto corpus = synthetic::write_corpus(dir / "corpus", small_corpus_config(8));
  auto full = stage_config(corpus, dir / "full");
  full.epochs = 3;
  full.tolerance = 0.0;
  ASSERT_EQ(cmd_decompose(full).exit_code, kExitOk);
  ASSERT_EQ(cmd_extract(full).exit_code, kExitOk);
  ASSERT_EQ(cmd_fit(full).exit_code, kExitOk);
  auto reference = load_checkpoint(full.out / "model");

  // Stop after one epoch, then resume to three.
  auto part = full;
  part.epochs = 1;
  ASSERT_EQ(cmd_fit(part).exit_code, kExitOk);
  EXPECT_EQ(load_checkpoint(full.out / "model").epoch, 1u);
  auto resumed = full;
  resumed.resume = true;
  ASSERT_EQ(cmd_fit(resumed).exit_code, kExitOk);
  EXPECT_EQ(load_checkpoint(full.out / "model"), reference);

  auto wrong = resumed;
  wrong.k = 4;
  EXPECT_THROW(cmd_fit(wrong), Error);
}

TEST(PipelineTest, CorruptImageGivesPartialExit) {
  TempDir dir;
  auto corpus = synthetic::write_corpus(dir / "corpus", small_corpus_config(6));
  testing::spit(corpus.manifest.entries[2].feature_map, "not a tensor");
  auto cfg = stage_config(corpus, dir / "out");
  cfg.gt.clear();
  auto report = cmd_pipeline(cfg);
  EXPECT_EQ(report.exit_code, kExitPartial);
  EXPECT_GE(report.failures, 1u);
  EXPECT_NE(testing::slurp(cfg.out / "dataset" / "stats.tsv").find("#failed\t1\n"), std::string::npos);
}

TEST(PipelineTest, NothingSurvivesIsFatal) {
  TempDir dir;
  auto corpus = synthetic::write_corpus(dir / "corpus", small_corpus_config(2));
  auto cfg = stage_config(corpus, dir / "out");
  cfg.sigma = 0.0;
  EXPECT_EQ(cmd_pipeline(cfg).exit_code, kExitFatal);
  EXPECT_FALSE(fs::exists(cfg.out / "pfl" / "pfl.alpt"));
}

// ---------------------------------------------------------------------------
// Command-line tool.

int run_cli(const std::string& args) {
  std::string cmd = std::string(ALPS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliTest, ExitCodes) {
  TempDir dir;
  auto d = dir.path().string();
  EXPECT_EQ(run_cli(""), kExitConfig);
  EXPECT_EQ(run_cli("pipeline --bogus"), kExitConfig);
  EXPECT_EQ(run_cli("pipeline --out " + d + "/o"), kExitConfig);  // no manifest
  EXPECT_EQ(run_cli("synth --out " + d + "/c --images 6"), kExitOk);
  auto m = d + "/c/manifest.tsv";
  EXPECT_EQ(run_cli("pipeline --manifest " + m + " --out " + d + "/o --sigma 1.5"), kExitConfig);
  EXPECT_EQ(run_cli("pipeline --manifest " + m + " --out " + d + "/o --set nonsense=1"), kExitConfig);
  EXPECT_EQ(run_cli("pipeline --manifest " + d + "/missing.tsv --out " + d + "/o"), kExitFatal);
  EXPECT_EQ(run_cli("pipeline --manifest " + m + " --out " + d + "/o --sigma 0"), kExitFatal);
}

TEST(CliTest, SynthPipelineEvalAndSplit) {
  TempDir dir;
  auto d = dir.path().string();
  ASSERT_EQ(run_cli("synth --out " + d + "/c --images 8 --classes 4"), kExitOk);
  testing::spit(dir / "run.cfg", "grid=64\nbatch_size=16\n");
  ASSERT_EQ(run_cli("pipeline --config " + d + "/run.cfg --manifest " + d + "/c/manifest.tsv --out " + d +
                    "/o --gt " + d + "/c/gt --k 4 --workers 2"),
            kExitOk);
  auto report = testing::slurp(dir / "o" / "eval.tsv");
  EXPECT_NE(report.find("mean\t100.00\t100.00\n"), std::string::npos) << report;
  auto config = testing::slurp(dir / "o" / "config.txt");
  EXPECT_NE(config.find("grid=64\n"), std::string::npos);
  EXPECT_NE(config.find("k=4\n"), std::string::npos);

  ASSERT_EQ(run_cli("split --manifest " + d + "/c/manifest.tsv --output " + d + "/s.tsv --ratio 1:1 --seed 3"),
            kExitOk);
  auto split = load_manifest(dir / "s.tsv");
  EXPECT_EQ(split.count(Split::train), 4u);
  EXPECT_EQ(split.count(Split::val), 4u);
}

TEST(CliTest, FlagsOverrideSetWhichOverridesConfigFile) {
  TempDir dir;
  auto d = dir.path().string();
  ASSERT_EQ(run_cli("synth --out " + d + "/c --images 2"), kExitOk);
  testing::spit(dir / "run.cfg", "sigma=0.9\nseed=5\nepochs=1\n");
  ASSERT_EQ(run_cli("decompose --config " + d + "/run.cfg --set seed=6 --set epochs=4 --epochs 7 --manifest " + d +
                    "/c/manifest.tsv --out " + d + "/o"),
            kExitOk);
  auto config = testing::slurp(dir / "o" / "config.txt");
  EXPECT_NE(config.find("sigma=0.9\n"), std::string::npos);
  EXPECT_NE(config.find("seed=6\n"), std::string::npos);
  EXPECT_NE(config.find("epochs=7\n"), std::string::npos);
}

}  // namespace
}  // namespace alps
