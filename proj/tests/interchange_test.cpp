#include <random>
#include <set>

#include <gtest/gtest.h>

#include "alps/instance_map.hpp"
#include "alps/manifest.hpp"
#include "alps/png_io.hpp"
#include "test_util.hpp"

namespace alps {
namespace {

using testing::TempDir;

TEST(DecodeRgbTest, IdsFollowLexicographicColorOrder) {
  RgbRaster rgb(2, 2);
  rgb.at(0, 0) = {0, 0, 0};
  rgb.at(1, 0) = {10, 0, 0};
  rgb.at(0, 1) = {0, 10, 0};
  rgb.at(1, 1) = {10, 0, 0};
  auto map = decode_rgb_instance_map(rgb, {0, 0, 0});
  EXPECT_EQ(map.at(0, 0), 0);
  EXPECT_EQ(map.at(0, 1), 1);  // (0,10,0) < (10,0,0)
  EXPECT_EQ(map.at(1, 0), 2);
  EXPECT_EQ(map.at(1, 1), 2);
  EXPECT_EQ(instance_count(map), 2);
}

TEST(DecodeRgbTest, AllBackground) {
  RgbRaster rgb(3, 2, Rgb{0, 0, 0});
  auto map = decode_rgb_instance_map(rgb, {0, 0, 0});
  EXPECT_EQ(instance_count(map), 0);
  for (auto id : map.pixels) EXPECT_EQ(id, 0);
}

TEST(DecodeRgbTest, SingleColorCoversEverything) {
  RgbRaster rgb(4, 4, Rgb{1, 2, 3});
  auto map = decode_rgb_instance_map(rgb, {0, 0, 0});
  for (auto id : map.pixels) EXPECT_EQ(id, 1);
}

TEST(DecodeRgbTest, ExplicitBackgroundColor) {
  RgbRaster rgb(2, 1);
  rgb.at(0, 0) = {255, 255, 255};
  rgb.at(1, 0) = {0, 0, 0};
  auto map = decode_rgb_instance_map(rgb, {255, 255, 255});
  EXPECT_EQ(map.at(0, 0), 0);
  EXPECT_EQ(map.at(1, 0), 1);
}

TEST(DecodeRgbTest, TooManyColors) {
  RgbRaster rgb(256, 257);
  for (std::uint32_t i = 0; i < rgb.size(); ++i)
    rgb.pixels[i] = {static_cast<std::uint8_t>(i & 0xff), static_cast<std::uint8_t>((i >> 8) & 0xff),
                     static_cast<std::uint8_t>(1 + (i >> 16))};
  try {
    decode_rgb_instance_map(rgb, {0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::too_many_instances);
  }
}

TEST(DecodeRgbTest, IdsAreContiguousForRandomColors) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    RgbRaster rgb(16, 16);
    for (auto& px : rgb.pixels) {
      auto v = rng() % 6;  // few colors, spread over the cube
      px = {static_cast<std::uint8_t>(v * 40), static_cast<std::uint8_t>((v * 97) % 256), static_cast<std::uint8_t>(v)};
    }
    auto map = decode_rgb_instance_map(rgb, {0, 0, 0});
    EXPECT_NO_THROW(validate_instance_map(map));
    std::set<std::uint16_t> ids(map.pixels.begin(), map.pixels.end());
    ids.erase(0);
    EXPECT_EQ(ids.size(), instance_count(map));
  }
}

TEST(InstanceMapTest, GapIsRejected) {
  InstanceMap map(2, 1);
  map.pixels = {1, 3};
  EXPECT_THROW(validate_instance_map(map), Error);
}

TEST(InstanceMapTest, AlptAndPngLoading) {
  TempDir dir;
  InstanceMap map(3, 2);
  map.pixels = {0, 1, 1, 2, 2, 0};
  save_instance_map(map, dir / "m.alpt");
  EXPECT_EQ(load_instance_map(dir / "m.alpt"), map);

  RgbRaster rgb(3, 2, Rgb{0, 0, 0});
  rgb.at(1, 0) = rgb.at(2, 0) = {5, 5, 5};
  rgb.at(0, 1) = rgb.at(1, 1) = {9, 0, 0};
  write_png_rgb(dir / "m.png", rgb);
  EXPECT_EQ(load_instance_map(dir / "m.png"), map);
}

TEST(PngTest, GrayRoundTripAndColorRejected) {
  TempDir dir;
  LabelRaster r(5, 3);
  for (std::size_t i = 0; i < r.size(); ++i) r.pixels[i] = static_cast<std::uint8_t>(i * 17);
  write_png_gray(dir / "g.png", r);
  EXPECT_EQ(read_png_gray(dir / "g.png"), r);
  write_png_rgb(dir / "c.png", RgbRaster(2, 2, Rgb{1, 2, 3}));
  EXPECT_THROW(read_png_gray(dir / "c.png"), Error);
}

std::vector<ManifestEntry> entries(std::size_t n) {
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto id = "img" + std::to_string(i);
    out.push_back({id, "maps/" + id + ".alpt", "feat/" + id + ".alpt", 64, 48, Split::train});
  }
  return out;
}

TEST(SplitCorpusTest, SevenToThree) {
  auto m = split_corpus(entries(10), {7, 3}, 1);
  EXPECT_EQ(m.count(Split::train), 7u);
  EXPECT_EQ(m.count(Split::val), 3u);
}

TEST(SplitCorpusTest, SingleEntryGoesToTrain) {
  auto m = split_corpus(entries(1), {7, 3}, 1);
  EXPECT_EQ(m.count(Split::train), 1u);
  EXPECT_EQ(m.count(Split::val), 0u);
}

TEST(SplitCorpusTest, LargeCorpusCounts) {
  // 105,086 images at 7:3 gave 73,560 train / 31,526 val.
  EXPECT_EQ(train_count(105086, {7, 3}), 73560u);
}

TEST(SplitCorpusTest, DeterministicAndOrderInsensitive) {
  auto a = entries(37);
  auto b = a;
  std::reverse(b.begin(), b.end());
  auto ma = split_corpus(a, {7, 3}, 99);
  auto mb = split_corpus(b, {7, 3}, 99);
  EXPECT_EQ(format_manifest(ma), format_manifest(mb));
  EXPECT_EQ(format_manifest(ma), format_manifest(split_corpus(a, {7, 3}, 99)));
  EXPECT_NE(format_manifest(ma), format_manifest(split_corpus(a, {7, 3}, 100)));
}

TEST(SplitCorpusTest, ProportionsWithinOneEntry) {
  for (std::size_t n = 1; n < 60; ++n) {
    auto m = split_corpus(entries(n), {7, 3}, n);
    double ideal = n * 0.7;
    EXPECT_LE(std::abs(static_cast<double>(m.count(Split::train)) - ideal), 1.0) << n;
  }
}

TEST(SplitCorpusTest, RejectsDuplicatesAndEmpty) {
  auto e = entries(3);
  e[2].image_id = e[0].image_id;
  EXPECT_THROW(split_corpus(e, {7, 3}, 0), Error);
  EXPECT_THROW(split_corpus({}, {7, 3}, 0), Error);
  EXPECT_THROW(split_corpus(entries(2), {0, 3}, 0), Error);
}

TEST(ManifestTest, TextRoundTrip) {
  ManifestParams params{0.5, 64, 128};
  auto m = split_corpus(entries(5), {7, 3}, 11, params);
  auto text = format_manifest(m);
  EXPECT_NE(text.find(kManifestColumns), std::string::npos);
  auto back = parse_manifest(text);
  EXPECT_EQ(back, m);
}

TEST(ManifestTest, RelativePathsResolveAgainstManifestDir) {
  TempDir dir;
  std::filesystem::create_directories(dir / "maps");
  std::filesystem::create_directories(dir / "feat");
  auto m = split_corpus(entries(2), {1, 1}, 0);
  for (const auto& e : m.entries) {
    testing::spit(dir.path() / e.instance_map, "x");
    testing::spit(dir.path() / e.feature_map, "x");
  }
  save_manifest(m, dir / "manifest.tsv");
  auto loaded = load_manifest(dir / "manifest.tsv");
  EXPECT_EQ(loaded.entries[0].instance_map, dir.path() / "maps/img0.alpt");

  std::filesystem::remove(dir.path() / m.entries[1].feature_map);
  EXPECT_THROW(load_manifest(dir / "manifest.tsv"), Error);
}

TEST(ManifestTest, MalformedLines) {
  std::string head = std::string(kManifestColumns) + "\n";
  EXPECT_THROW(parse_manifest("nothing\n"), Error);
  EXPECT_THROW(parse_manifest(head + "a\ttrain\tm\tf\t1\n"), Error);
  EXPECT_THROW(parse_manifest(head + "a\ttest\tm\tf\t1\t1\n"), Error);
  EXPECT_THROW(parse_manifest(head + "a\ttrain\tm\tf\t1\t1\na\tval\tm\tf\t1\t1\n"), Error);
  EXPECT_THROW(parse_manifest(head + "a\ttrain\tm\tf\tx\t1\n"), Error);
}

}  // namespace
}  // namespace alps
