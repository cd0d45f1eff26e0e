#include "alps/tensor.hpp"

#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace alps {
namespace {

using testing::TempDir;
using testing::slurp;
using testing::spit;

Errc read_error(const std::filesystem::path& p) {
  try {
    read_tensor(p);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return Errc::io;
}

TEST(TensorTest, ScalarFileIsTwentyBytes) {
  TempDir dir;
  auto t = Tensor::from<float>({1}, std::vector<float>{0.0f});
  write_tensor(t, dir / "t.alpt");
  auto bytes = slurp(dir / "t.alpt");
  ASSERT_EQ(bytes.size(), 20u);
  EXPECT_EQ(bytes.substr(0, 4), "ALPT");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 1);  // float32
  EXPECT_EQ(bytes[7], 1);  // rank
  EXPECT_EQ(bytes[8], 1);  // dims[0] low byte
  EXPECT_EQ(read_tensor(dir / "t.alpt"), t);
}

TEST(TensorTest, FeatureShapedPayloadSize) {
  TempDir dir;
  std::vector<float> data(256 * 64 * 64, 1.5f);
  auto t = Tensor::from<float>({256, 64, 64}, data);
  EXPECT_EQ(t.bytes.size(), 4194304u);
  write_tensor(t, dir / "f.alpt");
  EXPECT_EQ(std::filesystem::file_size(dir / "f.alpt"), 8u + 3 * 8 + 4194304u);
}

TEST(TensorTest, RoundTripIsBitExactForEveryDtype) {
  TempDir dir;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint64_t> dims;
    std::uniform_int_distribution<int> rank_dist(1, 4), dim_dist(1, 5);
    for (int r = rank_dist(rng); r > 0; --r) dims.push_back(dim_dist(rng));
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;

    std::vector<float> f(n);
    for (auto& v : f) {
      std::uint32_t bits = static_cast<std::uint32_t>(rng());
      std::memcpy(&v, &bits, 4);  // arbitrary bit patterns, NaNs included
    }
    std::vector<std::uint16_t> u16(n);
    for (auto& v : u16) v = static_cast<std::uint16_t>(rng());
    std::vector<std::uint8_t> u8(n);
    for (auto& v : u8) v = static_cast<std::uint8_t>(rng());

    for (const auto& t : {Tensor::from<float>(dims, f), Tensor::from<std::uint16_t>(dims, u16),
                          Tensor::from<std::uint8_t>(dims, u8)}) {
      write_tensor(t, dir / "t.alpt");
      auto first = slurp(dir / "t.alpt");
      auto back = read_tensor(dir / "t.alpt");
      EXPECT_EQ(back, t);
      write_tensor(back, dir / "t2.alpt");
      EXPECT_EQ(slurp(dir / "t2.alpt"), first);
    }
  }
}

TEST(TensorTest, ValuesRoundTrip) {
  std::vector<std::uint16_t> v = {1, 2, 65535, 0, 7, 9};
  auto t = Tensor::from<std::uint16_t>({2, 3}, v);
  EXPECT_EQ(t.values<std::uint16_t>(), v);
  EXPECT_THROW(t.values<float>(), Error);
}

TEST(TensorTest, DistinctErrors) {
  TempDir dir;
  write_tensor(Tensor::from<float>({2, 2}, std::vector<float>{1, 2, 3, 4}), dir / "ok.alpt");
  auto good = slurp(dir / "ok.alpt");

  auto bad = good;
  bad.replace(0, 4, "XXXX");
  spit(dir / "magic.alpt", bad);
  EXPECT_EQ(read_error(dir / "magic.alpt"), Errc::bad_magic);

  bad = good;
  bad[4] = 2;
  spit(dir / "version.alpt", bad);
  EXPECT_EQ(read_error(dir / "version.alpt"), Errc::unsupported_version);

  bad = good;
  bad[6] = 9;
  spit(dir / "dtype.alpt", bad);
  EXPECT_EQ(read_error(dir / "dtype.alpt"), Errc::unsupported_dtype);

  spit(dir / "short.alpt", good.substr(0, good.size() - 1));
  EXPECT_EQ(read_error(dir / "short.alpt"), Errc::truncated);

  spit(dir / "header.alpt", good.substr(0, 6));
  EXPECT_EQ(read_error(dir / "header.alpt"), Errc::truncated);

  bad = good;
  for (int i = 0; i < 8; ++i) bad[8 + i] = static_cast<char>(0xff);
  spit(dir / "overflow.alpt", bad);
  EXPECT_EQ(read_error(dir / "overflow.alpt"), Errc::dims_overflow);

  spit(dir / "trailing.alpt", good + "x");
  EXPECT_EQ(read_error(dir / "trailing.alpt"), Errc::trailing_data);

  EXPECT_EQ(read_error(dir / "missing.alpt"), Errc::io);
}

TEST(TensorTest, RowReaderStreamsInChunks) {
  TempDir dir;
  std::vector<float> data(7 * 3);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i);
  write_tensor(Tensor::from<float>({7, 3}, data), dir / "rows.alpt");

  RowReader reader(dir / "rows.alpt");
  EXPECT_EQ(reader.rows(), 7u);
  EXPECT_EQ(reader.cols(), 3u);
  std::vector<float> chunk, all;
  while (auto n = reader.read(3, chunk)) {
    EXPECT_LE(n, 3u);
    all.insert(all.end(), chunk.begin(), chunk.end());
  }
  EXPECT_EQ(all, data);
  reader.seek_row(5);
  EXPECT_EQ(reader.read(10, chunk), 2u);
  EXPECT_EQ(chunk.front(), 15.0f);
}

}  // namespace
}  // namespace alps
