#pragma once

// ALPT tensor container: "ALPT" | u16 version | u8 dtype | u8 rank |
// rank x u64 dims | row-major payload. All integers little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "alps/error.hpp"

namespace alps {

inline constexpr std::array<char, 4> kTensorMagic = {'A', 'L', 'P', 'T'};
inline constexpr std::uint16_t kTensorVersion = 1;

// 1-3 carry interchange data; 4-5 are used by cluster checkpoints.
enum class DType : std::uint8_t { f32 = 1, u8 = 2, u16 = 3, u64 = 4, f64 = 5 };

constexpr bool is_supported_dtype(std::uint8_t code) { return code >= 1 && code <= 5; }

constexpr std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::u8: return 1;
    case DType::u16: return 2;
    case DType::u64: return 8;
    case DType::f64: return 8;
  }
  return 0;
}

template <class T> struct dtype_of;
template <> struct dtype_of<float> { static constexpr DType value = DType::f32; };
template <> struct dtype_of<std::uint8_t> { static constexpr DType value = DType::u8; };
template <> struct dtype_of<std::uint16_t> { static constexpr DType value = DType::u16; };
template <> struct dtype_of<std::uint64_t> { static constexpr DType value = DType::u64; };
template <> struct dtype_of<double> { static constexpr DType value = DType::f64; };

namespace detail {

template <class T>
void store_le(std::byte* out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::memcpy(out, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(out, out + sizeof(T));
}

template <class T>
T load_le(const std::byte* in) {
  std::array<std::byte, sizeof(T)> tmp;
  std::memcpy(tmp.data(), in, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(tmp.begin(), tmp.end());
  T value;
  std::memcpy(&value, tmp.data(), sizeof(T));
  return value;
}

// Returns false on overflow.
inline bool checked_product(std::span<const std::uint64_t> dims, std::uint64_t elem_size,
                            std::uint64_t& out) {
  std::uint64_t acc = elem_size;
  for (auto d : dims) {
    if (d != 0 && acc > std::numeric_limits<std::uint64_t>::max() / d) return false;
    acc *= d;
  }
  out = acc;
  return true;
}

}  // namespace detail

/// Dense row-major tensor. Payload bytes are kept in file (little-endian)
/// order so that serialization is a straight copy.
struct Tensor {
  DType dtype = DType::f32;
  std::vector<std::uint64_t> dims;
  std::vector<std::byte> bytes;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  template <class T>
  static Tensor from(std::vector<std::uint64_t> dims, std::span<const T> values) {
    Tensor t;
    t.dtype = dtype_of<T>::value;
    t.dims = std::move(dims);
    if (t.dims.empty() || t.element_count() != values.size())
      throw Error(Errc::bad_shape, "element count does not match dims");
    t.bytes.resize(values.size() * sizeof(T));
    if constexpr (std::endian::native == std::endian::little) {
      if (!values.empty()) std::memcpy(t.bytes.data(), values.data(), t.bytes.size());
    } else {
      for (std::size_t i = 0; i < values.size(); ++i)
        detail::store_le(t.bytes.data() + i * sizeof(T), values[i]);
    }
    return t;
  }

  template <class T>
  static Tensor from(std::vector<std::uint64_t> dims, const std::vector<T>& values) {
    return from<T>(std::move(dims), std::span<const T>(values));
  }

  template <class T>
  std::vector<T> values() const {
    if (dtype != dtype_of<T>::value) throw Error(Errc::unsupported_dtype, "tensor dtype mismatch");
    std::vector<T> out(bytes.size() / sizeof(T));
    if constexpr (std::endian::native == std::endian::little) {
      if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
    } else {
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = detail::load_le<T>(bytes.data() + i * sizeof(T));
    }
    return out;
  }

  bool operator==(const Tensor&) const = default;
};

struct TensorHeader {
  DType dtype = DType::f32;
  std::vector<std::uint64_t> dims;
  std::uint64_t payload_bytes = 0;

  std::size_t header_bytes() const { return 8 + 8 * dims.size(); }
};

inline std::vector<std::byte> encode_tensor_header(DType dtype, std::span<const std::uint64_t> dims) {
  std::vector<std::byte> out(8 + 8 * dims.size());
  std::memcpy(out.data(), kTensorMagic.data(), 4);
  detail::store_le<std::uint16_t>(out.data() + 4, kTensorVersion);
  out[6] = static_cast<std::byte>(dtype);
  out[7] = static_cast<std::byte>(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) detail::store_le<std::uint64_t>(out.data() + 8 + 8 * i, dims[i]);
  return out;
}

/// Parses and validates a header from `in`; leaves the stream at the payload.
inline TensorHeader read_tensor_header(std::istream& in, const std::string& origin) {
  std::array<std::byte, 8> fixed{};
  if (!in.read(reinterpret_cast<char*>(fixed.data()), 8))
    throw Error(Errc::truncated, origin + ": header shorter than 8 bytes");
  if (std::memcmp(fixed.data(), kTensorMagic.data(), 4) != 0) throw Error(Errc::bad_magic, origin);
  auto version = detail::load_le<std::uint16_t>(fixed.data() + 4);
  if (version != kTensorVersion)
    throw Error(Errc::unsupported_version, origin + ": version " + std::to_string(version));
  auto code = static_cast<std::uint8_t>(fixed[6]);
  if (!is_supported_dtype(code)) throw Error(Errc::unsupported_dtype, origin + ": dtype " + std::to_string(code));
  auto rank = static_cast<std::uint8_t>(fixed[7]);
  if (rank == 0) throw Error(Errc::bad_shape, origin + ": rank 0");

  TensorHeader h;
  h.dtype = static_cast<DType>(code);
  h.dims.resize(rank);
  std::vector<std::byte> raw(8u * rank);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw Error(Errc::truncated, origin + ": dims cut short");
  for (std::size_t i = 0; i < rank; ++i) {
    h.dims[i] = detail::load_le<std::uint64_t>(raw.data() + 8 * i);
    if (h.dims[i] == 0) throw Error(Errc::bad_shape, origin + ": zero-length dim");
  }
  if (!detail::checked_product(h.dims, dtype_size(h.dtype), h.payload_bytes) ||
      h.payload_bytes > static_cast<std::uint64_t>(std::numeric_limits<std::streamsize>::max()))
    throw Error(Errc::dims_overflow, origin);
  return h;
}

inline void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  if (!is_supported_dtype(static_cast<std::uint8_t>(t.dtype)))
    throw Error(Errc::unsupported_dtype, path.string());
  if (t.dims.empty() || t.dims.size() > 255) throw Error(Errc::bad_shape, path.string());
  std::uint64_t expect = 0;
  if (!detail::checked_product(t.dims, dtype_size(t.dtype), expect)) throw Error(Errc::dims_overflow, path.string());
  if (std::find(t.dims.begin(), t.dims.end(), 0u) != t.dims.end() || expect != t.bytes.size())
    throw Error(Errc::bad_shape, path.string() + ": payload does not match dims");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot open " + path.string() + " for writing");
  auto header = encode_tensor_header(t.dtype, t.dims);
  out.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
  if (!out) throw Error(Errc::io, "write failed: " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  auto h = read_tensor_header(in, path.string());

  in.seekg(0, std::ios::end);
  auto total = static_cast<std::uint64_t>(in.tellg());
  in.seekg(static_cast<std::streamoff>(h.header_bytes()));
  std::uint64_t available = total - h.header_bytes();
  if (available < h.payload_bytes) throw Error(Errc::truncated, path.string() + ": payload cut short");
  if (available > h.payload_bytes) throw Error(Errc::trailing_data, path.string());

  Tensor t;
  t.dtype = h.dtype;
  t.dims = std::move(h.dims);
  t.bytes.resize(h.payload_bytes);
  if (!in.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size())))
    throw Error(Errc::truncated, path.string());
  return t;
}

/// Streams rows of a rank-2 float32 tensor without loading the payload.
class RowReader {
 public:
  explicit RowReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error(Errc::io, "cannot open " + path.string());
    header_ = read_tensor_header(in_, path.string());
    if (header_.dtype != DType::f32 || header_.dims.size() != 2)
      throw Error(Errc::bad_shape, path.string() + ": expected rank-2 float32");
    in_.seekg(0, std::ios::end);
    auto total = static_cast<std::uint64_t>(in_.tellg());
    if (total - header_.header_bytes() < header_.payload_bytes) throw Error(Errc::truncated, path.string());
    rewind();
  }

  std::uint64_t rows() const { return header_.dims[0]; }
  std::uint64_t cols() const { return header_.dims[1]; }

  void rewind() {
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(header_.header_bytes()));
    next_row_ = 0;
  }

  void seek_row(std::uint64_t row) {
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(header_.header_bytes() + row * cols() * 4));
    next_row_ = row;
  }

  /// Reads up to `max_rows` rows into `out` (resized); returns rows read.
  std::size_t read(std::size_t max_rows, std::vector<float>& out) {
    auto n = static_cast<std::size_t>(std::min<std::uint64_t>(max_rows, rows() - next_row_));
    std::vector<std::byte> raw(n * cols() * 4);
    if (n > 0 && !in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
      throw Error(Errc::truncated, path_.string());
    out.resize(n * cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::load_le<float>(raw.data() + 4 * i);
    next_row_ += n;
    return n;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  TensorHeader header_;
  std::uint64_t next_row_ = 0;
};

}  // namespace alps
