#pragma once

// Thin wrappers over libpng's simplified API for 8-bit gray and RGB images.

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "alps/error.hpp"
#include "alps/raster.hpp"

namespace alps {

namespace detail {

inline png_image begin_png_read(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::io, path.string() + ": " + msg);
  }
  return image;
}

inline void finish_png_read(png_image& image, void* buffer, const std::filesystem::path& path) {
  if (!png_image_finish_read(&image, nullptr, buffer, 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::io, path.string() + ": " + msg);
  }
}

inline void write_png(const std::filesystem::path& path, std::uint32_t w, std::uint32_t h, png_uint_32 format,
                      const void* buffer) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = w;
  image.height = h;
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer, 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::io, path.string() + ": " + msg);
  }
}

}  // namespace detail

inline void write_png_gray(const std::filesystem::path& path, const Raster<std::uint8_t>& r) {
  if (r.empty()) throw Error(Errc::bad_shape, path.string() + ": empty raster");
  detail::write_png(path, r.width, r.height, PNG_FORMAT_GRAY, r.pixels.data());
}

inline void write_png_rgb(const std::filesystem::path& path, const RgbRaster& r) {
  static_assert(sizeof(Rgb) == 3);
  if (r.empty()) throw Error(Errc::bad_shape, path.string() + ": empty raster");
  detail::write_png(path, r.width, r.height, PNG_FORMAT_RGB, r.pixels.data());
}

/// Reads a single-channel 8-bit PNG; color PNGs are rejected rather than
/// converted, since label values must survive unchanged.
inline Raster<std::uint8_t> read_png_gray(const std::filesystem::path& path) {
  auto image = detail::begin_png_read(path);
  if (image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_COLORMAP)) {
    png_image_free(&image);
    throw Error(Errc::bad_shape, path.string() + ": expected a single-channel PNG");
  }
  image.format = PNG_FORMAT_GRAY;
  Raster<std::uint8_t> out(image.width, image.height);
  detail::finish_png_read(image, out.pixels.data(), path);
  return out;
}

inline RgbRaster read_png_rgb(const std::filesystem::path& path) {
  auto image = detail::begin_png_read(path);
  image.format = PNG_FORMAT_RGB;
  RgbRaster out(image.width, image.height);
  detail::finish_png_read(image, out.pixels.data(), path);
  return out;
}

}  // namespace alps
