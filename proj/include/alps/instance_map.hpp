#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "alps/error.hpp"
#include "alps/png_io.hpp"
#include "alps/raster.hpp"
#include "alps/tensor.hpp"

namespace alps {

inline constexpr std::uint32_t kMaxInstances = 65535;

/// Number of instances M, i.e. the largest identifier present.
inline std::uint16_t instance_count(const InstanceMap& map) {
  auto it = std::max_element(map.pixels.begin(), map.pixels.end());
  return it == map.pixels.end() ? 0 : *it;
}

/// Throws unless the identifiers present are exactly {1..M}.
inline void validate_instance_map(const InstanceMap& map) {
  if (map.size() != std::size_t{map.width} * map.height)
    throw Error(Errc::invalid_instance_map, "pixel count does not match dimensions");
  std::vector<bool> seen(std::size_t{instance_count(map)} + 1, false);
  for (auto id : map.pixels) seen[id] = true;
  for (std::size_t id = 1; id < seen.size(); ++id)
    if (!seen[id]) throw Error(Errc::invalid_instance_map, "identifier gap at " + std::to_string(id));
}

/// Every distinct non-background color becomes one instance. Identifiers
/// follow ascending (r, g, b) order starting at 1.
inline InstanceMap decode_rgb_instance_map(const RgbRaster& rgb, Rgb background) {
  if (rgb.empty()) throw Error(Errc::bad_shape, "empty RGB raster");
  std::map<Rgb, std::uint16_t> ids;
  for (const auto& px : rgb.pixels)
    if (px != background) ids.emplace(px, 0);
  if (ids.size() > kMaxInstances)
    throw Error(Errc::too_many_instances, std::to_string(ids.size()) + " distinct colors");
  std::uint16_t next = 1;
  for (auto& [color, id] : ids) id = next++;

  InstanceMap out(rgb.width, rgb.height, 0);
  for (std::size_t i = 0; i < rgb.size(); ++i)
    if (rgb.pixels[i] != background) out.pixels[i] = ids.at(rgb.pixels[i]);
  return out;
}

inline Tensor instance_map_to_tensor(const InstanceMap& map) {
  return Tensor::from<std::uint16_t>({map.height, map.width}, map.pixels);
}

inline InstanceMap instance_map_from_tensor(const Tensor& t) {
  if (t.dtype != DType::u16 || t.dims.size() != 2)
    throw Error(Errc::invalid_instance_map, "expected rank-2 uint16 tensor");
  InstanceMap map;
  map.height = static_cast<std::uint32_t>(t.dims[0]);
  map.width = static_cast<std::uint32_t>(t.dims[1]);
  map.pixels = t.values<std::uint16_t>();
  validate_instance_map(map);
  return map;
}

/// `.png` files are decoded as RGB bitmaps; anything else is read as ALPT.
inline InstanceMap load_instance_map(const std::filesystem::path& path, Rgb background = {}) {
  if (path.extension() == ".png") return decode_rgb_instance_map(read_png_rgb(path), background);
  return instance_map_from_tensor(read_tensor(path));
}

inline void save_instance_map(const InstanceMap& map, const std::filesystem::path& path) {
  write_tensor(instance_map_to_tensor(map), path);
}

}  // namespace alps
