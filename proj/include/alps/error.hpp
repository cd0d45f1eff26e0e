#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace alps {

enum class Errc {
  io,
  bad_magic,
  unsupported_version,
  unsupported_dtype,
  truncated,
  dims_overflow,
  bad_shape,
  trailing_data,
  too_many_instances,
  invalid_instance_map,
  invalid_manifest,
  empty_mask,
  non_finite,
  under_populated,
  dim_mismatch,
  empty_pool,
  checkpoint_mismatch,
  size_mismatch,
  missing_label,
  label_out_of_range,
  no_pixels,
  invalid_config,
};

constexpr std::string_view errc_name(Errc e) {
  switch (e) {
    case Errc::io: return "io";
    case Errc::bad_magic: return "bad_magic";
    case Errc::unsupported_version: return "unsupported_version";
    case Errc::unsupported_dtype: return "unsupported_dtype";
    case Errc::truncated: return "truncated";
    case Errc::dims_overflow: return "dims_overflow";
    case Errc::bad_shape: return "bad_shape";
    case Errc::trailing_data: return "trailing_data";
    case Errc::too_many_instances: return "too_many_instances";
    case Errc::invalid_instance_map: return "invalid_instance_map";
    case Errc::invalid_manifest: return "invalid_manifest";
    case Errc::empty_mask: return "empty_mask";
    case Errc::non_finite: return "non_finite";
    case Errc::under_populated: return "under_populated";
    case Errc::dim_mismatch: return "dim_mismatch";
    case Errc::empty_pool: return "empty_pool";
    case Errc::checkpoint_mismatch: return "checkpoint_mismatch";
    case Errc::size_mismatch: return "size_mismatch";
    case Errc::missing_label: return "missing_label";
    case Errc::label_out_of_range: return "label_out_of_range";
    case Errc::no_pixels: return "no_pixels";
    case Errc::invalid_config: return "invalid_config";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers can branch on the kind of failure without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace alps
