#pragma once

// Corpus manifest: tab-separated UTF-8 text. Metadata lines start with '#',
// followed by one header line naming the columns and one record per image.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "alps/error.hpp"
#include "alps/rng.hpp"

namespace alps {

enum class Split { train, val };

constexpr std::string_view split_name(Split s) { return s == Split::train ? "train" : "val"; }

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path instance_map;
  std::filesystem::path feature_map;
  std::uint32_t source_width = 0;
  std::uint32_t source_height = 0;
  Split split = Split::train;

  bool operator==(const ManifestEntry&) const = default;
};

struct SplitRatio {
  std::uint32_t train_parts = 7;
  std::uint32_t val_parts = 3;

  bool operator==(const SplitRatio&) const = default;
};

struct ManifestParams {
  double sigma = 0.3;
  std::uint32_t k = 16;
  std::uint64_t batch_size = 4096;

  bool operator==(const ManifestParams&) const = default;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;  // ascending image_id
  SplitRatio ratio;
  std::uint64_t seed = 0;
  ManifestParams params;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [s](const auto& e) { return e.split == s; }));
  }

  bool operator==(const CorpusManifest&) const = default;
};

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void validate_image_id(std::string_view id) {
  if (id.empty() || id == "." || id == ".." ||
      id.find_first_of("\t\n\r/\\") != std::string_view::npos || id.front() == '#')
    throw Error(Errc::invalid_manifest, "unusable image_id '" + std::string(id) + "'");
}

/// Number of train entries: n * train / (train + val), rounded half up.
inline std::size_t train_count(std::size_t n, SplitRatio ratio) {
  std::uint64_t parts = std::uint64_t{ratio.train_parts} + ratio.val_parts;
  return static_cast<std::size_t>((2 * n * std::uint64_t{ratio.train_parts} + parts) / (2 * parts));
}

/// Deterministic train/val partition. Input order does not matter: entries
/// are normalized by image_id before the seeded shuffle.
inline CorpusManifest split_corpus(std::vector<ManifestEntry> entries, SplitRatio ratio, std::uint64_t seed,
                                   ManifestParams params = {}) {
  if (entries.empty()) throw Error(Errc::invalid_manifest, "no entries to split");
  if (ratio.train_parts == 0 || ratio.val_parts == 0) throw Error(Errc::invalid_manifest, "ratio parts must be positive");
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    validate_image_id(entries[i].image_id);
    if (i > 0 && entries[i].image_id == entries[i - 1].image_id)
      throw Error(Errc::invalid_manifest, "duplicate image_id " + entries[i].image_id);
  }

  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  Engine eng(derive_seed(seed, "split"));
  stable_shuffle(std::span<std::size_t>(order), eng);
  auto n_train = train_count(entries.size(), ratio);
  for (std::size_t i = 0; i < order.size(); ++i) entries[order[i]].split = i < n_train ? Split::train : Split::val;

  CorpusManifest m;
  m.entries = std::move(entries);
  m.ratio = ratio;
  m.seed = seed;
  m.params = params;
  return m;
}

inline constexpr std::string_view kManifestColumns =
    "image_id\tsplit\tinstance_map\tfeature_map\tsource_width\tsource_height";

inline std::string format_manifest(const CorpusManifest& m) {
  std::ostringstream os;
  os << "#alps-manifest\t1\n";
  os << "#seed\t" << m.seed << '\n';
  os << "#ratio\t" << m.ratio.train_parts << ':' << m.ratio.val_parts << '\n';
  os << "#sigma\t" << format_double(m.params.sigma) << '\n';
  os << "#k\t" << m.params.k << '\n';
  os << "#batch_size\t" << m.params.batch_size << '\n';
  os << kManifestColumns << '\n';
  for (const auto& e : m.entries) {
    os << e.image_id << '\t' << split_name(e.split) << '\t' << e.instance_map.generic_string() << '\t'
       << e.feature_map.generic_string() << '\t' << e.source_width << '\t' << e.source_height << '\n';
  }
  return os.str();
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, std::string_view what) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error(Errc::invalid_manifest, "bad " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

/// Relative paths are resolved against `base_dir`.
inline CorpusManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {}) {
  CorpusManifest m;
  bool header_seen = false;
  std::set<std::string, std::less<>> ids;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = detail::split_tabs(line);
    if (line.front() == '#') {
      if (header_seen) throw Error(Errc::invalid_manifest, "metadata after header line");
      if (fields.size() != 2) continue;
      auto key = fields[0].substr(1);
      auto val = fields[1];
      if (key == "seed") m.seed = detail::parse_number<std::uint64_t>(val, "seed");
      else if (key == "sigma") m.params.sigma = detail::parse_number<double>(val, "sigma");
      else if (key == "k") m.params.k = detail::parse_number<std::uint32_t>(val, "k");
      else if (key == "batch_size") m.params.batch_size = detail::parse_number<std::uint64_t>(val, "batch_size");
      else if (key == "ratio") {
        auto colon = val.find(':');
        if (colon == std::string_view::npos) throw Error(Errc::invalid_manifest, "bad ratio");
        m.ratio.train_parts = detail::parse_number<std::uint32_t>(val.substr(0, colon), "ratio");
        m.ratio.val_parts = detail::parse_number<std::uint32_t>(val.substr(colon + 1), "ratio");
      }
      continue;
    }
    if (!header_seen) {
      if (line != kManifestColumns) throw Error(Errc::invalid_manifest, "unexpected header line");
      header_seen = true;
      continue;
    }
    if (fields.size() != 6)
      throw Error(Errc::invalid_manifest, "line " + std::to_string(line_no) + ": expected 6 fields");
    ManifestEntry e;
    e.image_id = std::string(fields[0]);
    validate_image_id(e.image_id);
    if (!ids.insert(e.image_id).second) throw Error(Errc::invalid_manifest, "duplicate image_id " + e.image_id);
    if (fields[1] == "train") e.split = Split::train;
    else if (fields[1] == "val") e.split = Split::val;
    else throw Error(Errc::invalid_manifest, "line " + std::to_string(line_no) + ": bad split");
    auto resolve = [&](std::string_view p) {
      std::filesystem::path path{std::string(p)};
      return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    e.instance_map = resolve(fields[2]);
    e.feature_map = resolve(fields[3]);
    e.source_width = detail::parse_number<std::uint32_t>(fields[4], "source_width");
    e.source_height = detail::parse_number<std::uint32_t>(fields[5], "source_height");
    m.entries.push_back(std::move(e));
  }
  if (!header_seen) throw Error(Errc::invalid_manifest, "missing header line");
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
  return m;
}

inline void save_manifest(const CorpusManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot open " + path.string() + " for writing");
  out << format_manifest(m);
  if (!out) throw Error(Errc::io, "write failed: " + path.string());
}

inline CorpusManifest load_manifest(const std::filesystem::path& path, bool check_paths = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto m = parse_manifest(ss.str(), path.parent_path());
  if (check_paths) {
    for (const auto& e : m.entries) {
      for (const auto& p : {e.instance_map, e.feature_map})
        if (!std::filesystem::exists(p))
          throw Error(Errc::invalid_manifest, e.image_id + ": missing " + p.string());
    }
  }
  return m;
}

}  // namespace alps
