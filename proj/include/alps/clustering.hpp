#pragma once

// Streaming mini-batch K-means. Each point moves its nearest center by
// 1/count toward itself, so every center is the running mean of the points
// it has absorbed (plus its seed point).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "alps/error.hpp"
#include "alps/manifest.hpp"
#include "alps/rng.hpp"
#include "alps/tensor.hpp"

namespace alps {

struct InertiaRecord {
  std::uint64_t epoch = 0;
  double mean_sq_distance = 0.0;

  bool operator==(const InertiaRecord&) const = default;
};

struct ClusterModel {
  std::uint32_t k = 0;
  std::uint32_t dim = 0;
  std::vector<double> centers;        // k x dim
  std::vector<std::uint64_t> counts;  // points absorbed per center, seed point included
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;            // completed passes
  std::vector<InertiaRecord> inertia_history;

  // Mid-fit state, persisted so an interrupted fit resumes exactly.
  std::uint64_t cursor = 0;  // points consumed in the current epoch
  std::vector<double> epoch_start_centers;
  std::vector<std::uint64_t> epoch_start_counts;
  bool converged = false;

  std::span<const double> center(std::uint32_t c) const {
    return std::span<const double>(centers).subspan(std::size_t{c} * dim, dim);
  }

  void begin_epoch() {
    epoch_start_centers = centers;
    epoch_start_counts = counts;
    cursor = 0;
  }

  bool operator==(const ClusterModel&) const = default;
};

struct Nearest {
  std::uint32_t index = 0;
  double sq_distance = 0.0;
};

namespace detail {

template <class A, class B>
double sq_distance(std::span<const A> a, std::span<const B> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

inline void check_rows(const ClusterModel& m, std::span<const float> rows) {
  if (m.dim == 0 || rows.size() % m.dim != 0)
    throw Error(Errc::dim_mismatch, "batch length " + std::to_string(rows.size()) + " is not a multiple of dim " +
                                        std::to_string(m.dim));
}

}  // namespace detail

/// Squared-Euclidean nearest center; ties go to the lowest index.
inline Nearest nearest_center(const ClusterModel& m, std::span<const float> x) {
  if (x.size() != m.dim) throw Error(Errc::dim_mismatch, "point has " + std::to_string(x.size()) + " dims");
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (std::uint32_t c = 0; c < m.k; ++c) {
    double d = detail::sq_distance(x, m.center(c));
    if (d < best.sq_distance) best = {c, d};
  }
  return best;
}

/// Pseudo class label for one PFL.
inline std::uint32_t predict(const ClusterModel& m, std::span<const float> x) { return nearest_center(m, x).index; }

/// k-means++ seeding over the first batch (row-major, `dim` columns).
inline ClusterModel init_centers(std::span<const float> batch, std::uint32_t dim, std::uint32_t k,
                                 std::uint64_t seed) {
  if (k == 0 || dim == 0) throw Error(Errc::invalid_config, "k and dim must be positive");
  if (batch.size() % dim != 0) throw Error(Errc::dim_mismatch, "batch length is not a multiple of dim");
  const std::size_t n = batch.size() / dim;
  auto row = [&](std::size_t i) { return batch.subspan(i * dim, dim); };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    auto ra = row(a), rb = row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  std::size_t distinct = n == 0 ? 0 : 1;
  for (std::size_t i = 1; i < n; ++i)
    if (!std::ranges::equal(row(order[i - 1]), row(order[i]))) ++distinct;
  if (distinct < k)
    throw Error(Errc::under_populated,
                std::to_string(distinct) + " distinct points for " + std::to_string(k) + " clusters");

  ClusterModel m;
  m.k = k;
  m.dim = dim;
  m.seed = seed;
  m.centers.reserve(std::size_t{k} * dim);
  m.counts.assign(k, 1);

  Engine eng(derive_seed(seed, "init"));
  auto add_center = [&](std::size_t i) { m.centers.insert(m.centers.end(), row(i).begin(), row(i).end()); };
  add_center(static_cast<std::size_t>(uniform_index(eng, n)));

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = detail::sq_distance(row(i), m.center(0));
  for (std::uint32_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    const double r = uniform01(eng) * total;
    std::size_t pick = n;
    std::size_t last_positive = n;
    double cum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      last_positive = i;
      cum += d2[i];
      if (cum > r) {
        pick = i;
        break;
      }
    }
    if (pick == n) pick = last_positive;
    add_center(pick);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], detail::sq_distance(row(i), m.center(c)));
  }
  m.begin_epoch();
  return m;
}

/// Sequential online update over `rows` in order.
inline void partial_fit(ClusterModel& m, std::span<const float> rows) {
  detail::check_rows(m, rows);
  if (m.k == 0) throw Error(Errc::invalid_config, "model is not initialized");
  for (std::size_t off = 0; off < rows.size(); off += m.dim) {
    auto x = rows.subspan(off, m.dim);
    auto c = nearest_center(m, x).index;
    const double eta = 1.0 / static_cast<double>(++m.counts[c]);
    double* ctr = m.centers.data() + std::size_t{c} * m.dim;
    for (std::uint32_t j = 0; j < m.dim; ++j) ctr[j] += eta * (static_cast<double>(x[j]) - ctr[j]);
  }
}

/// Replaces every center that absorbed nothing since the epoch began with
/// the pool point farthest from its nearest live center. Pool points that
/// coincide with a live center are never used. Returns the number replaced.
inline std::size_t reseed_empty(ClusterModel& m, std::span<const float> pool) {
  detail::check_rows(m, pool);
  if (pool.empty()) throw Error(Errc::empty_pool, "no candidate points for reseeding");
  const auto& start = m.epoch_start_counts.size() == m.k ? m.epoch_start_counts : m.counts;

  std::vector<bool> live(m.k);
  for (std::uint32_t c = 0; c < m.k; ++c) live[c] = m.counts[c] != start[c];
  std::size_t replaced = 0;
  const std::size_t n = pool.size() / m.dim;
  for (std::uint32_t c = 0; c < m.k; ++c) {
    if (live[c]) continue;
    std::size_t best = n;
    double best_d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto x = pool.subspan(i * m.dim, m.dim);
      double nearest = std::numeric_limits<double>::infinity();
      for (std::uint32_t o = 0; o < m.k; ++o)
        if (live[o]) nearest = std::min(nearest, detail::sq_distance(x, m.center(o)));
      if (nearest == std::numeric_limits<double>::infinity()) nearest = detail::sq_distance(x, m.center(c));
      if (nearest > best_d) {
        best = i;
        best_d = nearest;
      }
    }
    if (best == n) continue;
    auto x = pool.subspan(best * m.dim, m.dim);
    std::copy(x.begin(), x.end(), m.centers.begin() + std::ptrdiff_t(std::size_t{c} * m.dim));
    m.counts[c] = 1;
    live[c] = true;
    ++replaced;
  }
  return replaced;
}

/// Mean over points of the squared distance to the nearest center.
inline double mean_sq_distance(const ClusterModel& m, std::span<const float> rows) {
  detail::check_rows(m, rows);
  if (rows.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t off = 0; off < rows.size(); off += m.dim) acc += nearest_center(m, rows.subspan(off, m.dim)).sq_distance;
  return acc / static_cast<double>(rows.size() / m.dim);
}

// ---------------------------------------------------------------------------
// Checkpoints: a directory holding header.tsv plus ALPT tensors.

namespace detail {

inline std::string checkpoint_header(const ClusterModel& m) {
  std::ostringstream os;
  os << "key\tvalue\n";
  os << "format\talps-checkpoint-1\n";
  os << "seed\t" << m.seed << '\n';
  os << "epoch\t" << m.epoch << '\n';
  os << "k\t" << m.k << '\n';
  os << "dim\t" << m.dim << '\n';
  os << "cursor\t" << m.cursor << '\n';
  os << "converged\t" << (m.converged ? 1 : 0) << '\n';
  for (const auto& r : m.inertia_history) os << "inertia\t" << r.epoch << ':' << format_double(r.mean_sq_distance) << '\n';
  return os.str();
}

}  // namespace detail

inline void save_checkpoint(const ClusterModel& m, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  auto tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    std::ofstream out(tmp / "header.tsv", std::ios::binary);
    out << detail::checkpoint_header(m);
    if (!out) throw Error(Errc::io, "cannot write checkpoint header in " + tmp.string());
  }
  write_tensor(Tensor::from<double>({m.k, m.dim}, m.centers), tmp / "centers.alpt");
  write_tensor(Tensor::from<std::uint64_t>({m.k}, m.counts), tmp / "counts.alpt");
  write_tensor(Tensor::from<double>({m.k, m.dim}, m.epoch_start_centers), tmp / "epoch_centers.alpt");
  write_tensor(Tensor::from<std::uint64_t>({m.k}, m.epoch_start_counts), tmp / "epoch_counts.alpt");
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

struct CheckpointExpectation {
  std::optional<std::uint32_t> k;
  std::optional<std::uint32_t> dim;
};

inline ClusterModel load_checkpoint(const std::filesystem::path& dir, CheckpointExpectation expect = {}) {
  std::ifstream in(dir / "header.tsv", std::ios::binary);
  if (!in) throw Error(Errc::io, "no checkpoint header in " + dir.string());
  ClusterModel m;
  std::string line;
  bool format_ok = false;
  auto num = [&](std::string_view s) { return detail::parse_number<std::uint64_t>(s, "checkpoint field"); };
  while (std::getline(in, line)) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    std::string_view key(line.data(), tab), val(line.data() + tab + 1, line.size() - tab - 1);
    if (key == "format") format_ok = val == "alps-checkpoint-1";
    else if (key == "seed") m.seed = num(val);
    else if (key == "epoch") m.epoch = num(val);
    else if (key == "k") m.k = static_cast<std::uint32_t>(num(val));
    else if (key == "dim") m.dim = static_cast<std::uint32_t>(num(val));
    else if (key == "cursor") m.cursor = num(val);
    else if (key == "converged") m.converged = num(val) != 0;
    else if (key == "inertia") {
      auto colon = val.find(':');
      if (colon == std::string_view::npos) throw Error(Errc::checkpoint_mismatch, "bad inertia record");
      m.inertia_history.push_back(
          {num(val.substr(0, colon)), detail::parse_number<double>(val.substr(colon + 1), "inertia")});
    }
  }
  if (!format_ok) throw Error(Errc::checkpoint_mismatch, dir.string() + ": unsupported checkpoint version");
  if (expect.k && *expect.k != m.k)
    throw Error(Errc::checkpoint_mismatch, "checkpoint has k=" + std::to_string(m.k) + ", expected " +
                                               std::to_string(*expect.k));
  if (expect.dim && *expect.dim != m.dim)
    throw Error(Errc::checkpoint_mismatch, "checkpoint has dim=" + std::to_string(m.dim));

  auto load = [&](const char* name, DType dtype, std::vector<std::uint64_t> dims) {
    auto t = read_tensor(dir / name);
    if (t.dtype != dtype || t.dims != dims) throw Error(Errc::checkpoint_mismatch, std::string(name) + " shape");
    return t;
  };
  m.centers = load("centers.alpt", DType::f64, {m.k, m.dim}).values<double>();
  m.counts = load("counts.alpt", DType::u64, {m.k}).values<std::uint64_t>();
  m.epoch_start_centers = load("epoch_centers.alpt", DType::f64, {m.k, m.dim}).values<double>();
  m.epoch_start_counts = load("epoch_counts.alpt", DType::u64, {m.k}).values<std::uint64_t>();
  for (double v : m.centers)
    if (!std::isfinite(v)) throw Error(Errc::non_finite, "checkpoint center is not finite");
  return m;
}

// ---------------------------------------------------------------------------
// Epoch driver over a deterministic row stream.

/// Random-access source of float rows. RowReader satisfies it.
template <class S>
concept RowSource = requires(S s, std::size_t n, std::vector<float>& out, std::uint64_t r) {
  { s.rows() } -> std::convertible_to<std::uint64_t>;
  { s.cols() } -> std::convertible_to<std::uint64_t>;
  s.seek_row(r);
  { s.read(n, out) } -> std::convertible_to<std::size_t>;
};

/// In-memory row source.
class MemoryRows {
 public:
  MemoryRows(std::span<const float> data, std::uint32_t dim) : data_(data), dim_(dim) {
    if (dim == 0 || data.size() % dim != 0) throw Error(Errc::dim_mismatch, "row data vs dim");
  }
  std::uint64_t rows() const { return data_.size() / dim_; }
  std::uint64_t cols() const { return dim_; }
  void seek_row(std::uint64_t r) { next_ = std::min<std::uint64_t>(r, rows()); }
  std::size_t read(std::size_t max_rows, std::vector<float>& out) {
    auto n = static_cast<std::size_t>(std::min<std::uint64_t>(max_rows, rows() - next_));
    auto s = data_.subspan(next_ * dim_, n * dim_);
    out.assign(s.begin(), s.end());
    next_ += n;
    return n;
  }

 private:
  std::span<const float> data_;
  std::uint32_t dim_;
  std::uint64_t next_ = 0;
};

struct FitConfig {
  std::uint32_t k = 16;
  std::uint64_t batch_size = 4096;
  std::uint32_t epochs = 2;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;             // mean center displacement per epoch
  std::uint64_t checkpoint_every = 0;  // batches; 0 = only at epoch ends

  void validate() const {
    if (k == 0) throw Error(Errc::invalid_config, "k must be at least 1");
    if (batch_size == 0) throw Error(Errc::invalid_config, "batch_size must be at least 1");
  }
};

using CheckpointHook = std::function<void(const ClusterModel&)>;

/// Mean Euclidean displacement of the centers since the epoch began.
inline double epoch_displacement(const ClusterModel& m) {
  if (m.epoch_start_centers.size() != m.centers.size() || m.k == 0) return std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (std::uint32_t c = 0; c < m.k; ++c) {
    auto start = std::span<const double>(m.epoch_start_centers).subspan(std::size_t{c} * m.dim, m.dim);
    acc += std::sqrt(detail::sq_distance(m.center(c), start));
  }
  return acc / m.k;
}

/// Fits (or resumes fitting) over `src` for cfg.epochs passes. Each pass
/// streams batches in row order; at the end of a pass starving centers are
/// reseeded from the final batch, inertia is recorded and convergence is
/// tested. `hook` sees the model after every epoch and every
/// cfg.checkpoint_every batches.
template <RowSource Source>
ClusterModel fit_stream(Source& src, const FitConfig& cfg, std::optional<ClusterModel> resume = std::nullopt,
                        const CheckpointHook& hook = {}) {
  cfg.validate();
  const auto dim = static_cast<std::uint32_t>(src.cols());
  std::vector<float> batch;
  ClusterModel m;
  if (resume) {
    m = std::move(*resume);
    if (m.k != cfg.k || m.dim != dim) throw Error(Errc::checkpoint_mismatch, "resume model does not match config");
  } else {
    src.seek_row(0);
    src.read(static_cast<std::size_t>(cfg.batch_size), batch);
    m = init_centers(batch, dim, cfg.k, cfg.seed);
    // The stream revisits the seed points, so they start uncounted: each
    // center is then exactly the running mean of the points it absorbed.
    std::fill(m.counts.begin(), m.counts.end(), 0);
    m.begin_epoch();
  }

  std::uint64_t batches = 0;
  while (m.epoch < cfg.epochs && !m.converged) {
    src.seek_row(m.cursor);
    while (m.cursor < src.rows()) {
      auto n = src.read(static_cast<std::size_t>(cfg.batch_size), batch);
      partial_fit(m, batch);
      m.cursor += n;
      ++batches;
      if (cfg.checkpoint_every != 0 && batches % cfg.checkpoint_every == 0 && m.cursor < src.rows() && hook) hook(m);
    }

    const auto rows = src.rows();
    src.seek_row(rows > cfg.batch_size ? rows - cfg.batch_size : 0);
    src.read(static_cast<std::size_t>(cfg.batch_size), batch);
    if (!batch.empty()) reseed_empty(m, batch);

    double inertia = 0.0;
    src.seek_row(0);
    while (auto n = src.read(static_cast<std::size_t>(cfg.batch_size), batch))
      inertia += mean_sq_distance(m, batch) * static_cast<double>(n);
    if (rows > 0) inertia /= static_cast<double>(rows);

    const double moved = epoch_displacement(m);
    ++m.epoch;
    m.inertia_history.push_back({m.epoch, inertia});
    if (moved < cfg.tolerance) m.converged = true;
    m.begin_epoch();
    if (hook) hook(m);
  }
  return m;
}

}  // namespace alps
