#pragma once

// Agreement between pseudo-labels and ground truth: confusion matrix,
// optimal cluster-to-class assignment, mIoU and mAcc.

#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "alps/error.hpp"
#include "alps/raster.hpp"

namespace alps {

/// Rows are predicted classes, columns ground-truth classes.
struct ConfusionMatrix {
  std::uint32_t pred_classes = 0;
  std::uint32_t gt_classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  ConfusionMatrix(std::uint32_t k, std::uint32_t g) : pred_classes(k), gt_classes(g), counts(std::size_t{k} * g, 0) {}

  std::uint64_t& at(std::uint32_t p, std::uint32_t t) { return counts[std::size_t{p} * gt_classes + t]; }
  std::uint64_t at(std::uint32_t p, std::uint32_t t) const { return counts[std::size_t{p} * gt_classes + t]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }

  /// Adds one image pair; pixels that are kIgnoreLabel in either raster are skipped.
  void accumulate(const LabelRaster& pred, const LabelRaster& gt) {
    if (pred.width != gt.width || pred.height != gt.height)
      throw Error(Errc::size_mismatch, "prediction and ground truth differ in size");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      auto p = pred.pixels[i], t = gt.pixels[i];
      if (p == kIgnoreLabel || t == kIgnoreLabel) continue;
      if (p >= pred_classes || t >= gt_classes)
        throw Error(Errc::label_out_of_range, "label " + std::to_string(p >= pred_classes ? p : t) + " outside matrix");
      ++at(p, t);
    }
  }

  void merge(const ConfusionMatrix& o) {
    if (o.pred_classes != pred_classes || o.gt_classes != gt_classes)
      throw Error(Errc::size_mismatch, "confusion matrices differ in shape");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const LabelRaster& pred, const LabelRaster& gt, std::uint32_t k, std::uint32_t g) {
  ConfusionMatrix cm(k, g);
  cm.accumulate(pred, gt);
  return cm;
}

struct ClassMapping {
  std::vector<std::optional<std::uint32_t>> pred_to_gt;  // nullopt = unmatched
  std::uint64_t matched_mass = 0;

  bool operator==(const ClassMapping&) const = default;
};

namespace detail {

// Kuhn-Munkres with potentials for an n x m cost matrix, n <= m.
// Returns the column assigned to each row.
inline std::vector<std::size_t> hungarian_min(const std::vector<std::int64_t>& cost, std::size_t n, std::size_t m) {
  constexpr auto inf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> u(n + 1, 0), v(m + 1, 0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<std::int64_t> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      std::int64_t delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// One-to-one assignment over min(k, g) pairs maximizing matched pixels.
inline ClassMapping optimal_mapping(const ConfusionMatrix& cm) {
  const std::size_t k = cm.pred_classes, g = cm.gt_classes;
  if (k == 0 || g == 0) throw Error(Errc::invalid_config, "confusion matrix has no classes");
  ClassMapping out;
  out.pred_to_gt.assign(k, std::nullopt);
  if (k <= g) {
    std::vector<std::int64_t> cost(k * g);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t t = 0; t < g; ++t) cost[p * g + t] = -static_cast<std::int64_t>(cm.at(p, t));
    auto cols = detail::hungarian_min(cost, k, g);
    for (std::size_t p = 0; p < k; ++p) out.pred_to_gt[p] = static_cast<std::uint32_t>(cols[p]);
  } else {
    std::vector<std::int64_t> cost(g * k);
    for (std::size_t t = 0; t < g; ++t)
      for (std::size_t p = 0; p < k; ++p) cost[t * k + p] = -static_cast<std::int64_t>(cm.at(p, t));
    auto rows = detail::hungarian_min(cost, g, k);
    for (std::size_t t = 0; t < g; ++t) out.pred_to_gt[rows[t]] = static_cast<std::uint32_t>(t);
  }
  for (std::size_t p = 0; p < k; ++p)
    if (out.pred_to_gt[p]) out.matched_mass += cm.at(p, *out.pred_to_gt[p]);
  return out;
}

/// Diagnostic alternative: each predicted class goes to its majority
/// ground-truth class (ties to the lowest index); several may share one.
inline ClassMapping many_to_one_mapping(const ConfusionMatrix& cm) {
  ClassMapping out;
  out.pred_to_gt.assign(cm.pred_classes, std::nullopt);
  for (std::uint32_t p = 0; p < cm.pred_classes; ++p) {
    std::uint32_t best = 0;
    for (std::uint32_t t = 1; t < cm.gt_classes; ++t)
      if (cm.at(p, t) > cm.at(p, best)) best = t;
    if (cm.gt_classes > 0) {
      out.pred_to_gt[p] = best;
      out.matched_mass += cm.at(p, best);
    }
  }
  return out;
}

struct ClassScore {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::optional<double> iou;  // absent when tp + fp + fn == 0
  std::optional<double> acc;  // absent when tp + fn == 0
};

struct Scores {
  double miou = 0.0;
  double macc = 0.0;
  std::vector<ClassScore> per_class;  // indexed by ground-truth class
};

/// Scores the matrix after relabeling predicted classes through `mapping`.
/// Pixels of unmatched predicted classes count as misses for their true class.
inline Scores miou_macc(const ConfusionMatrix& cm, const ClassMapping& mapping) {
  if (cm.total() == 0) throw Error(Errc::no_pixels, "confusion matrix is empty");
  if (mapping.pred_to_gt.size() != cm.pred_classes) throw Error(Errc::size_mismatch, "mapping vs matrix");
  Scores s;
  s.per_class.resize(cm.gt_classes);
  for (std::uint32_t p = 0; p < cm.pred_classes; ++p) {
    const auto& target = mapping.pred_to_gt[p];
    for (std::uint32_t t = 0; t < cm.gt_classes; ++t) {
      const auto n = cm.at(p, t);
      if (target && *target == t) {
        s.per_class[t].tp += n;
      } else {
        s.per_class[t].fn += n;
        if (target) s.per_class[*target].fp += n;
      }
    }
  }
  double iou_sum = 0.0, acc_sum = 0.0;
  std::size_t iou_n = 0, acc_n = 0;
  for (auto& c : s.per_class) {
    if (c.tp + c.fp + c.fn > 0) {
      c.iou = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
      iou_sum += *c.iou;
      ++iou_n;
    }
    if (c.tp + c.fn > 0) {
      c.acc = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
      acc_sum += *c.acc;
      ++acc_n;
    }
  }
  s.miou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  s.macc = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  return s;
}

/// Per-class rows then a summary line; values are percentages.
inline std::string format_report(const Scores& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  auto pct = [&](const std::optional<double>& v) {
    std::ostringstream cell;
    if (v) cell << std::fixed << std::setprecision(2) << *v * 100.0;
    else cell << '-';
    return cell.str();
  };
  os << "class\tIoU\tAcc\ttp\tfp\tfn\n";
  for (std::size_t t = 0; t < s.per_class.size(); ++t) {
    const auto& c = s.per_class[t];
    os << t << '\t' << pct(c.iou) << '\t' << pct(c.acc) << '\t' << c.tp << '\t' << c.fp << '\t' << c.fn << '\n';
  }
  os << "mean\t" << s.miou * 100.0 << '\t' << s.macc * 100.0 << '\n';
  return os.str();
}

}  // namespace alps
