#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "decodiff/tensor.hpp"

namespace decodiff {

struct LabeledScores {
  std::vector<double> scores;
  std::vector<int> labels;  // 1 = anomalous

  void validate() const {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    for (double s : scores)
      if (!std::isfinite(s)) throw std::invalid_argument("scores must be finite");
    for (int l : labels)
      if (l != 0 && l != 1) throw std::invalid_argument("labels must be 0 or 1");
  }
};

struct PixelEvalCase {
  Map2D anomaly_map;
  std::vector<std::uint8_t> gt_mask;  // row-major, same size as the map
};

namespace detail {

/// Threshold events in descending score order; each group of tied scores is
/// one event carrying its positive and negative counts.
struct TieGroup {
  double score;
  long long pos;
  long long neg;
};

inline std::vector<TieGroup> tie_groups(const LabeledScores& d) {
  std::vector<std::size_t> idx(d.scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return d.scores[a] > d.scores[b]; });
  std::vector<TieGroup> g;
  for (std::size_t i : idx) {
    if (g.empty() || g.back().score != d.scores[i]) g.push_back({d.scores[i], 0, 0});
    (d.labels[i] ? g.back().pos : g.back().neg)++;
  }
  return g;
}

inline std::pair<long long, long long> class_counts(const LabeledScores& d) {
  long long p = std::count(d.labels.begin(), d.labels.end(), 1);
  return {p, static_cast<long long>(d.labels.size()) - p};
}

}  // namespace detail

/// Mann-Whitney AUROC: P(s+ > s-) + P(s+ == s-)/2.
inline double auroc(const LabeledScores& d) {
  d.validate();
  auto [p, n] = detail::class_counts(d);
  if (p == 0 || n == 0) throw std::invalid_argument("AUROC needs both classes");
  // Twice the U statistic, kept integral.
  long long twice_u = 0, neg_below = n;
  for (const auto& g : detail::tie_groups(d)) {
    neg_below -= g.neg;
    twice_u += 2 * g.pos * neg_below + g.pos * g.neg;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

/// Average precision: sum over descending thresholds of precision times the
/// recall increment, with ties forming one threshold.
inline double auprc(const LabeledScores& d) {
  d.validate();
  auto [p, n] = detail::class_counts(d);
  if (p == 0) throw std::invalid_argument("AUPRC needs at least one positive");
  long long tp = 0, fp = 0;
  double ap = 0;
  for (const auto& g : detail::tie_groups(d)) {
    tp += g.pos;
    fp += g.neg;
    if (g.pos == 0) continue;
    ap += (static_cast<double>(tp) / static_cast<double>(tp + fp)) * (static_cast<double>(g.pos) / p);
  }
  return ap;
}

/// Best F1 over thresholds "score >= s" for s in the distinct score set.
inline double f1_max(const LabeledScores& d) {
  d.validate();
  auto [p, n] = detail::class_counts(d);
  if (p == 0) throw std::invalid_argument("f1_max needs at least one positive");
  long long tp = 0, fp = 0;
  double best = 0;
  for (const auto& g : detail::tie_groups(d)) {
    tp += g.pos;
    fp += g.neg;
    const long long fn = p - tp;
    best = std::max(best, 2.0 * tp / static_cast<double>(2 * tp + fp + fn));
  }
  return best;
}

/// 8-connected component labels of a binary mask; 0 = background, regions
/// numbered from 1 in raster order of their first pixel.
inline std::vector<int> label_regions(const std::vector<std::uint8_t>& mask, int height, int width, int& count) {
  std::vector<int> lab(mask.size(), 0);
  count = 0;
  std::vector<int> stack;
  for (int start = 0; start < static_cast<int>(mask.size()); ++start) {
    if (!mask[start] || lab[start]) continue;
    lab[start] = ++count;
    stack.push_back(start);
    while (!stack.empty()) {
      int cur = stack.back();
      stack.pop_back();
      int cy = cur / width, cx = cur % width;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int y = cy + dy, x = cx + dx;
          if (y < 0 || y >= height || x < 0 || x >= width) continue;
          int k = y * width + x;
          if (mask[k] && !lab[k]) {
            lab[k] = count;
            stack.push_back(k);
          }
        }
    }
  }
  return lab;
}

/// Integrates a PRO-vs-FPR curve (points in increasing-FPR order) over
/// [0, limit] by the trapezoid rule and divides by `limit`. Left of the first
/// point and right of the last the curve is held flat.
inline double integrate_pro_curve(const std::vector<double>& fpr, const std::vector<double>& pro, double limit) {
  double area = 0;
  double x_prev = 0, y_prev = pro.front();
  for (std::size_t i = 0; i < fpr.size(); ++i) {
    double x = fpr[i], y = pro[i];
    if (x >= limit) {
      if (x > x_prev) {
        double y_lim = y_prev + (y - y_prev) * (limit - x_prev) / (x - x_prev);
        area += 0.5 * (y_prev + y_lim) * (limit - x_prev);
      }
      x_prev = limit;
      y_prev = y;
      return area / limit;
    }
    area += 0.5 * (y_prev + y) * (x - x_prev);
    x_prev = x;
    y_prev = y;
  }
  area += y_prev * (limit - x_prev);
  return area / limit;
}

/// Area under the per-region-overlap curve up to `fpr_limit`, normalized.
/// Regions are 8-connected components of each ground-truth mask; FPR is global
/// over all normal pixels of all cases.
inline double aupro(const std::vector<PixelEvalCase>& cases, double fpr_limit = 0.3) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw std::invalid_argument("fpr_limit must be in (0, 1]");
  struct Px {
    double score;
    int region;  // -1 for normal pixels
  };
  std::vector<Px> px;
  std::vector<long long> region_size;
  long long negatives = 0;
  for (const auto& c : cases) {
    if (c.gt_mask.size() != c.anomaly_map.size()) throw ShapeError("AUPRO: map and mask sizes differ");
    int count = 0;
    auto lab = label_regions(c.gt_mask, c.anomaly_map.height, c.anomaly_map.width, count);
    const int offset = static_cast<int>(region_size.size());
    region_size.resize(region_size.size() + count, 0);
    for (std::size_t i = 0; i < lab.size(); ++i) {
      if (!std::isfinite(c.anomaly_map.values[i])) throw std::invalid_argument("AUPRO: non-finite score");
      int r = lab[i] ? offset + lab[i] - 1 : -1;
      if (r >= 0) ++region_size[r];
      else ++negatives;
      px.push_back({c.anomaly_map.values[i], r});
    }
  }
  if (region_size.empty()) throw std::invalid_argument("AUPRO needs at least one anomalous region");
  std::sort(px.begin(), px.end(), [](const Px& a, const Px& b) { return a.score > b.score; });

  std::vector<long long> covered(region_size.size(), 0);
  std::vector<double> fpr, pro;
  long long fp = 0;
  for (std::size_t i = 0; i < px.size();) {
    const double s = px[i].score;
    for (; i < px.size() && px[i].score == s; ++i) {
      if (px[i].region < 0) ++fp;
      else ++covered[px[i].region];
    }
    double acc = 0;
    for (std::size_t r = 0; r < region_size.size(); ++r)
      acc += static_cast<double>(covered[r]) / static_cast<double>(region_size[r]);
    pro.push_back(acc / static_cast<double>(region_size.size()));
    fpr.push_back(negatives > 0 ? static_cast<double>(fp) / static_cast<double>(negatives) : 0.0);
  }
  return integrate_pro_curve(fpr, pro, fpr_limit);
}

/// Image- and pixel-level metrics in the column order of the report.
struct MetricRow {
  double image_auroc = 0, image_auprc = 0, image_f1max = 0;
  double pixel_auroc = 0, pixel_auprc = 0, pixel_f1max = 0, pixel_aupro = 0;
};

}  // namespace decodiff
