#pragma once

// 2-D hypervolume indicator (both objectives maximized) and the per-candidate
// hypervolume loss used to rank generation samples.

#include <algorithm>
#include <vector>

#include "pcs/pcs_core.hpp"

namespace pcs {

// Area of the union of rectangles [ref, p] over points dominating the
// reference; non-dominating points contribute nothing. Sort-and-sweep,
// O(n log n).
inline double hypervolume_2d(std::vector<PcsPoint> points, const PcsPoint& reference) {
  std::vector<PcsPoint> dom;
  dom.reserve(points.size());
  for (const auto& p : points)
    if (p.agg >= reference.agg && p.res >= reference.res) dom.push_back(p);
  if (dom.empty()) return 0.0;
  std::sort(dom.begin(), dom.end(), [](const PcsPoint& a, const PcsPoint& b) {
    if (a.agg != b.agg) return a.agg > b.agg;
    return a.res > b.res;
  });
  double hv = 0.0;
  double best_res = reference.res;
  for (const auto& p : dom) {
    if (p.res > best_res) {
      hv += (p.agg - reference.agg) * (p.res - best_res);
      best_res = p.res;
    }
  }
  return hv;
}

// loss_i = -(HV(archive + {i}) - HV(archive)); lower loss = larger expansion.
inline std::vector<double> hypervolume_loss(const std::vector<PcsPoint>& archive,
                                            const std::vector<PcsPoint>& candidates,
                                            const PcsPoint& reference) {
  double base = hypervolume_2d(archive, reference);
  std::vector<double> loss(candidates.size(), 0.0);
  std::vector<PcsPoint> with(archive.size() + 1);
  std::copy(archive.begin(), archive.end(), with.begin());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    with.back() = candidates[i];
    loss[i] = -(hypervolume_2d(with, reference) - base);
  }
  return loss;
}

// Non-dominated mask under joint maximization (skyline sweep). Exact
// duplicates of a surviving point all survive; within an equal-agg group only
// the max-res members can be non-dominated.
inline std::vector<bool> pareto_mask(const std::vector<PcsPoint>& points) {
  const std::size_t n = points.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].agg != points[b].agg) return points[a].agg > points[b].agg;
    return points[a].res > points[b].res;
  });
  std::vector<bool> mask(n, false);
  double best_res_strict = -std::numeric_limits<double>::infinity();
  std::size_t k = 0;
  while (k < n) {
    double agg = points[idx[k]].agg;
    double group_max_res = points[idx[k]].res;
    std::size_t k2 = k;
    while (k2 < n && points[idx[k2]].agg == agg) ++k2;
    if (group_max_res > best_res_strict)
      for (std::size_t t = k; t < k2 && points[idx[t]].res == group_max_res; ++t) mask[idx[t]] = true;
    best_res_strict = std::max(best_res_strict, group_max_res);
    k = k2;
  }
  return mask;
}

}  // namespace pcs
