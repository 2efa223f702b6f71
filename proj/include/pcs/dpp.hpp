#pragma once

// Greedy MAP subset selection for an RBF L-ensemble over pairwise distances.
// Deterministic: ties resolve to the lowest index.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pcs/math.hpp"

namespace pcs {

// Median pairwise Euclidean distance, the default RBF bandwidth.
inline double median_pairwise_distance(const std::vector<VecN>& points) {
  std::vector<double> d;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < points[i].size(); ++k) {
        double diff = points[i][k] - points[j][k];
        acc += diff * diff;
      }
      d.push_back(std::sqrt(acc));
    }
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  double med = d[d.size() / 2];
  return med > 1e-12 ? med : 1.0;
}

// Greedy MAP for the L-ensemble L_ij = exp(-|xi-xj|^2 / (2 h^2)): repeatedly
// adds the item with the largest conditional variance, maintained through
// incremental Cholesky factors (Chen et al. style fast greedy).
inline std::vector<std::size_t> dpp_greedy_map(const std::vector<VecN>& points, std::size_t k,
                                               double bandwidth = 0.0) {
  const std::size_t n = points.size();
  if (k > n) throw std::invalid_argument("dpp_greedy_map: k larger than item count");
  if (k == 0) return {};
  double h = bandwidth > 0.0 ? bandwidth : median_pairwise_distance(points);
  auto kernel = [&](std::size_t i, std::size_t j) {
    double acc = 0.0;
    for (std::size_t d = 0; d < points[i].size(); ++d) {
      double diff = points[i][d] - points[j][d];
      acc += diff * diff;
    }
    return std::exp(-acc / (2.0 * h * h));
  };

  std::vector<double> d2(n, 1.0);  // conditional variances; L_ii = 1 for RBF
  std::vector<std::vector<double>> c(n);
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> selected;
  selected.reserve(k);
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = n;
    double best_v = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      if (d2[i] > best_v + 1e-15) {
        best_v = d2[i];
        best = i;
      }
    }
    if (best == n || best_v <= 1e-12) {
      // Numerically exhausted; fill with the lowest untaken indices.
      for (std::size_t i = 0; i < n && selected.size() < k; ++i)
        if (!taken[i]) {
          taken[i] = true;
          selected.push_back(i);
        }
      break;
    }
    taken[best] = true;
    selected.push_back(best);
    double dj = std::sqrt(d2[best]);
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double dot = 0.0;
      for (std::size_t t = 0; t < c[best].size(); ++t) dot += c[best][t] * c[i][t];
      double e = (kernel(best, i) - dot) / dj;
      c[i].push_back(e);
      d2[i] -= e * e;
    }
    c[best].clear();
  }
  return selected;
}

}  // namespace pcs
