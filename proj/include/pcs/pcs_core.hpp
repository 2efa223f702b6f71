#pragma once

// Policy Characteristic Space: the two basis functions (aggressiveness from
// relative progress, restraint from negated minimum iTTC), discrete
// axis-step actions with nearest-policy lookup, and policy collections with
// per-axis [0,1] normalization.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcs/csv.hpp"
#include "pcs/lattice_planner.hpp"
#include "pcs/vehicle_sim.hpp"

namespace pcs {

struct PcsPoint {
  double agg = 0.0;
  double res = 0.0;

  double operator[](int axis) const { return axis == 0 ? agg : res; }
  double& operator[](int axis) { return axis == 0 ? agg : res; }
  double dist2(const PcsPoint& o) const {
    double da = agg - o.agg, dr = res - o.res;
    return da * da + dr * dr;
  }
  bool finite() const { return std::isfinite(agg) && std::isfinite(res); }
};

enum class PcsAxis : int { agg = 0, res = 1 };

struct PcsAction {
  PcsAxis axis = PcsAxis::agg;
  int sign = +1;  // +1 or -1
  double eps = 0.1;

  PcsPoint target_from(const PcsPoint& current) const {
    PcsPoint t = current;
    t[static_cast<int>(axis)] += sign * eps;
    return t;
  }
};

inline constexpr int kActionCount = 4;

// Canonical action order: agg+, agg-, res+, res-.
inline PcsAction make_action(int index, double eps) {
  switch (index) {
    case 0: return {PcsAxis::agg, +1, eps};
    case 1: return {PcsAxis::agg, -1, eps};
    case 2: return {PcsAxis::res, +1, eps};
    case 3: return {PcsAxis::res, -1, eps};
    default: throw std::invalid_argument("make_action: index out of range");
  }
}

inline const char* action_name(int index) {
  static const char* names[kActionCount] = {"agg+", "agg-", "res+", "res-"};
  if (index < 0 || index >= kActionCount) throw std::invalid_argument("action_name: index out of range");
  return names[index];
}

// Mean final-progress advantage over the opponent across paired rollouts,
// on lap-unwrapped s.
inline double g_agg(std::span<const Trajectory> ego_trajs, std::span<const Trajectory> opp_trajs) {
  if (ego_trajs.empty() || ego_trajs.size() != opp_trajs.size())
    throw std::invalid_argument("g_agg: need matching non-empty trajectory sets");
  double sum = 0.0;
  for (std::size_t i = 0; i < ego_trajs.size(); ++i) {
    if (ego_trajs[i].empty() || opp_trajs[i].empty()) throw std::invalid_argument("g_agg: empty trajectory");
    sum += ego_trajs[i].back().s - opp_trajs[i].back().s;
  }
  return sum / static_cast<double>(ego_trajs.size());
}

struct GResOptions {
  double t_clamp = 10.0;  // cap applied to +inf / large per-step min-iTTC
};

namespace detail {

// Minimum instantaneous time-to-collision over one scan. The approach rate of
// beam q is the ego longitudinal speed projected on the beam direction;
// receding beams and beams at max range map to +inf.
inline double min_ittc(const LidarScan& scan, double speed) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < scan.ranges.size(); ++q) {
    double approach = speed * std::cos(scan.angles[q]);
    if (approach <= 0.0) continue;
    if (scan.ranges[q] >= scan.max_range - 1e-9) continue;
    best = std::min(best, scan.ranges[q] / approach);
  }
  return best;
}

}  // namespace detail

// Negated mean of per-step minimum iTTC, averaged across rollouts. Steps with
// no approaching beam contribute the clamp value.
inline double g_res(std::span<const Trajectory> ego_trajs, const GResOptions& opt = {}) {
  if (ego_trajs.empty()) throw std::invalid_argument("g_res: empty trajectory set");
  double total = 0.0;
  for (const auto& traj : ego_trajs) {
    if (traj.scans.empty()) throw std::invalid_argument("g_res: trajectory has no scans");
    double acc = 0.0;
    for (std::size_t k = 0; k < traj.scans.size(); ++k) {
      std::size_t state_idx = std::min(k * static_cast<std::size_t>(traj.scan_every), traj.states.size() - 1);
      double ittc = detail::min_ittc(traj.scans[k], traj.states[state_idx].v);
      acc += std::min(ittc, opt.t_clamp);
    }
    total += -(acc / static_cast<double>(traj.scans.size()));
  }
  return total / static_cast<double>(ego_trajs.size());
}

// Per-axis affine map onto [0,1]; a degenerate axis maps to the constant 0.5.
struct PcsNormMap {
  double offset[2] = {0.0, 0.0};
  double scale[2] = {1.0, 1.0};  // 0 marks a degenerate axis

  PcsPoint apply(const PcsPoint& raw) const {
    PcsPoint out;
    for (int a = 0; a < 2; ++a) out[a] = scale[a] == 0.0 ? 0.5 : (raw[a] - offset[a]) * scale[a];
    return out;
  }
};

struct PolicyEntry {
  PolicyParams params;
  PcsPoint pcs;
};

struct PolicyCollection {
  std::vector<PolicyEntry> entries;
  std::string label = "all";
  PcsNormMap norm;
  bool normalized = false;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

// Computes the [0,1] map over the collection's own entries and applies it.
inline PcsNormMap normalize_pcs(PolicyCollection& collection) {
  if (collection.empty()) throw std::invalid_argument("normalize_pcs: empty collection");
  PcsNormMap map;
  for (int a = 0; a < 2; ++a) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& e : collection.entries) {
      lo = std::min(lo, e.pcs[a]);
      hi = std::max(hi, e.pcs[a]);
    }
    if (hi - lo < 1e-12) {
      map.offset[a] = 0.0;
      map.scale[a] = 0.0;
    } else {
      map.offset[a] = lo;
      map.scale[a] = 1.0 / (hi - lo);
    }
  }
  for (auto& e : collection.entries) e.pcs = map.apply(e.pcs);
  collection.norm = map;
  collection.normalized = true;
  return map;
}

// Projects the collection through an externally computed map (for subsets
// that must share the archive's frame).
inline void apply_norm_map(PolicyCollection& collection, const PcsNormMap& map) {
  for (auto& e : collection.entries) e.pcs = map.apply(e.pcs);
  collection.norm = map;
  collection.normalized = true;
}

// Policy switching: move epsilon along one axis, then snap to the nearest
// collection entry (Euclidean, ties to the lowest index). Returns the index.
inline std::size_t apply_action(const PcsPoint& current, const PcsAction& action,
                                const PolicyCollection& collection) {
  if (collection.empty()) throw std::invalid_argument("apply_action: empty collection");
  PcsPoint target = action.target_from(current);
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < collection.size(); ++i) {
    double d2 = collection.entries[i].pcs.dist2(target);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

// PolicyCollection CSV: gamma_v,w_mc,w_al,w_hys,w_do,w_co,w_v1,w_v2,agg,res,label.
// One file may carry several labeled subsets; PCS values are stored raw.
struct LabeledEntry {
  PolicyEntry entry;
  std::string label;
};

inline void save_collection_csv(const std::string& path, const std::vector<LabeledEntry>& rows) {
  CsvWriter w(path, {"gamma_v", "w_mc", "w_al", "w_hys", "w_do", "w_co", "w_v1", "w_v2", "agg", "res", "label"});
  for (const auto& r : rows) {
    auto a = r.entry.params.to_array();
    std::vector<std::string> cells;
    for (double v : a) cells.push_back(CsvWriter::num(v));
    cells.push_back(CsvWriter::num(r.entry.pcs.agg));
    cells.push_back(CsvWriter::num(r.entry.pcs.res));
    cells.push_back(r.label);
    w.row(cells);
  }
}

inline std::vector<LabeledEntry> load_collection_rows(const std::string& path) {
  CsvTable t = read_csv(path);
  const char* names[] = {"gamma_v", "w_mc", "w_al", "w_hys", "w_do", "w_co", "w_v1", "w_v2"};
  int cols[8];
  for (int i = 0; i < 8; ++i) cols[i] = t.require_column(names[i]);
  int c_agg = t.require_column("agg");
  int c_res = t.require_column("res");
  int c_label = t.require_column("label");
  std::vector<LabeledEntry> rows;
  rows.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::string ctx = path + " row " + std::to_string(r + 2);
    std::array<double, 8> a;
    for (int i = 0; i < 8; ++i) a[i] = csv_double(row[cols[i]], ctx);
    LabeledEntry le;
    le.entry.params = PolicyParams::from_array(a);
    le.entry.pcs = {csv_double(row[c_agg], ctx), csv_double(row[c_res], ctx)};
    if (!le.entry.pcs.finite()) throw std::runtime_error("collection: non-finite PCS value in " + ctx);
    le.label = row[c_label];
    rows.push_back(std::move(le));
  }
  return rows;
}

// Loads one labeled subset from a collection file. The normalization frame
// comes from the rows labeled "all" (falling back to every row) so subsets
// and opponent projections share the archive's map.
inline PolicyCollection load_collection(const std::string& path, const std::string& label,
                                        bool normalize = true) {
  auto rows = load_collection_rows(path);
  PolicyCollection frame;
  for (const auto& r : rows)
    if (r.label == "all") frame.entries.push_back(r.entry);
  if (frame.empty())
    for (const auto& r : rows) frame.entries.push_back(r.entry);
  if (frame.empty()) throw std::runtime_error("collection: no rows in " + path);
  PolicyCollection out;
  out.label = label;
  for (const auto& r : rows)
    if (r.label == label) out.entries.push_back(r.entry);
  if (out.empty()) throw std::runtime_error("collection: no rows labeled '" + label + "' in " + path);
  if (normalize) {
    PcsNormMap map = normalize_pcs(frame);
    apply_norm_map(out, map);
  }
  return out;
}

}  // namespace pcs
