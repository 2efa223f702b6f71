#pragma once

// Offline policy synthesis: hypervolume-sorted multi-objective CMA-ES over
// the 8-D planner parameterization, Pareto archive, near-optimal extraction,
// and disjoint DPP subsets for data collection.

#include <optional>
#include <string>
#include <vector>

#include "pcs/cma_es.hpp"
#include "pcs/csv.hpp"
#include "pcs/dpp.hpp"
#include "pcs/hypervolume.hpp"
#include "pcs/lattice_planner.hpp"
#include "pcs/pcs_core.hpp"
#include "pcs/threading.hpp"
#include "pcs/track.hpp"
#include "pcs/vehicle_sim.hpp"

namespace pcs {

struct ArchiveMember {
  PolicyParams params;
  PcsPoint objectives;  // raw basis values, both maximized
  int generation = 0;
};

struct Archive {
  std::vector<ArchiveMember> members;

  std::vector<PcsPoint> points() const {
    std::vector<PcsPoint> p;
    p.reserve(members.size());
    for (const auto& m : members) p.push_back(m.objectives);
    return p;
  }
  std::vector<bool> pareto() const { return pareto_mask(points()); }
};

struct EvalOutcome {
  PcsPoint objectives;
  double crash_rate = 0.0;
  double overtake_rate = 0.0;
  int skipped = 0;
  bool valid = true;
};

using EvalFn = std::function<EvalOutcome(const PolicyParams&)>;

struct MoCmaesOptions {
  int population = 100;        // genomes per generation
  double elite_ratio = 0.5;    // fraction added to the archive and recombined
  int generations = 20;
  double sigma0_frac = 0.3;    // initial sigma as a fraction of box span
  double ref_margin = 0.1;     // reference = first-gen min - margin * span
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct GenerationStats {
  int generation = 0;
  double best_agg = 0.0;
  double best_res = 0.0;
  double hypervolume = 0.0;
  double crash_rate = 0.0;
  double overtake_rate = 0.0;
};

// Algorithm: per generation sample the population, evaluate, rank by
// hypervolume loss against the current archive, add the top elites to the
// archive, then run the standard distribution updates on those elites.
class MoCmaEs {
 public:
  MoCmaEs(const MoCmaesOptions& opt, std::vector<std::pair<double, double>> box)
      : opt_(opt), box_(box), es_(mid_point(box), initial_sigma(opt, box), box, opt.seed) {}

  static VecN mid_point(const std::vector<std::pair<double, double>>& box) {
    VecN m(box.size());
    for (std::size_t i = 0; i < box.size(); ++i) m[i] = 0.5 * (box[i].first + box[i].second);
    return m;
  }
  static double initial_sigma(const MoCmaesOptions& opt, const std::vector<std::pair<double, double>>& box) {
    double span = 0.0;
    for (const auto& b : box) span = std::max(span, b.second - b.first);
    return opt.sigma0_frac * span;
  }

  GenerationStats step(const EvalFn& eval) {
    // ask() already clips samples into the box.
    auto xs = es_.ask(opt_.population);
    std::vector<EvalOutcome> outs(xs.size());
    parallel_for(xs.size(), opt_.threads,
                 [&](std::size_t i) { outs[i] = eval(PolicyParams::from_vector(xs[i])); });

    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (outs[i].valid && outs[i].objectives.finite()) valid.push_back(i);
    if (valid.size() < 2) throw std::runtime_error("mo_cmaes: generation produced fewer than 2 valid evaluations");

    if (!ref_) {
      PcsPoint lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
      PcsPoint hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
      for (auto i : valid) {
        lo.agg = std::min(lo.agg, outs[i].objectives.agg);
        lo.res = std::min(lo.res, outs[i].objectives.res);
        hi.agg = std::max(hi.agg, outs[i].objectives.agg);
        hi.res = std::max(hi.res, outs[i].objectives.res);
      }
      double span_a = std::max(hi.agg - lo.agg, 1e-6);
      double span_r = std::max(hi.res - lo.res, 1e-6);
      ref_ = PcsPoint{lo.agg - opt_.ref_margin * span_a, lo.res - opt_.ref_margin * span_r};
    }

    std::vector<PcsPoint> cand_points;
    cand_points.reserve(valid.size());
    for (auto i : valid) cand_points.push_back(outs[i].objectives);
    std::vector<double> loss = hypervolume_loss(archive_.points(), cand_points, *ref_);

    std::vector<std::size_t> order(valid.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (loss[a] != loss[b]) return loss[a] < loss[b];
      return a < b;
    });

    std::size_t elite_count =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opt_.elite_ratio * opt_.population)));
    elite_count = std::min(elite_count, order.size());

    std::vector<VecN> elite_params;
    elite_params.reserve(elite_count);
    int gen = es_.state().generation;
    for (std::size_t r = 0; r < elite_count; ++r) {
      std::size_t i = valid[order[r]];
      elite_params.push_back(xs[i]);
      archive_.members.push_back({PolicyParams::from_vector(xs[i]), outs[i].objectives, gen});
    }
    es_.tell(elite_params);

    GenerationStats st;
    st.generation = gen;
    double crash = 0.0, overtake = 0.0;
    for (auto i : valid) {
      crash += outs[i].crash_rate;
      overtake += outs[i].overtake_rate;
    }
    st.crash_rate = crash / static_cast<double>(valid.size());
    st.overtake_rate = overtake / static_cast<double>(valid.size());
    st.best_agg = -std::numeric_limits<double>::infinity();
    st.best_res = -std::numeric_limits<double>::infinity();
    for (const auto& m : archive_.members) {
      st.best_agg = std::max(st.best_agg, m.objectives.agg);
      st.best_res = std::max(st.best_res, m.objectives.res);
    }
    st.hypervolume = hypervolume_2d(archive_.points(), *ref_);
    history_.push_back(st);
    return st;
  }

  const Archive& archive() const { return archive_; }
  const std::vector<GenerationStats>& history() const { return history_; }
  const std::optional<PcsPoint>& reference() const { return ref_; }
  CmaEs& es() { return es_; }

 private:
  MoCmaesOptions opt_;
  std::vector<std::pair<double, double>> box_;
  CmaEs es_;
  Archive archive_;
  std::optional<PcsPoint> ref_;
  std::vector<GenerationStats> history_;
};

// Fixed evaluation scenarios: opponents with randomized parameters crossed
// with randomized track sections, frozen for the whole optimization.
struct EvalPairing {
  PolicyParams opponent;
  VehicleState ego_start;
  VehicleState opp_start;
};

struct EvalSet {
  std::vector<EvalPairing> pairings;
  double duration = 8.0;
};

struct SynthEnv {
  const TrackMap* map = nullptr;
  const Raceline* raceline = nullptr;
  VehicleParams vehicle;
  PlannerConfig planner;
  RolloutConfig rollout;
  GResOptions gres;
  bool exploration_bonus = false;  // optional shaping, off by default
};

inline VehicleState start_state_at(const TrackMap& map, const Raceline& raceline, double s, double lateral) {
  RacelinePose rp = raceline_at(raceline, s);
  Vec2 pos = rp.position + unit_vec(rp.theta).left() * lateral;
  VehicleState st;
  st.x = pos.x;
  st.y = pos.y;
  st.psi = rp.theta;
  st.v = 0.0;
  st.s = to_frenet(map, pos.x, pos.y).s;
  return st;
}

inline EvalSet make_eval_set(const TrackMap& map, const Raceline& raceline, int n_opponents, int n_sections,
                             double side_offset, std::uint64_t seed, double duration = 8.0) {
  Rng rng(seed);
  std::vector<PolicyParams> opponents;
  auto box = PolicyParams::box();
  for (int i = 0; i < n_opponents; ++i) {
    VecN v(box.size());
    for (std::size_t d = 0; d < box.size(); ++d) v[d] = rng.uniform(box[d].first, box[d].second);
    opponents.push_back(PolicyParams::from_vector(v));
  }
  std::vector<double> sections;
  for (int i = 0; i < n_sections; ++i) sections.push_back(rng.uniform(0.0, raceline.total_length));
  EvalSet set;
  set.duration = duration;
  for (const auto& opp : opponents) {
    for (double s : sections) {
      EvalPairing p;
      p.opponent = opp;
      p.ego_start = start_state_at(map, raceline, s, +side_offset);
      p.opp_start = start_state_at(map, raceline, s, -side_offset);
      set.pairings.push_back(p);
    }
  }
  return set;
}

namespace detail {

inline bool overtook(const Trajectory& ego, const Trajectory& opp) {
  const double margin = 0.05;
  bool was_behind = false;
  std::size_t n = std::min(ego.states.size(), opp.states.size());
  for (std::size_t k = 0; k < n; ++k)
    if (ego.states[k].s < opp.states[k].s - margin) {
      was_behind = true;
      break;
    }
  return was_behind && ego.back().s > opp.back().s + margin;
}

}  // namespace detail

// Runs one 8 s rollout per pairing and averages the basis functions over the
// resulting trajectory sets. Failed rollouts are skipped and counted; an
// all-skip evaluation is an error surfaced via valid=false.
inline EvalOutcome evaluate_policy(const PolicyParams& params, const EvalSet& eval_set, const SynthEnv& env) {
  EvalOutcome out;
  double agg_sum = 0.0, res_sum = 0.0;
  int used = 0, crashes = 0, overtakes = 0;
  for (const auto& pairing : eval_set.pairings) {
    try {
      LatticePlanner ego(*env.map, *env.raceline, env.vehicle, env.planner, params);
      LatticePlanner opp(*env.map, *env.raceline, env.vehicle, env.planner, pairing.opponent);
      std::vector<PlannerFn> fns = {[&ego](const Observation& o) { return ego(o); },
                                    [&opp](const Observation& o) { return opp(o); }};
      RolloutResult r =
          rollout(*env.map, env.vehicle, fns, {pairing.ego_start, pairing.opp_start}, eval_set.duration,
                  env.rollout);
      const Trajectory& te = r.trajectories[0];
      const Trajectory& to = r.trajectories[1];
      double agg = te.back().s - to.back().s;
      std::vector<Trajectory> ego_set = {te};
      double res = g_res(ego_set, env.gres);
      bool ego_crashed = r.env_collision[0] || r.agent_collision[0];
      bool did_overtake = detail::overtook(te, to);
      if (env.exploration_bonus) {
        if (did_overtake) agg *= 1.10;
        bool crashed_into_opp = r.agent_collision[0] && te.back().s < to.back().s;
        if (crashed_into_opp) {
          agg *= 1.10;
          res += 1.0;
        }
      }
      agg_sum += agg;
      res_sum += res;
      if (ego_crashed) ++crashes;
      if (did_overtake) ++overtakes;
      ++used;
    } catch (const std::exception&) {
      ++out.skipped;
    }
  }
  if (used == 0) {
    out.valid = false;
    return out;
  }
  out.objectives = {agg_sum / used, res_sum / used};
  out.crash_rate = static_cast<double>(crashes) / used;
  out.overtake_rate = static_cast<double>(overtakes) / used;
  return out;
}

struct ExtractedSets {
  std::vector<std::size_t> pareto;
  std::vector<std::size_t> near_optimal;
  std::vector<std::size_t> dpp1;
  std::vector<std::size_t> dpp2;
  PcsNormMap norm;
};

// Pareto members, the near-optimal upsampling within d_near (normalized PCS),
// and two disjoint equal-size DPP subsets of the near-optimal set.
inline ExtractedSets extract_sets(const Archive& archive, double d_near, std::size_t n_dpp) {
  if (archive.members.empty()) throw std::invalid_argument("extract_sets: empty archive");
  ExtractedSets out;

  PolicyCollection all;
  for (const auto& m : archive.members) all.entries.push_back({m.params, m.objectives});
  out.norm = normalize_pcs(all);

  std::vector<bool> mask = archive.pareto();
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.pareto.push_back(i);

  for (std::size_t i = 0; i < all.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (auto p : out.pareto) best = std::min(best, all.entries[i].pcs.dist2(all.entries[p].pcs));
    if (std::sqrt(best) <= d_near) out.near_optimal.push_back(i);
  }

  if (out.near_optimal.size() < 2 * n_dpp)
    throw std::runtime_error("extract_sets: near-optimal set has " + std::to_string(out.near_optimal.size()) +
                             " members, need at least " + std::to_string(2 * n_dpp) + " for two DPP subsets");

  std::vector<VecN> pts;
  for (auto i : out.near_optimal) pts.push_back({all.entries[i].pcs.agg, all.entries[i].pcs.res});
  double bandwidth = median_pairwise_distance(pts);
  auto first = dpp_greedy_map(pts, n_dpp, bandwidth);
  std::vector<bool> taken(pts.size(), false);
  for (auto i : first) {
    out.dpp1.push_back(out.near_optimal[i]);
    taken[i] = true;
  }
  std::vector<VecN> rest;
  std::vector<std::size_t> rest_idx;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (!taken[i]) {
      rest.push_back(pts[i]);
      rest_idx.push_back(out.near_optimal[i]);
    }
  auto second = dpp_greedy_map(rest, n_dpp, bandwidth);
  for (auto i : second) out.dpp2.push_back(rest_idx[i]);
  return out;
}

inline void save_archive_csv(const std::string& path, const Archive& archive) {
  std::vector<LabeledEntry> rows;
  rows.reserve(archive.members.size());
  for (const auto& m : archive.members) rows.push_back({{m.params, m.objectives}, "all"});
  save_collection_csv(path, rows);
}

// Full labeled dump: raw PCS values with one row per (member, label).
inline void save_sets_csv(const std::string& path, const Archive& archive, const ExtractedSets& sets) {
  std::vector<LabeledEntry> rows;
  auto add = [&](const std::vector<std::size_t>& idxs, const std::string& label) {
    for (auto i : idxs) rows.push_back({{archive.members[i].params, archive.members[i].objectives}, label});
  };
  for (const auto& m : archive.members) rows.push_back({{m.params, m.objectives}, "all"});
  add(sets.pareto, "pareto");
  add(sets.near_optimal, "near_optimal");
  add(sets.dpp1, "dpp1");
  add(sets.dpp2, "dpp2");
  save_collection_csv(path, rows);
}

inline void save_progress_csv(const std::string& path, const std::vector<GenerationStats>& history) {
  CsvWriter w(path, {"gen", "best_agg", "best_res", "hypervolume", "crash_rate", "overtake_rate"});
  for (const auto& st : history)
    w.row({std::to_string(st.generation), CsvWriter::num(st.best_agg), CsvWriter::num(st.best_res),
           CsvWriter::num(st.hypervolume), CsvWriter::num(st.crash_rate), CsvWriter::num(st.overtake_rate)});
}

}  // namespace pcs
