#pragma once

// Parameterized lattice motion planner: goal sampling around the raceline,
// cubic-spiral trajectory generation, weighted-cost selection, and
// pure-pursuit tracking. The 8-vector PolicyParams (velocity scale + 7 cost
// weights) is the policy parameterization switched by strategies.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pcs/clothoid.hpp"
#include "pcs/config.hpp"
#include "pcs/math.hpp"
#include "pcs/track.hpp"
#include "pcs/vehicle_sim.hpp"

namespace pcs {

struct PolicyParams {
  double gamma_v = 1.0;  // global velocity scale in [0.6, 1.0]
  double w_mc = 1.0;     // max curvature
  double w_al = 1.0;     // arc length
  double w_hys = 1.0;    // hysteresis vs previous selection
  double w_do = 1.0;     // lateral deviation from the raceline
  double w_co = 1.0;     // opponent collision
  double w_v1 = 1.0;     // slow-speed penalty
  double w_v2 = 1.0;     // speed-curvature co-occurrence

  static constexpr double kGammaMin = 0.6;
  static constexpr double kGammaMax = 1.0;
  static constexpr double kWeightMin = 1.0;
  static constexpr double kWeightMax = 10.0;
  static constexpr int kDim = 8;

  std::array<double, kDim> to_array() const { return {gamma_v, w_mc, w_al, w_hys, w_do, w_co, w_v1, w_v2}; }

  static PolicyParams from_array(const std::array<double, kDim>& a) {
    PolicyParams p;
    p.gamma_v = a[0];
    p.w_mc = a[1];
    p.w_al = a[2];
    p.w_hys = a[3];
    p.w_do = a[4];
    p.w_co = a[5];
    p.w_v1 = a[6];
    p.w_v2 = a[7];
    return p;
  }

  static PolicyParams from_vector(const VecN& v) {
    if (v.size() != kDim) throw std::invalid_argument("PolicyParams: expected 8 values");
    std::array<double, kDim> a;
    std::copy(v.begin(), v.end(), a.begin());
    return from_array(a);
  }

  VecN to_vector() const {
    auto a = to_array();
    return VecN(a.begin(), a.end());
  }

  PolicyParams clamped() const {
    auto a = to_array();
    a[0] = pcs::clamp(a[0], kGammaMin, kGammaMax);
    for (int i = 1; i < kDim; ++i) a[i] = pcs::clamp(a[i], kWeightMin, kWeightMax);
    return from_array(a);
  }

  bool in_box() const {
    auto a = to_array();
    if (a[0] < kGammaMin || a[0] > kGammaMax) return false;
    for (int i = 1; i < kDim; ++i)
      if (a[i] < kWeightMin || a[i] > kWeightMax) return false;
    return true;
  }

  // Per-coordinate (lo, hi) box for the optimizer.
  static std::vector<std::pair<double, double>> box() {
    std::vector<std::pair<double, double>> b(kDim, {kWeightMin, kWeightMax});
    b[0] = {kGammaMin, kGammaMax};
    return b;
  }
};

struct LatticeGoal {
  Pose2 pose;
  double station = 0.0;  // raceline arc position
  double lateral = 0.0;  // signed offset from the raceline
};

struct LatticeGoalSet {
  std::vector<LatticeGoal> goals;
  std::vector<double> velocity_factors;
};

// Uniform (n_long x n_lat) Frenet grid ahead of the ego, converted to world
// poses with raceline headings. lateral_span is the full lateral extent.
inline LatticeGoalSet sample_goals(const Raceline& raceline, const VehicleState& ego, double lookahead,
                                   double lateral_span, int n_lat, int n_long,
                                   const std::vector<double>& velocity_factors = {0.8, 0.9, 1.0}) {
  if (!(lookahead > 0.0)) throw std::invalid_argument("sample_goals: lookahead must be positive");
  if (n_lat < 1 || n_long < 1) throw std::invalid_argument("sample_goals: grid counts must be >= 1");
  RacelineSample proj = raceline_project(raceline, ego.position());
  LatticeGoalSet set;
  set.velocity_factors = velocity_factors;
  set.goals.reserve(static_cast<std::size_t>(n_lat) * n_long);
  for (int j = 1; j <= n_long; ++j) {
    double s = proj.s + lookahead * static_cast<double>(j) / n_long;
    RacelinePose rp = raceline_at(raceline, s);
    Vec2 normal = unit_vec(rp.theta).left();
    for (int k = 0; k < n_lat; ++k) {
      double off = n_lat == 1 ? 0.0 : -lateral_span / 2.0 + lateral_span * k / (n_lat - 1);
      Vec2 p = rp.position + normal * off;
      set.goals.push_back({{p.x, p.y, rp.theta}, raceline.wrap_s(s), off});
    }
  }
  return set;
}

struct CostTerms {
  double mc = 0.0;
  double al = 0.0;
  double hys = 0.0;
  double dev = 0.0;  // c_do
  double col = 0.0;  // c_co
  double v1 = 0.0;
  double v2 = 0.0;

  std::array<double, 7> to_array() const { return {mc, al, hys, dev, col, v1, v2}; }
};

struct CandidateTrajectory {
  std::vector<PathPoint> path;
  double arc_length = 0.0;
  std::vector<double> velocity_profile;
  CostTerms terms;
  double total_cost = std::numeric_limits<double>::infinity();
  bool env_collision = false;
  int goal_index = -1;
  double velocity_factor = 1.0;

  bool finite_cost() const { return !env_collision; }
};

struct OpponentPrediction {
  Vec2 position;
  double heading = 0.0;
  double speed = 0.0;

  Vec2 at(double t) const { return position + unit_vec(heading) * (speed * t); }
};

struct CostContext {
  const Raceline* raceline = nullptr;
  const TrackMap* map = nullptr;
  double footprint_radius = 0.3;
  double v_max = 8.0;
  double kappa_max = 1.3;
  // Previous selection resampled to the hysteresis points, already advanced
  // by the ego's traveled arc. Empty when there is no previous trajectory.
  std::vector<Vec2> prev_resampled;
  std::optional<OpponentPrediction> opponent;
  // Raceline projection window (wrapped s interval) for deviation costs.
  double window_center = 0.0;
  double window_half = 1e18;
};

inline constexpr int kHysteresisPoints = 20;

// Resamples a polyline to `count` points at equal arc spacing.
inline std::vector<Vec2> resample_equal_arc(const std::vector<PathPoint>& path, int count) {
  std::vector<Vec2> out;
  if (path.size() < 2 || count < 2) return out;
  std::vector<double> cum(path.size(), 0.0);
  for (std::size_t i = 1; i < path.size(); ++i)
    cum[i] = cum[i - 1] + std::hypot(path[i].x - path[i - 1].x, path[i].y - path[i - 1].y);
  double total = cum.back();
  if (total <= 0.0) return out;
  out.reserve(count);
  std::size_t seg = 0;
  for (int k = 0; k < count; ++k) {
    double target = total * k / (count - 1);
    while (seg + 1 < cum.size() && cum[seg + 1] < target) ++seg;
    double seg_len = cum[seg + 1] - cum[seg];
    double t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
    out.push_back({path[seg].x + t * (path[seg + 1].x - path[seg].x),
                   path[seg].y + t * (path[seg + 1].y - path[seg].y)});
  }
  return out;
}

namespace detail {

// Window-limited raceline projection: only segments whose arc position lies
// within [center - half, center + half] (wrapped) are considered.
inline double raceline_lateral_windowed(const Raceline& rl, Vec2 p, double center, double half) {
  double best_d2 = std::numeric_limits<double>::infinity();
  double best = 0.0;
  const std::size_t n = rl.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (half < rl.total_length / 2.0) {
      double ds = std::abs(rl.wrap_s(rl.cumulative_s[i] - center));
      ds = std::min(ds, rl.total_length - ds);
      if (ds > half) continue;
    }
    Vec2 a = rl.position(i);
    Vec2 b = rl.position(i + 1);
    Vec2 ab = b - a;
    double len2 = ab.norm2();
    double t = len2 > 0.0 ? pcs::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    Vec2 proj = a + ab * t;
    double d2 = (p - proj).norm2();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = std::sqrt(d2);
    }
  }
  return best;
}

}  // namespace detail

// Raw (unnormalized) cost terms for one candidate. Environment collisions set
// the infinite-cost flag; the weighted sum happens in select_trajectory.
inline void evaluate_costs(CandidateTrajectory& cand, const CostContext& ctx) {
  CostTerms t;
  double kappa_peak = 0.0;
  for (const auto& p : cand.path) kappa_peak = std::max(kappa_peak, std::abs(p.kappa));
  t.mc = kappa_peak;
  t.al = cand.arc_length;

  if (!ctx.prev_resampled.empty()) {
    auto cur = resample_equal_arc(cand.path, kHysteresisPoints);
    if (cur.size() == ctx.prev_resampled.size()) {
      double sum = 0.0;
      for (std::size_t i = 0; i < cur.size(); ++i) sum += (cur[i] - ctx.prev_resampled[i]).norm2();
      t.hys = std::sqrt(sum);
    }
  }

  double dev_sum = 0.0;
  for (const auto& p : cand.path)
    dev_sum += detail::raceline_lateral_windowed(*ctx.raceline, {p.x, p.y}, ctx.window_center, ctx.window_half);
  t.dev = dev_sum / static_cast<double>(cand.path.size());

  if (ctx.opponent) {
    double time = 0.0;
    double prev_arc = 0.0;
    std::vector<double> cum(cand.path.size(), 0.0);
    for (std::size_t i = 1; i < cand.path.size(); ++i)
      cum[i] = cum[i - 1] + std::hypot(cand.path[i].x - cand.path[i - 1].x, cand.path[i].y - cand.path[i - 1].y);
    for (std::size_t i = 0; i < cand.path.size(); ++i) {
      double v = std::max(cand.velocity_profile[i], 0.1);
      if (i > 0) time += (cum[i] - prev_arc) / v;
      prev_arc = cum[i];
      Vec2 opp = ctx.opponent->at(time);
      double dist = (Vec2{cand.path[i].x, cand.path[i].y} - opp).norm();
      if (dist < 2.0 * ctx.footprint_radius) {
        double dv = cand.velocity_profile[i] - ctx.opponent->speed;
        t.col += pcs::clamp(dv / ctx.v_max, 0.0, 1.0);
      }
    }
  }

  double v_sum = 0.0;
  double v2_peak = 0.0;
  for (std::size_t i = 0; i < cand.path.size(); ++i) {
    v_sum += cand.velocity_profile[i];
    v2_peak = std::max(v2_peak, (cand.velocity_profile[i] / ctx.v_max) *
                                    (std::abs(cand.path[i].kappa) / ctx.kappa_max));
  }
  t.v1 = (ctx.v_max - v_sum / static_cast<double>(cand.path.size())) / ctx.v_max;
  t.v2 = v2_peak;

  cand.env_collision = false;
  for (const auto& p : cand.path) {
    if (is_collision(*ctx.map, p.x, p.y, ctx.footprint_radius)) {
      cand.env_collision = true;
      break;
    }
  }
  cand.terms = t;
  cand.total_cost = cand.env_collision ? std::numeric_limits<double>::infinity() : 0.0;
}

// Weighted-sum selection with per-term max-normalization over the candidate
// set. Returns the winning index, or nothing when every candidate is blocked.
// Ties resolve to the lowest index. The selected candidate's total_cost is
// written back; the caller applies the gamma_v profile scale.
inline std::optional<std::size_t> select_trajectory(const PolicyParams& params,
                                                    std::vector<CandidateTrajectory>& candidates,
                                                    bool normalize = true) {
  std::array<double, 7> scale;
  scale.fill(1.0);
  if (normalize) {
    std::array<double, 7> maxv;
    maxv.fill(0.0);
    for (const auto& c : candidates) {
      if (!c.finite_cost()) continue;
      auto a = c.terms.to_array();
      for (int j = 0; j < 7; ++j) maxv[j] = std::max(maxv[j], a[j]);
    }
    for (int j = 0; j < 7; ++j) scale[j] = maxv[j] > 1e-12 ? 1.0 / maxv[j] : 0.0;
  }
  const std::array<double, 7> w = {params.w_mc, params.w_al, params.w_hys, params.w_do,
                                   params.w_co, params.w_v1, params.w_v2};
  std::optional<std::size_t> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto& c = candidates[i];
    if (!c.finite_cost()) {
      c.total_cost = std::numeric_limits<double>::infinity();
      continue;
    }
    auto a = c.terms.to_array();
    double cost = 0.0;
    for (int j = 0; j < 7; ++j) cost += w[j] * a[j] * scale[j];
    c.total_cost = cost;
    if (cost < best_cost) {
      best_cost = cost;
      best = i;
    }
  }
  return best;
}

// Textbook pure pursuit: steer toward the first trajectory point at least
// lookahead_dist away (falling back to the last point), track its speed.
inline ControlInput pure_pursuit(const VehicleState& state, const CandidateTrajectory& traj,
                                 double lookahead_dist, double wheelbase) {
  if (traj.path.empty()) throw std::invalid_argument("pure_pursuit: empty trajectory");
  Vec2 pos = state.position();
  std::size_t nearest = 0;
  double nearest_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < traj.path.size(); ++i) {
    double d2 = (Vec2{traj.path[i].x, traj.path[i].y} - pos).norm2();
    if (d2 < nearest_d2) {
      nearest_d2 = d2;
      nearest = i;
    }
  }
  std::size_t target = traj.path.size() - 1;
  for (std::size_t i = nearest; i < traj.path.size(); ++i) {
    if ((Vec2{traj.path[i].x, traj.path[i].y} - pos).norm() >= lookahead_dist) {
      target = i;
      break;
    }
  }
  Vec2 to = Vec2{traj.path[target].x, traj.path[target].y} - pos;
  double y_rel = -std::sin(state.psi) * to.x + std::cos(state.psi) * to.y;
  double d2 = std::max(to.norm2(), 1e-9);
  ControlInput u;
  u.steer_des = std::atan(wheelbase * 2.0 * y_rel / d2);
  u.v_des = traj.velocity_profile[target];
  return u;
}

struct PlannerConfig {
  int n_long = 8;
  int n_lat = 9;
  double lookahead = 4.0;
  double max_lateral_span = 4.0;
  std::vector<double> velocity_factors = {0.8, 0.9, 1.0};
  double path_step = 0.1;
  double pp_gain = 0.35;  // pure-pursuit lookahead = clamp(pp_gain * v, pp_min, pp_max)
  double pp_min = 0.7;
  double pp_max = 2.0;
  double kappa_max = 0.0;  // 0: derive tan(steer_max)/wheelbase
  bool normalize_costs = true;
  ClothoidOptions spiral;

  static PlannerConfig from_config(const Config& c) {
    PlannerConfig p;
    p.n_long = c.get_int("planner", "n_long", p.n_long);
    p.n_lat = c.get_int("planner", "n_lat", p.n_lat);
    p.lookahead = c.get_double("planner", "lookahead", p.lookahead);
    p.max_lateral_span = c.get_double("planner", "max_lateral_span", p.max_lateral_span);
    p.path_step = c.get_double("planner", "path_step", p.path_step);
    p.pp_gain = c.get_double("planner", "pp_gain", p.pp_gain);
    p.pp_min = c.get_double("planner", "pp_min", p.pp_min);
    p.pp_max = c.get_double("planner", "pp_max", p.pp_max);
    p.kappa_max = c.get_double("planner", "kappa_max", p.kappa_max);
    p.normalize_costs = c.get_bool("planner", "normalize_costs", p.normalize_costs);
    p.spiral.quad_intervals = c.get_int("planner", "spiral_quad_intervals", p.spiral.quad_intervals);
    p.spiral.max_iter = c.get_int("planner", "spiral_max_iter", p.spiral.max_iter);
    int n_factors = c.get_int("planner", "velocity_factor_count", 0);
    if (n_factors > 0) {
      p.velocity_factors.clear();
      for (int i = 0; i < n_factors; ++i)
        p.velocity_factors.push_back(
            c.get_double("planner", "velocity_factor_" + std::to_string(i), 1.0));
    }
    return p;
  }
};

// The policy pi(theta): a stateful planner agent usable as a rollout callback.
// The only memo is the previously selected trajectory (hysteresis); copying
// the planner snapshots it.
class LatticePlanner {
 public:
  LatticePlanner(const TrackMap& map, const Raceline& raceline, const VehicleParams& veh,
                 const PlannerConfig& cfg, const PolicyParams& params)
      : map_(&map), raceline_(&raceline), veh_(veh), cfg_(cfg), params_(params) {
    kappa_max_ = cfg_.kappa_max > 0.0 ? cfg_.kappa_max : std::tan(veh_.steer_max) / veh_.wheelbase();
  }

  void set_params(const PolicyParams& p) { params_ = p; }
  const PolicyParams& params() const { return params_; }
  const std::optional<CandidateTrajectory>& previous() const { return prev_; }
  const std::vector<CandidateTrajectory>& last_candidates() const { return candidates_; }
  bool blocked() const { return blocked_; }

  ControlInput operator()(const Observation& obs) {
    replan(obs);
    if (blocked_ || !prev_) {
      // Emergency stop: hold the wheel, command zero speed.
      return ControlInput{obs.self.delta, 0.0};
    }
    double lookahead = pcs::clamp(cfg_.pp_gain * std::max(obs.self.v, 1.0), cfg_.pp_min, cfg_.pp_max);
    return pure_pursuit(obs.self, *prev_, lookahead, veh_.wheelbase());
  }

 private:
  void replan(const Observation& obs) {
    blocked_ = false;
    RacelineSample proj = raceline_project(*raceline_, obs.self.position());

    CostContext ctx;
    ctx.raceline = raceline_;
    ctx.map = map_;
    ctx.footprint_radius = veh_.footprint_radius;
    ctx.v_max = veh_.v_max;
    ctx.kappa_max = kappa_max_;
    ctx.window_center = raceline_->wrap_s(proj.s + cfg_.lookahead / 2.0);
    ctx.window_half = cfg_.lookahead / 2.0 + 3.0;
    if (prev_ && prev_->path.size() >= 2) {
      // Advance the previous selection by the ego's traveled arc before
      // resampling it for the hysteresis distance.
      std::size_t nearest = 0;
      double nearest_d2 = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < prev_->path.size(); ++i) {
        double d2 = (Vec2{prev_->path[i].x, prev_->path[i].y} - obs.self.position()).norm2();
        if (d2 < nearest_d2) {
          nearest_d2 = d2;
          nearest = i;
        }
      }
      std::vector<PathPoint> rest(prev_->path.begin() + nearest, prev_->path.end());
      ctx.prev_resampled = resample_equal_arc(rest, kHysteresisPoints);
    }
    if (!obs.opponents.empty()) {
      // Nearest opponent, constant velocity and heading over the horizon.
      const VehicleState* nearest = &obs.opponents.front();
      double best = std::numeric_limits<double>::infinity();
      for (const auto& o : obs.opponents) {
        double d2 = (o.position() - obs.self.position()).norm2();
        if (d2 < best) {
          best = d2;
          nearest = &o;
        }
      }
      ctx.opponent = OpponentPrediction{nearest->position(), nearest->psi, nearest->v};
    }

    double span = lateral_span_at(proj.s);
    LatticeGoalSet goals = sample_goals(*raceline_, obs.self, cfg_.lookahead, span, cfg_.n_lat, cfg_.n_long,
                                        cfg_.velocity_factors);

    Pose2 start{obs.self.x, obs.self.y, obs.self.psi};
    double k0 = std::tan(obs.self.delta) / veh_.wheelbase();
    ClothoidOptions sopt = cfg_.spiral;
    sopt.kappa_max = kappa_max_;

    candidates_.clear();
    for (std::size_t g = 0; g < goals.goals.size(); ++g) {
      auto sol = solve_clothoid(start, k0, goals.goals[g].pose, 0.0, sopt);
      if (!sol) continue;
      auto path = sample_spiral(start, *sol, cfg_.path_step);
      double v_start = raceline_at(*raceline_, proj.s).v;
      double v_goal = raceline_at(*raceline_, goals.goals[g].station).v;
      for (double factor : goals.velocity_factors) {
        CandidateTrajectory cand;
        cand.path = path;
        cand.arc_length = sol->length;
        cand.goal_index = static_cast<int>(g);
        cand.velocity_factor = factor;
        cand.velocity_profile.resize(path.size());
        for (std::size_t i = 0; i < path.size(); ++i) {
          double t = path.size() > 1 ? static_cast<double>(i) / (path.size() - 1) : 0.0;
          cand.velocity_profile[i] = pcs::clamp((v_start + (v_goal - v_start) * t) * factor, 0.0, veh_.v_max);
        }
        evaluate_costs(cand, ctx);
        candidates_.push_back(std::move(cand));
      }
    }

    auto pick = select_trajectory(params_, candidates_, cfg_.normalize_costs);
    if (!pick) {
      blocked_ = true;
      return;
    }
    CandidateTrajectory sel = candidates_[*pick];
    for (auto& v : sel.velocity_profile) v *= params_.gamma_v;
    prev_ = std::move(sel);
  }

  // Local track width from perpendicular free-space probes at the raceline,
  // shrunk by the footprint on both sides.
  double lateral_span_at(double s) const {
    RacelinePose rp = raceline_at(*raceline_, s + cfg_.lookahead / 2.0);
    Vec2 left = unit_vec(rp.theta).left();
    double d_left = detail::raycast_grid(map_->grid, rp.position, left, cfg_.max_lateral_span);
    double d_right = detail::raycast_grid(map_->grid, rp.position, left * -1.0, cfg_.max_lateral_span);
    double span = 2.0 * std::min(d_left, d_right) - 2.0 * veh_.footprint_radius;
    return pcs::clamp(span, 0.2, cfg_.max_lateral_span);
  }

  const TrackMap* map_;
  const Raceline* raceline_;
  VehicleParams veh_;
  PlannerConfig cfg_;
  PolicyParams params_;
  double kappa_max_;
  std::optional<CandidateTrajectory> prev_;
  std::vector<CandidateTrajectory> candidates_;
  bool blocked_ = false;
};

}  // namespace pcs
