#pragma once

// Deterministic multi-agent vehicle simulation: dynamic single-track model
// with side slip (kinematic fallback below a speed threshold), ray-marched
// 2-D LiDAR over the occupancy grid, and a fixed-step rollout loop.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcs/config.hpp"
#include "pcs/math.hpp"
#include "pcs/track.hpp"

namespace pcs {

struct VehicleParams {
  double mu = 1.05;          // surface friction
  double c_sf = 4.718;       // front cornering stiffness (normalized, 1/rad)
  double c_sr = 5.4562;      // rear cornering stiffness
  double lf = 0.15875;       // CoG to front axle (m)
  double lr = 0.17145;       // CoG to rear axle (m)
  double h_cg = 0.074;       // CoG height (m)
  double mass = 3.47;        // kg
  double yaw_inertia = 0.04712;
  double steer_min = -0.4189;
  double steer_max = 0.4189;
  double steer_rate_max = 3.2;
  double v_min = 0.0;
  double v_max = 8.0;
  double accel_max = 9.51;
  double v_switch = 0.5;     // kinematic fallback threshold (m/s)
  double steer_gain = 10.0;  // low-level steering-rate controller (1/s)
  double accel_gain = 8.0;   // low-level speed controller (1/s)
  double footprint_radius = 0.30;

  double wheelbase() const { return lf + lr; }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) throw std::invalid_argument(std::string("vehicle params: ") + name + " must be positive");
    };
    positive(mass, "mass");
    positive(yaw_inertia, "yaw_inertia");
    positive(c_sf, "c_sf");
    positive(c_sr, "c_sr");
    positive(lf, "lf");
    positive(lr, "lr");
    positive(mu, "mu");
    positive(footprint_radius, "footprint_radius");
  }

  static VehicleParams from_config(const Config& c) {
    VehicleParams p;
    p.mu = c.get_double("vehicle", "mu", p.mu);
    p.c_sf = c.get_double("vehicle", "c_sf", p.c_sf);
    p.c_sr = c.get_double("vehicle", "c_sr", p.c_sr);
    p.lf = c.get_double("vehicle", "lf", p.lf);
    p.lr = c.get_double("vehicle", "lr", p.lr);
    p.h_cg = c.get_double("vehicle", "h_cg", p.h_cg);
    p.mass = c.get_double("vehicle", "mass", p.mass);
    p.yaw_inertia = c.get_double("vehicle", "yaw_inertia", p.yaw_inertia);
    p.steer_min = c.get_double("vehicle", "steer_min", p.steer_min);
    p.steer_max = c.get_double("vehicle", "steer_max", p.steer_max);
    p.steer_rate_max = c.get_double("vehicle", "steer_rate_max", p.steer_rate_max);
    p.v_min = c.get_double("vehicle", "v_min", p.v_min);
    p.v_max = c.get_double("vehicle", "v_max", p.v_max);
    p.accel_max = c.get_double("vehicle", "accel_max", p.accel_max);
    p.v_switch = c.get_double("vehicle", "v_switch", p.v_switch);
    p.steer_gain = c.get_double("vehicle", "steer_gain", p.steer_gain);
    p.accel_gain = c.get_double("vehicle", "accel_gain", p.accel_gain);
    p.footprint_radius = c.get_double("vehicle", "footprint_radius", p.footprint_radius);
    p.validate();
    return p;
  }
};

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;    // heading, wrapped to (-pi, pi]
  double v = 0.0;      // longitudinal speed
  double delta = 0.0;  // steering angle
  double beta = 0.0;   // slip angle
  double omega = 0.0;  // yaw rate
  double s = 0.0;      // lap-unwrapped Frenet progress

  Vec2 position() const { return {x, y}; }
};

struct ControlInput {
  double steer_des = 0.0;
  double v_des = 0.0;
};

namespace detail {

struct Deriv {
  double dx, dy, dpsi, dv, ddelta, dbeta, domega;
};

// Dynamic single-track model with side slip; inputs are steering rate and
// longitudinal acceleration. Valid for v away from zero.
inline Deriv dynamic_st(const VehicleState& st, double sv, double a, const VehicleParams& p) {
  const double g = 9.81;
  double lwb = p.lf + p.lr;
  double front = p.mu * p.c_sf * (g * p.lr - a * p.h_cg);
  double rear = p.mu * p.c_sr * (g * p.lf + a * p.h_cg);
  Deriv d;
  d.dx = st.v * std::cos(st.psi + st.beta);
  d.dy = st.v * std::sin(st.psi + st.beta);
  d.ddelta = sv;
  d.dv = a;
  d.dpsi = st.omega;
  d.domega = (p.mass / (p.yaw_inertia * lwb)) *
             (p.lf * front * st.delta + (p.lr * rear - p.lf * front) * st.beta -
              (p.lf * p.lf * front + p.lr * p.lr * rear) * st.omega / st.v);
  d.dbeta = (1.0 / (st.v * lwb)) * (front * st.delta - (front + rear) * st.beta +
                                    (rear * p.lr - front * p.lf) * st.omega / st.v) -
            st.omega;
  return d;
}

// Kinematic single-track fallback; yaw rate follows v*tan(delta)/L so the
// state stays consistent when handing back to the dynamic model.
inline Deriv kinematic_st(const VehicleState& st, double sv, double a, const VehicleParams& p) {
  double lwb = p.lf + p.lr;
  Deriv d;
  d.dx = st.v * std::cos(st.psi);
  d.dy = st.v * std::sin(st.psi);
  d.ddelta = sv;
  d.dv = a;
  d.dpsi = st.v * std::tan(st.delta) / lwb;
  double cosd = std::cos(st.delta);
  d.domega = (a * std::tan(st.delta) + st.v * sv / (cosd * cosd)) / lwb;
  d.dbeta = 0.0;
  return d;
}

inline VehicleState apply(const VehicleState& st, const Deriv& d, double h) {
  VehicleState out = st;
  out.x += h * d.dx;
  out.y += h * d.dy;
  out.psi += h * d.dpsi;
  out.v += h * d.dv;
  out.delta += h * d.ddelta;
  out.beta += h * d.dbeta;
  out.omega += h * d.domega;
  return out;
}

}  // namespace detail

// One RK4 step of the single-track model. Low-level controllers convert the
// desired steering angle and speed into a saturated steering rate and
// acceleration, held constant over the step. Frenet progress s is untouched;
// rollout loops maintain it through a FrenetTracker.
inline VehicleState step_dynamics(const VehicleState& state, const ControlInput& u, double dt,
                                  const VehicleParams& p) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_dynamics: dt must be positive");
  double steer_target = pcs::clamp(u.steer_des, p.steer_min, p.steer_max);
  double v_target = pcs::clamp(u.v_des, p.v_min, p.v_max);
  double sv = pcs::clamp(p.steer_gain * (steer_target - state.delta), -p.steer_rate_max, p.steer_rate_max);
  double a = pcs::clamp(p.accel_gain * (v_target - state.v), -p.accel_max, p.accel_max);

  bool kinematic = std::abs(state.v) < p.v_switch;
  auto f = [&](const VehicleState& s) {
    return kinematic ? detail::kinematic_st(s, sv, a, p) : detail::dynamic_st(s, sv, a, p);
  };
  detail::Deriv k1 = f(state);
  detail::Deriv k2 = f(detail::apply(state, k1, dt / 2.0));
  detail::Deriv k3 = f(detail::apply(state, k2, dt / 2.0));
  detail::Deriv k4 = f(detail::apply(state, k3, dt));
  VehicleState out = state;
  auto comb = [&](double a1, double a2, double a3, double a4) { return dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4); };
  out.x += comb(k1.dx, k2.dx, k3.dx, k4.dx);
  out.y += comb(k1.dy, k2.dy, k3.dy, k4.dy);
  out.psi += comb(k1.dpsi, k2.dpsi, k3.dpsi, k4.dpsi);
  out.v += comb(k1.dv, k2.dv, k3.dv, k4.dv);
  out.delta += comb(k1.ddelta, k2.ddelta, k3.ddelta, k4.ddelta);
  out.beta += comb(k1.dbeta, k2.dbeta, k3.dbeta, k4.dbeta);
  out.omega += comb(k1.domega, k2.domega, k3.domega, k4.domega);

  out.psi = wrap_angle(out.psi);
  out.delta = pcs::clamp(out.delta, p.steer_min, p.steer_max);
  out.v = pcs::clamp(out.v, p.v_min, p.v_max);
  if (!std::isfinite(out.x) || !std::isfinite(out.y) || !std::isfinite(out.psi) || !std::isfinite(out.v) ||
      !std::isfinite(out.delta) || !std::isfinite(out.beta) || !std::isfinite(out.omega))
    throw std::runtime_error("step_dynamics: state became non-finite");
  return out;
}

struct LidarScan {
  std::vector<double> ranges;
  std::vector<double> angles;  // beam angles relative to heading
  double max_range = 10.0;
};

struct LidarConfig {
  int beams = 108;
  double fov = 4.7;  // rad
  double max_range = 10.0;
};

namespace detail {

// Exact grid traversal (Amanatides & Woo). Returns hit distance or max_range.
inline double raycast_grid(const GridMap& g, Vec2 origin, Vec2 dir, double max_range) {
  int ix = g.cell_x(origin.x);
  int iy = g.cell_y(origin.y);
  if (g.occupied(ix, iy)) return 1e-6;
  int step_x = dir.x > 0.0 ? 1 : (dir.x < 0.0 ? -1 : 0);
  int step_y = dir.y > 0.0 ? 1 : (dir.y < 0.0 ? -1 : 0);
  const double inf = std::numeric_limits<double>::infinity();
  auto boundary = [&](double o, double org, int i, int step) {
    if (step == 0) return inf;
    double edge = org + (step > 0 ? (i + 1) : i) * g.resolution;
    return (edge - o) / (step > 0 ? 1.0 : -1.0);
  };
  double tx = step_x ? boundary(origin.x, g.origin.x, ix, step_x) / std::abs(dir.x) : inf;
  double ty = step_y ? boundary(origin.y, g.origin.y, iy, step_y) / std::abs(dir.y) : inf;
  double dtx = step_x ? g.resolution / std::abs(dir.x) : inf;
  double dty = step_y ? g.resolution / std::abs(dir.y) : inf;
  for (;;) {
    double t;
    if (tx < ty) {
      t = tx;
      tx += dtx;
      ix += step_x;
    } else {
      t = ty;
      ty += dty;
      iy += step_y;
    }
    if (t > max_range) return max_range;
    if (g.occupied(ix, iy)) return t;
  }
}

// Nearest positive intersection of a ray with a disc, if any.
inline double ray_disc(Vec2 origin, Vec2 dir, Vec2 center, double radius, double max_range) {
  Vec2 oc = origin - center;
  double b = oc.dot(dir);
  double c = oc.norm2() - radius * radius;
  double disc = b * b - c;
  if (disc < 0.0) return max_range;
  double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t < 0.0) t = -b + sq;
  if (t < 0.0) return max_range;
  return std::min(t, max_range);
}

}  // namespace detail

// Ray-marched LiDAR from the ego pose: each beam stops at the first occupied
// cell or another agent's footprint disc, capped at max_range.
inline LidarScan simulate_lidar(const TrackMap& map, const std::vector<VehicleState>& states,
                                std::size_t ego_index, int beams, double fov, double max_range,
                                double footprint_radius) {
  if (beams < 2) throw std::invalid_argument("simulate_lidar: need at least 2 beams");
  const VehicleState& ego = states[ego_index];
  LidarScan scan;
  scan.max_range = max_range;
  scan.ranges.resize(beams);
  scan.angles.resize(beams);
  Vec2 origin = ego.position();
  for (int i = 0; i < beams; ++i) {
    double rel = -fov / 2.0 + fov * i / (beams - 1);
    scan.angles[i] = rel;
    Vec2 dir = unit_vec(ego.psi + rel);
    double r = detail::raycast_grid(map.grid, origin, dir, max_range);
    for (std::size_t j = 0; j < states.size(); ++j) {
      if (j == ego_index) continue;
      r = std::min(r, detail::ray_disc(origin, dir, states[j].position(), footprint_radius, max_range));
    }
    scan.ranges[i] = std::max(r, 1e-6);
  }
  return scan;
}

inline LidarScan simulate_lidar(const TrackMap& map, const std::vector<VehicleState>& states,
                                std::size_t ego_index, const LidarConfig& cfg, double footprint_radius) {
  return simulate_lidar(map, states, ego_index, cfg.beams, cfg.fov, cfg.max_range, footprint_radius);
}

// Time-stamped state sequence; scans, when recorded, cover every
// `scan_every`-th state starting at index 0.
struct Trajectory {
  std::vector<VehicleState> states;
  double dt = 0.01;
  int scan_every = 10;
  std::vector<LidarScan> scans;

  bool empty() const { return states.empty(); }
  const VehicleState& front() const { return states.front(); }
  const VehicleState& back() const { return states.back(); }
  double duration() const { return states.empty() ? 0.0 : dt * static_cast<double>(states.size() - 1); }
};

struct Observation {
  double time = 0.0;
  VehicleState self;
  std::vector<VehicleState> opponents;
  LidarScan scan;
};

using PlannerFn = std::function<ControlInput(const Observation&)>;

struct RolloutConfig {
  double dt = 0.01;
  double replan_period = 0.1;
  LidarConfig lidar;
  bool record_scans = true;

  int replan_steps() const {
    int n = static_cast<int>(std::llround(replan_period / dt));
    return std::max(n, 1);
  }

  static RolloutConfig from_config(const Config& c) {
    RolloutConfig r;
    r.dt = c.get_double("vehicle", "dt", r.dt);
    r.replan_period = c.get_double("planner", "replan_period", r.replan_period);
    r.lidar.beams = c.get_int("vehicle", "lidar_beams", r.lidar.beams);
    r.lidar.fov = c.get_double("vehicle", "lidar_fov", r.lidar.fov);
    r.lidar.max_range = c.get_double("vehicle", "lidar_max_range", r.lidar.max_range);
    return r;
  }
};

struct RolloutResult {
  std::vector<Trajectory> trajectories;
  std::vector<bool> env_collision;
  std::vector<bool> agent_collision;
  bool any_collision = false;
  int steps_run = 0;

  bool collided(std::size_t i) const { return env_collision[i] || agent_collision[i]; }
};

// Fixed-step multi-agent rollout. Planners are invoked at the replan period
// (starting at t=0) with their own state, opponent states, and a fresh scan;
// controls are held between replans. Any collision freezes the episode.
inline RolloutResult rollout(const TrackMap& map, const VehicleParams& veh,
                             const std::vector<PlannerFn>& planners, std::vector<VehicleState> states,
                             double duration, const RolloutConfig& cfg = {}) {
  const std::size_t n_agents = planners.size();
  if (states.size() != n_agents) throw std::invalid_argument("rollout: states/planners size mismatch");
  int total_steps = static_cast<int>(std::llround(duration / cfg.dt));
  if (std::abs(total_steps * cfg.dt - duration) > 1e-9)
    throw std::invalid_argument("rollout: duration must be a multiple of dt");

  RolloutResult res;
  res.trajectories.resize(n_agents);
  res.env_collision.assign(n_agents, false);
  res.agent_collision.assign(n_agents, false);

  std::vector<FrenetTracker> trackers;
  trackers.reserve(n_agents);
  for (std::size_t i = 0; i < n_agents; ++i) {
    trackers.emplace_back(map, states[i].position());
    states[i].s = trackers[i].unwrapped();
    res.trajectories[i].dt = cfg.dt;
    res.trajectories[i].scan_every = cfg.replan_steps();
    res.trajectories[i].states.push_back(states[i]);
  }

  auto check_collisions = [&]() {
    bool any = false;
    for (std::size_t i = 0; i < n_agents; ++i) {
      if (is_collision(map, states[i].x, states[i].y, veh.footprint_radius)) {
        res.env_collision[i] = true;
        any = true;
      }
    }
    for (std::size_t i = 0; i < n_agents; ++i) {
      for (std::size_t j = i + 1; j < n_agents; ++j) {
        double d2 = (states[i].position() - states[j].position()).norm2();
        double lim = 2.0 * veh.footprint_radius;
        if (d2 < lim * lim) {
          res.agent_collision[i] = true;
          res.agent_collision[j] = true;
          any = true;
        }
      }
    }
    return any;
  };

  if (check_collisions()) {
    res.any_collision = true;
    return res;
  }

  std::vector<ControlInput> controls(n_agents);
  const int replan_steps = cfg.replan_steps();
  for (int step = 0; step < total_steps; ++step) {
    if (step % replan_steps == 0) {
      for (std::size_t i = 0; i < n_agents; ++i) {
        Observation obs;
        obs.time = step * cfg.dt;
        obs.self = states[i];
        for (std::size_t j = 0; j < n_agents; ++j)
          if (j != i) obs.opponents.push_back(states[j]);
        obs.scan = simulate_lidar(map, states, i, cfg.lidar, veh.footprint_radius);
        if (cfg.record_scans) res.trajectories[i].scans.push_back(obs.scan);
        controls[i] = planners[i](obs);
      }
    }
    for (std::size_t i = 0; i < n_agents; ++i) {
      states[i] = step_dynamics(states[i], controls[i], cfg.dt, veh);
      states[i].s = trackers[i].update(states[i].position());
      res.trajectories[i].states.push_back(states[i]);
    }
    res.steps_run = step + 1;
    if (check_collisions()) {
      res.any_collision = true;
      break;
    }
  }
  return res;
}

// Trajectory log rows: t,agent,x,y,psi,v,delta,s
inline void append_trajectory_rows(CsvWriter& w, const Trajectory& traj, int agent) {
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const auto& st = traj.states[k];
    w.row({CsvWriter::num(traj.dt * static_cast<double>(k)), std::to_string(agent), CsvWriter::num(st.x),
           CsvWriter::num(st.y), CsvWriter::num(st.psi), CsvWriter::num(st.v), CsvWriter::num(st.delta),
           CsvWriter::num(st.s)});
  }
}

}  // namespace pcs
