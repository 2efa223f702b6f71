#pragma once

// Third-order clothoid (cubic curvature spiral) boundary-value solver.
// kappa(s) = k0 + b s + c s^2 + d s^3; the unknowns (b, c, d, s_f) are found
// by damped Newton shooting on the endpoint residual (x, y, psi, kappa_f)
// with Simpson quadrature for the position integrals.

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "pcs/math.hpp"

namespace pcs {

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

struct SpiralCoeffs {
  double k0 = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
  double length = 0.0;

  double kappa(double s) const { return k0 + s * (b + s * (c + s * d)); }
  // Heading change relative to the start.
  double heading(double s) const { return s * (k0 + s * (b / 2.0 + s * (c / 3.0 + s * d / 4.0))); }
  double max_abs_kappa() const {
    double m = std::max(std::abs(kappa(0.0)), std::abs(kappa(length)));
    // Interior extrema: roots of 3d s^2 + 2c s + b.
    if (std::abs(d) > 1e-14) {
      double disc = 4.0 * c * c - 12.0 * d * b;
      if (disc >= 0.0) {
        double sq = std::sqrt(disc);
        for (double r : {(-2.0 * c - sq) / (6.0 * d), (-2.0 * c + sq) / (6.0 * d)})
          if (r > 0.0 && r < length) m = std::max(m, std::abs(kappa(r)));
      }
    } else if (std::abs(c) > 1e-14) {
      double r = -b / (2.0 * c);
      if (r > 0.0 && r < length) m = std::max(m, std::abs(kappa(r)));
    }
    return m;
  }
};

struct PathPoint {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
  double kappa = 0.0;
};

struct ClothoidOptions {
  int max_iter = 50;
  int quad_intervals = 64;  // Simpson intervals (even)
  double pos_tol = 1e-4;
  double ang_tol = 1e-4;
  double kappa_tol = 1e-4;
  double kappa_max = 1e9;   // feasibility bound on |kappa| along the path
  double max_length_factor = 12.0;  // reject solutions longer than this * chord
};

namespace detail {

struct SpiralEndpoint {
  double x, y, psi, kappa;
  // Partials wrt (b, c, d, s_f), rows x, y, psi, kappa.
  Mat jac{4, 4};
};

// Endpoint and Jacobian in one Simpson pass.
inline SpiralEndpoint integrate_spiral(const Pose2& start, double k0, double b, double c, double d, double sf,
                                       int intervals) {
  int n = intervals % 2 == 0 ? intervals : intervals + 1;
  double h = sf / n;
  double x = 0.0, y = 0.0;
  double jxb = 0.0, jxc = 0.0, jxd = 0.0;
  double jyb = 0.0, jyc = 0.0, jyd = 0.0;
  double sin_end = 0.0, cos_end = 0.0;
  for (int i = 0; i <= n; ++i) {
    double s = h * i;
    double psi = start.theta + s * (k0 + s * (b / 2.0 + s * (c / 3.0 + s * d / 4.0)));
    double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    double cp = std::cos(psi), sp = std::sin(psi);
    double pb = s * s / 2.0, pc = s * s * s / 3.0, pd = s * s * s * s / 4.0;
    x += w * cp;
    y += w * sp;
    jxb -= w * sp * pb;
    jxc -= w * sp * pc;
    jxd -= w * sp * pd;
    jyb += w * cp * pb;
    jyc += w * cp * pc;
    jyd += w * cp * pd;
    if (i == n) {
      cos_end = cp;
      sin_end = sp;
    }
  }
  double scale = h / 3.0;
  SpiralEndpoint out;
  out.x = start.x + scale * x;
  out.y = start.y + scale * y;
  out.psi = start.theta + sf * (k0 + sf * (b / 2.0 + sf * (c / 3.0 + sf * d / 4.0)));
  out.kappa = k0 + sf * (b + sf * (c + sf * d));
  out.jac(0, 0) = scale * jxb;
  out.jac(0, 1) = scale * jxc;
  out.jac(0, 2) = scale * jxd;
  out.jac(0, 3) = cos_end;
  out.jac(1, 0) = scale * jyb;
  out.jac(1, 1) = scale * jyc;
  out.jac(1, 2) = scale * jyd;
  out.jac(1, 3) = sin_end;
  out.jac(2, 0) = sf * sf / 2.0;
  out.jac(2, 1) = sf * sf * sf / 3.0;
  out.jac(2, 2) = sf * sf * sf * sf / 4.0;
  out.jac(2, 3) = out.kappa;
  out.jac(3, 0) = sf;
  out.jac(3, 1) = sf * sf;
  out.jac(3, 2) = sf * sf * sf;
  out.jac(3, 3) = b + sf * (2.0 * c + 3.0 * d * sf);
  return out;
}

}  // namespace detail

// Solves the two-point boundary problem from (start pose, start curvature) to
// (goal pose, goal curvature). Returns nothing when the shooting iteration
// fails to converge within budget or the curvature bound is violated.
inline std::optional<SpiralCoeffs> solve_clothoid(const Pose2& start, double start_curvature, const Pose2& goal,
                                                  double goal_curvature = 0.0, const ClothoidOptions& opt = {}) {
  Vec2 chord{goal.x - start.x, goal.y - start.y};
  double dist = chord.norm();
  if (dist < 1e-6) return std::nullopt;

  double chord_angle = std::atan2(chord.y, chord.x);
  double d1 = wrap_angle(chord_angle - start.theta);
  double d2 = wrap_angle(goal.theta - chord_angle);
  double sf = dist * (1.0 + 0.35 * (d1 * d1 + d2 * d2));
  double dpsi = wrap_angle(goal.theta - start.theta);

  // Initial (b, c) with d = 0 matching the goal heading and curvature.
  double b = 0.0, c = 0.0, d = 0.0;
  {
    Mat a(2, 2);
    a(0, 0) = sf;
    a(0, 1) = sf * sf;
    a(1, 0) = sf * sf / 2.0;
    a(1, 1) = sf * sf * sf / 3.0;
    VecN rhs = {goal_curvature - start_curvature, dpsi - start_curvature * sf};
    VecN sol;
    if (solve_linear(a, rhs, sol)) {
      b = sol[0];
      c = sol[1];
    }
  }

  const double min_len = std::max(0.25 * dist, 1e-3);
  const double max_len = opt.max_length_factor * dist;
  double best_norm = std::numeric_limits<double>::infinity();

  auto residual = [&](const detail::SpiralEndpoint& e) {
    return VecN{e.x - goal.x, e.y - goal.y, wrap_angle(e.psi - goal.theta), e.kappa - goal_curvature};
  };
  auto norm4 = [](const VecN& r) {
    return std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + r[3] * r[3]);
  };

  detail::SpiralEndpoint e = detail::integrate_spiral(start, start_curvature, b, c, d, sf, opt.quad_intervals);
  VecN r = residual(e);
  best_norm = norm4(r);

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    if (std::abs(r[0]) <= opt.pos_tol && std::abs(r[1]) <= opt.pos_tol && std::abs(r[2]) <= opt.ang_tol &&
        std::abs(r[3]) <= opt.kappa_tol)
      break;
    VecN step;
    if (!solve_linear(e.jac, r, step)) return std::nullopt;
    bool improved = false;
    for (double alpha : {1.0, 0.5, 0.25, 0.125, 0.0625}) {
      double nb = b - alpha * step[0];
      double nc = c - alpha * step[1];
      double nd = d - alpha * step[2];
      double nsf = pcs::clamp(sf - alpha * step[3], min_len, max_len);
      auto ne = detail::integrate_spiral(start, start_curvature, nb, nc, nd, nsf, opt.quad_intervals);
      VecN nr = residual(ne);
      if (norm4(nr) < best_norm) {
        b = nb;
        c = nc;
        d = nd;
        sf = nsf;
        e = ne;
        r = nr;
        best_norm = norm4(nr);
        improved = true;
        break;
      }
    }
    if (!improved) return std::nullopt;
  }

  if (!(std::abs(r[0]) <= opt.pos_tol && std::abs(r[1]) <= opt.pos_tol && std::abs(r[2]) <= opt.ang_tol &&
        std::abs(r[3]) <= opt.kappa_tol))
    return std::nullopt;

  SpiralCoeffs coeffs{start_curvature, b, c, d, sf};
  if (coeffs.max_abs_kappa() > opt.kappa_max) return std::nullopt;
  return coeffs;
}

// Samples the spiral at roughly `step` arc spacing (endpoint included),
// integrating positions incrementally with per-interval Simpson.
inline std::vector<PathPoint> sample_spiral(const Pose2& start, const SpiralCoeffs& sp, double step) {
  int n = std::max(2, static_cast<int>(std::ceil(sp.length / step)));
  double h = sp.length / n;
  std::vector<PathPoint> pts;
  pts.reserve(n + 1);
  auto psi_at = [&](double s) { return wrap_angle(start.theta + sp.heading(s)); };
  double x = start.x, y = start.y;
  pts.push_back({x, y, psi_at(0.0), sp.kappa(0.0)});
  for (int i = 0; i < n; ++i) {
    double s0 = h * i;
    double sm = s0 + h / 2.0;
    double s1 = s0 + h;
    double p0 = start.theta + sp.heading(s0);
    double pm = start.theta + sp.heading(sm);
    double p1 = start.theta + sp.heading(s1);
    x += h / 6.0 * (std::cos(p0) + 4.0 * std::cos(pm) + std::cos(p1));
    y += h / 6.0 * (std::sin(p0) + 4.0 * std::sin(pm) + std::sin(p1));
    pts.push_back({x, y, wrap_angle(p1), sp.kappa(s1)});
  }
  return pts;
}

}  // namespace pcs
