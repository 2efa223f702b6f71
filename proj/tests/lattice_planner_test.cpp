#include "pcs/lattice_planner.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace pcs;

namespace {

Raceline straight_edge_raceline() {
  // Square loop; the bottom edge from (0,0) to (4,0) is the straight under test.
  TrackMap map = testutil::square_track(4.0, 0.25);
  return default_raceline(map, 2.0);
}

}  // namespace

TEST(PolicyParamsTest, BoxAndVectorRoundTrip) {
  PolicyParams p;
  p.gamma_v = 0.8;
  p.w_do = 7.5;
  VecN v = p.to_vector();
  ASSERT_EQ(v.size(), 8u);
  PolicyParams q = PolicyParams::from_vector(v);
  EXPECT_EQ(q.gamma_v, 0.8);
  EXPECT_EQ(q.w_do, 7.5);
  PolicyParams out = PolicyParams::from_vector({2.0, 0.0, 20.0, 5.0, 5.0, 5.0, 5.0, 5.0}).clamped();
  EXPECT_EQ(out.gamma_v, 1.0);
  EXPECT_EQ(out.w_mc, 1.0);
  EXPECT_EQ(out.w_al, 10.0);
  EXPECT_TRUE(out.in_box());
}

TEST(SampleGoals, ZeroSpanPutsGoalsOnRaceline) {
  Raceline rl = straight_edge_raceline();
  VehicleState ego;
  ego.x = 0.5;
  ego.y = 0.0;
  LatticeGoalSet set = sample_goals(rl, ego, 1.0, 0.0, 1, 4);
  ASSERT_EQ(set.goals.size(), 4u);
  for (const auto& g : set.goals) {
    RacelineSample proj = raceline_project(rl, {g.pose.x, g.pose.y});
    EXPECT_NEAR(proj.d, 0.0, 1e-9);
    EXPECT_EQ(g.lateral, 0.0);
  }
}

TEST(SampleGoals, UniformLateralOffsets) {
  Raceline rl = straight_edge_raceline();
  VehicleState ego;
  ego.x = 0.5;
  ego.y = 0.0;
  LatticeGoalSet set = sample_goals(rl, ego, 1.0, 1.0, 3, 2);
  ASSERT_EQ(set.goals.size(), 6u);
  // Lateral offsets cycle {-0.5, 0, +0.5} within each station.
  EXPECT_NEAR(set.goals[0].lateral, -0.5, 1e-12);
  EXPECT_NEAR(set.goals[1].lateral, 0.0, 1e-12);
  EXPECT_NEAR(set.goals[2].lateral, 0.5, 1e-12);
  // Bottom edge heads +x, so left offset is +y.
  EXPECT_NEAR(set.goals[2].pose.y, 0.5, 1e-9);
  EXPECT_NEAR(set.goals[0].pose.y, -0.5, 1e-9);
  // Stations advance by lookahead/n_long.
  EXPECT_NEAR(set.goals[0].pose.x, 1.0, 1e-9);
  EXPECT_NEAR(set.goals[3].pose.x, 1.5, 1e-9);
}

TEST(SampleGoals, CircularRacelineTangentHeadings) {
  TrackMap map = testutil::ring_track(2.0, 4.0, 0.05, 0.004);
  Raceline rl = default_raceline(map, 2.0);
  VehicleState ego;
  ego.x = 3.0;
  ego.y = 0.0;
  ego.psi = kPi / 2.0;
  LatticeGoalSet set = sample_goals(rl, ego, 2.0, 1.0, 3, 4);
  for (const auto& g : set.goals) {
    // The raceline starts at (3, 0) and runs CCW, so the point at arc s sits
    // at angle s/R and the tangent is s/R + pi/2.
    double tangent = g.station / 3.0 + kPi / 2.0;
    EXPECT_LT(std::abs(wrap_angle(g.pose.theta - tangent)), 2e-3);
  }
}

TEST(Clothoid, StraightGoalGivesZeroCurvature) {
  auto sol = solve_clothoid({0, 0, 0}, 0.0, {3.0, 0.0, 0.0}, 0.0);
  ASSERT_TRUE(sol.has_value());
  EXPECT_NEAR(sol->length, 3.0, 1e-6);
  auto pts = sample_spiral({0, 0, 0}, *sol, 0.1);
  for (const auto& p : pts) {
    EXPECT_NEAR(p.kappa, 0.0, 1e-6);
    EXPECT_NEAR(p.y, 0.0, 1e-6);
  }
}

TEST(Clothoid, ConstantArcRecovered) {
  // Goal on a circle of curvature k0, goal curvature k0: the constant spiral
  // solves the boundary problem exactly.
  const double k0 = 0.5;
  const double arc = 2.0;  // arc length
  double ang = k0 * arc;
  Pose2 goal{std::sin(ang) / k0, (1.0 - std::cos(ang)) / k0, ang};
  auto sol = solve_clothoid({0, 0, 0}, k0, goal, k0);
  ASSERT_TRUE(sol.has_value());
  EXPECT_NEAR(sol->length, arc, 1e-3);
  auto pts = sample_spiral({0, 0, 0}, *sol, 0.05);
  for (const auto& p : pts) EXPECT_NEAR(p.kappa, k0, 1e-3);
}

TEST(Clothoid, GoalBehindWithOppositeHeadingInfeasible) {
  ClothoidOptions opt;
  opt.kappa_max = 1.35;
  auto sol = solve_clothoid({0, 0, 0}, 0.0, {-2.0, 0.0, kPi}, 0.0, opt);
  EXPECT_FALSE(sol.has_value());
}

TEST(Clothoid, RandomReachableGoalsMeetEndpointTolerance) {
  Rng rng(11);
  ClothoidOptions opt;
  opt.kappa_max = 1.35;
  int solved = 0;
  for (int k = 0; k < 200; ++k) {
    double dist = rng.uniform(1.0, 5.0);
    double bearing = rng.uniform(-0.6, 0.6);
    double heading = rng.uniform(-0.9, 0.9);
    double k0 = rng.uniform(-0.4, 0.4);
    Pose2 goal{dist * std::cos(bearing), dist * std::sin(bearing), heading};
    auto sol = solve_clothoid({0, 0, 0}, k0, goal, 0.0, opt);
    if (!sol) continue;
    ++solved;
    auto pts = sample_spiral({0, 0, 0}, *sol, 0.01);
    const auto& e = pts.back();
    EXPECT_NEAR(e.x, goal.x, 1e-3);
    EXPECT_NEAR(e.y, goal.y, 1e-3);
    EXPECT_LT(std::abs(wrap_angle(e.psi - goal.theta)), 1e-3);
  }
  EXPECT_GT(solved, 150);
}

TEST(Costs, StraightCandidateOnRacelineHasZeroGeometricCosts) {
  Raceline rl = straight_edge_raceline();
  TrackMap map = testutil::square_track(4.0, 0.25);
  CandidateTrajectory cand;
  for (int i = 0; i <= 20; ++i) cand.path.push_back({0.5 + 0.1 * i, 0.0, 0.0, 0.0});
  cand.arc_length = 2.0;
  cand.velocity_profile.assign(cand.path.size(), 2.0);
  CostContext ctx;
  ctx.raceline = &rl;
  ctx.map = &map;
  ctx.footprint_radius = 0.2;
  ctx.v_max = 8.0;
  ctx.kappa_max = 1.3;
  ctx.window_center = 1.5;
  ctx.window_half = 3.0;
  evaluate_costs(cand, ctx);
  EXPECT_DOUBLE_EQ(cand.terms.mc, 0.0);
  EXPECT_NEAR(cand.terms.dev, 0.0, 1e-9);
  EXPECT_DOUBLE_EQ(cand.terms.col, 0.0);
  EXPECT_FALSE(cand.env_collision);
}

TEST(Costs, IdenticalToPreviousGivesZeroHysteresis) {
  Raceline rl = straight_edge_raceline();
  TrackMap map = testutil::square_track(4.0, 0.25);
  CandidateTrajectory cand;
  for (int i = 0; i <= 20; ++i) cand.path.push_back({0.5 + 0.1 * i, 0.0, 0.0, 0.0});
  cand.arc_length = 2.0;
  cand.velocity_profile.assign(cand.path.size(), 2.0);
  CostContext ctx;
  ctx.raceline = &rl;
  ctx.map = &map;
  ctx.window_center = 1.5;
  ctx.window_half = 3.0;
  ctx.prev_resampled = resample_equal_arc(cand.path, kHysteresisPoints);
  evaluate_costs(cand, ctx);
  EXPECT_NEAR(cand.terms.hys, 0.0, 1e-12);
}

TEST(Costs, OpponentOverlapMatchesDiscountFormula) {
  Raceline rl = straight_edge_raceline();
  TrackMap map = testutil::square_track(4.0, 0.25);
  CandidateTrajectory cand;
  // Two points 1 m apart at 2 m/s: the second point is reached at t = 0.5 s.
  cand.path.push_back({0.5, 0.0, 0.0, 0.0});
  cand.path.push_back({1.5, 0.0, 0.0, 0.0});
  cand.arc_length = 1.0;
  cand.velocity_profile.assign(2, 2.0);
  CostContext ctx;
  ctx.raceline = &rl;
  ctx.map = &map;
  ctx.footprint_radius = 0.3;
  ctx.v_max = 8.0;
  ctx.window_center = 1.0;
  ctx.window_half = 3.0;
  // Stationary opponent sitting exactly on the second path point.
  ctx.opponent = OpponentPrediction{{1.5, 0.0}, 0.0, 0.0};
  evaluate_costs(cand, ctx);
  double expect = pcs::clamp((2.0 - 0.0) / 8.0, 0.0, 1.0);
  EXPECT_NEAR(cand.terms.col, expect, 1e-12);
}

TEST(Selection, SingleAndDominated) {
  PolicyParams p;
  std::vector<CandidateTrajectory> cands(2);
  cands[0].terms = {1, 1, 1, 1, 1, 1, 1};
  cands[1].terms = {2, 2, 2, 2, 2, 2, 2};
  auto pick = select_trajectory(p, cands);
  ASSERT_TRUE(pick.has_value());
  EXPECT_EQ(*pick, 0u);

  std::vector<CandidateTrajectory> one(1);
  one[0].terms = {3, 1, 0, 2, 0, 1, 0.5};
  auto pick1 = select_trajectory(p, one);
  ASSERT_TRUE(pick1.has_value());
  EXPECT_EQ(*pick1, 0u);
}

TEST(Selection, AllBlockedSignals) {
  PolicyParams p;
  std::vector<CandidateTrajectory> cands(3);
  for (auto& c : cands) c.env_collision = true;
  EXPECT_FALSE(select_trajectory(p, cands).has_value());
}

TEST(Selection, MatchesBruteForceOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<CandidateTrajectory> cands(1 + rng.uniform_index(12));
    for (auto& c : cands) {
      c.terms = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(),
                 rng.uniform(), rng.uniform(), rng.uniform()};
      c.env_collision = rng.uniform() < 0.15;
    }
    PolicyParams p = PolicyParams::from_vector({1.0, rng.uniform(1, 10), rng.uniform(1, 10), rng.uniform(1, 10),
                                                rng.uniform(1, 10), rng.uniform(1, 10), rng.uniform(1, 10),
                                                rng.uniform(1, 10)});
    auto pick = select_trajectory(p, cands, true);

    // Independent exhaustive minimizer with its own normalization pass.
    std::array<double, 7> maxv{};
    bool any = false;
    for (const auto& c : cands)
      if (!c.env_collision) {
        any = true;
        auto a = c.terms.to_array();
        for (int j = 0; j < 7; ++j) maxv[j] = std::max(maxv[j], a[j]);
      }
    if (!any) {
      EXPECT_FALSE(pick.has_value());
      continue;
    }
    std::array<double, 7> w = {p.w_mc, p.w_al, p.w_hys, p.w_do, p.w_co, p.w_v1, p.w_v2};
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (cands[i].env_collision) continue;
      auto a = cands[i].terms.to_array();
      double cost = 0.0;
      for (int j = 0; j < 7; ++j) cost += w[j] * (maxv[j] > 1e-12 ? a[j] / maxv[j] : 0.0);
      if (cost < best) {
        best = cost;
        best_i = i;
      }
    }
    ASSERT_TRUE(pick.has_value());
    EXPECT_EQ(*pick, best_i);
  }
}

TEST(Selection, InvariantUnderPositiveWeightScaling) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<CandidateTrajectory> cands(8);
    for (auto& c : cands)
      c.terms = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(),
                 rng.uniform(), rng.uniform(), rng.uniform()};
    VecN wv = {1.0};
    for (int j = 0; j < 7; ++j) wv.push_back(rng.uniform(1.0, 10.0));
    PolicyParams p1 = PolicyParams::from_vector(wv);
    // Positive scalar multiple (kept inside the representable range).
    for (int j = 1; j < 8; ++j) wv[j] *= 0.7;
    PolicyParams p2 = PolicyParams::from_vector(wv);
    auto a = select_trajectory(p1, cands);
    auto b = select_trajectory(p2, cands);
    ASSERT_TRUE(a.has_value() && b.has_value());
    EXPECT_EQ(*a, *b);
  }
}

TEST(Selection, HigherDeviationWeightPrefersLowerDeviation) {
  std::vector<CandidateTrajectory> cands(4);
  for (int i = 0; i < 4; ++i) {
    cands[i].terms = {0.5, 0.5, 0.1, 0.2 + 0.2 * i, 0.0, 0.6 - 0.1 * i, 0.2};
  }
  auto deviation_of_pick = [&](double w_do) {
    PolicyParams p;
    p.w_do = w_do;
    auto cs = cands;
    auto pick = select_trajectory(p, cs);
    return cs[*pick].terms.dev;
  };
  double prev = deviation_of_pick(1.0);
  for (double w : {2.0, 4.0, 8.0, 10.0}) {
    double cur = deviation_of_pick(w);
    EXPECT_LE(cur, prev + 1e-12);
    prev = cur;
  }
}

TEST(PurePursuitTest, DeadAheadZeroSteer) {
  CandidateTrajectory traj;
  for (int i = 0; i <= 10; ++i) traj.path.push_back({0.2 * i, 0.0, 0.0, 0.0});
  traj.velocity_profile.assign(11, 3.0);
  VehicleState st;
  ControlInput u = pure_pursuit(st, traj, 1.0, 0.33);
  EXPECT_DOUBLE_EQ(u.steer_des, 0.0);
  EXPECT_DOUBLE_EQ(u.v_des, 3.0);
}

TEST(PurePursuitTest, TextbookFormula) {
  CandidateTrajectory traj;
  traj.path.push_back({0.0, 0.0, 0.0, 0.0});
  traj.path.push_back({2.0, 0.5, 0.0, 0.0});
  traj.velocity_profile.assign(2, 2.0);
  VehicleState st;
  ControlInput u = pure_pursuit(st, traj, 1.0, 0.33);
  double L2 = 2.0 * 2.0 + 0.5 * 0.5;
  EXPECT_NEAR(u.steer_des, std::atan(0.33 * 2.0 * 0.5 / L2), 1e-12);
}

TEST(PurePursuitTest, CircleTrackingSteadyState) {
  // Track a circular path of radius 3 at creep speed; steady-state steering
  // approaches atan(L/R).
  const double R = 3.0;
  CandidateTrajectory traj;
  for (int i = 0; i <= 400; ++i) {
    double a = 0.005 * i * 2.0 * kPi;
    traj.path.push_back({R * std::sin(a), R * (1.0 - std::cos(a)), a, 1.0 / R});
  }
  traj.velocity_profile.assign(traj.path.size(), 0.4);
  VehicleParams p;
  VehicleState st;
  st.v = 0.4;
  double steer_acc = 0.0;
  int count = 0;
  for (int step = 0; step < 600; ++step) {
    ControlInput u = pure_pursuit(st, traj, 0.8, p.wheelbase());
    st = step_dynamics(st, u, 0.01, p);
    if (step >= 400) {
      steer_acc += st.delta;
      ++count;
    }
  }
  double expect = std::atan(p.wheelbase() / R);
  EXPECT_NEAR(steer_acc / count, expect, 0.05 * expect);
}

TEST(PlannerAgent, DrivesRingWithoutCollision) {
  TrackMap map = testutil::ring_track(2.0, 4.0, 0.05, 0.05);
  Raceline rl = default_raceline(map, 2.5);
  VehicleParams veh;
  PlannerConfig cfg;
  cfg.n_long = 5;
  cfg.n_lat = 5;
  cfg.lookahead = 3.0;
  PolicyParams params;
  params.w_do = 5.0;
  LatticePlanner planner(map, rl, veh, cfg, params);
  std::vector<VehicleState> init(1);
  init[0].x = 3.0;
  init[0].psi = kPi / 2.0;
  RolloutConfig rcfg;
  auto fn = [&planner](const Observation& o) { return planner(o); };
  RolloutResult r = rollout(map, veh, {fn}, init, 6.0, rcfg);
  EXPECT_FALSE(r.any_collision);
  EXPECT_FALSE(planner.blocked());
  // Forward progress over 6 s at commanded ~2.5 m/s (scaled by gamma_v=1).
  double progress = r.trajectories[0].back().s - r.trajectories[0].front().s;
  EXPECT_GT(progress, 8.0);
  // Every selected trajectory stays collision-free with finite cost.
  ASSERT_TRUE(planner.previous().has_value());
  EXPECT_TRUE(std::isfinite(planner.previous()->total_cost));
  for (const auto& pt : planner.previous()->path)
    EXPECT_FALSE(is_collision(map, pt.x, pt.y, veh.footprint_radius));
}
