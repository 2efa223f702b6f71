#include "pcs/pcs_core.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace pcs;

namespace {

Trajectory traj_with_final_s(double s_end, int steps = 5) {
  Trajectory t;
  t.dt = 0.1;
  for (int i = 0; i <= steps; ++i) {
    VehicleState st;
    st.s = s_end * i / steps;
    st.x = st.s;
    t.states.push_back(st);
  }
  return t;
}

LidarScan scan_of(std::vector<double> ranges, std::vector<double> angles, double max_range) {
  LidarScan s;
  s.ranges = std::move(ranges);
  s.angles = std::move(angles);
  s.max_range = max_range;
  return s;
}

}  // namespace

TEST(GAgg, IdenticalTrajectoriesGiveZero) {
  std::vector<Trajectory> ego = {traj_with_final_s(7.0)};
  std::vector<Trajectory> opp = {traj_with_final_s(7.0)};
  EXPECT_DOUBLE_EQ(g_agg(ego, opp), 0.0);
}

TEST(GAgg, SinglePairArithmetic) {
  std::vector<Trajectory> ego = {traj_with_final_s(12.0)};
  std::vector<Trajectory> opp = {traj_with_final_s(10.0)};
  EXPECT_DOUBLE_EQ(g_agg(ego, opp), 2.0);
}

TEST(GAgg, MeanOverRandomPairsMatchesOracle) {
  Rng rng(13);
  std::vector<Trajectory> ego, opp;
  double oracle = 0.0;
  for (int i = 0; i < 10; ++i) {
    double se = rng.uniform(0.0, 30.0), so = rng.uniform(0.0, 30.0);
    ego.push_back(traj_with_final_s(se));
    opp.push_back(traj_with_final_s(so));
    oracle += se - so;
  }
  oracle /= 10.0;
  EXPECT_NEAR(g_agg(ego, opp), oracle, 1e-12);
}

TEST(GAgg, AntisymmetricUnderRoleSwap) {
  Rng rng(17);
  std::vector<Trajectory> ego, opp;
  for (int i = 0; i < 6; ++i) {
    ego.push_back(traj_with_final_s(rng.uniform(0.0, 20.0)));
    opp.push_back(traj_with_final_s(rng.uniform(0.0, 20.0)));
  }
  EXPECT_DOUBLE_EQ(g_agg(ego, opp), -g_agg(opp, ego));
}

TEST(GRes, AllMaxRangeHitsClampSentinel) {
  Trajectory t;
  t.dt = 0.1;
  t.scan_every = 1;
  for (int i = 0; i < 3; ++i) {
    VehicleState st;
    st.v = 2.0;
    t.states.push_back(st);
    t.scans.push_back(scan_of({10.0, 10.0, 10.0}, {-0.5, 0.0, 0.5}, 10.0));
  }
  std::vector<Trajectory> set = {t};
  GResOptions opt;
  opt.t_clamp = 10.0;
  EXPECT_DOUBLE_EQ(g_res(set, opt), -10.0);
}

TEST(GRes, HeadOnWallArithmetic) {
  Trajectory t;
  t.dt = 0.1;
  t.scan_every = 1;
  VehicleState st;
  st.v = 1.0;
  t.states.push_back(st);
  t.scans.push_back(scan_of({5.0}, {0.0}, 10.0));
  std::vector<Trajectory> set = {t};
  EXPECT_DOUBLE_EQ(g_res(set), -5.0);
}

TEST(GRes, MatchesExhaustiveBeamOracle) {
  Rng rng(29);
  GResOptions opt;
  std::vector<Trajectory> set;
  double oracle_total = 0.0;
  const int n_traj = 4;
  for (int n = 0; n < n_traj; ++n) {
    Trajectory t;
    t.dt = 0.1;
    t.scan_every = 1;
    int steps = 3 + static_cast<int>(rng.uniform_index(4));
    double acc = 0.0;
    for (int k = 0; k < steps; ++k) {
      VehicleState st;
      st.v = rng.uniform(0.5, 4.0);
      t.states.push_back(st);
      std::vector<double> ranges, angles;
      for (int q = 0; q < 7; ++q) {
        angles.push_back(rng.uniform(-2.2, 2.2));
        ranges.push_back(rng.uniform(0.3, 10.0));
      }
      t.scans.push_back(scan_of(ranges, angles, 10.0));
      // Independent recomputation.
      double best = std::numeric_limits<double>::infinity();
      for (int q = 0; q < 7; ++q) {
        double ar = st.v * std::cos(angles[q]);
        if (ar <= 0.0 || ranges[q] >= 10.0 - 1e-9) continue;
        best = std::min(best, ranges[q] / ar);
      }
      acc += std::min(best, opt.t_clamp);
    }
    oracle_total += -(acc / steps);
    set.push_back(std::move(t));
  }
  EXPECT_NEAR(g_res(set, opt), oracle_total / n_traj, 1e-9);
}

TEST(GRes, TranslationInvariant) {
  Trajectory t;
  t.dt = 0.1;
  t.scan_every = 1;
  for (int i = 0; i < 4; ++i) {
    VehicleState st;
    st.v = 1.5;
    st.x = 2.0 * i;
    t.states.push_back(st);
    t.scans.push_back(scan_of({3.0, 4.0}, {0.0, 0.4}, 10.0));
  }
  Trajectory shifted = t;
  for (auto& st : shifted.states) {
    st.x += 100.0;
    st.y -= 55.0;
  }
  std::vector<Trajectory> a = {t}, b = {shifted};
  EXPECT_DOUBLE_EQ(g_res(a), g_res(b));
}

TEST(ApplyAction, ExactMatchWins) {
  PolicyCollection c;
  c.entries.push_back({PolicyParams{}, {0.3, 0.5}});
  c.entries.push_back({PolicyParams{}, {0.0, 0.0}});
  std::size_t idx = apply_action({0.2, 0.5}, make_action(0, 0.1), c);
  EXPECT_EQ(idx, 0u);
}

TEST(ApplyAction, NearestOfTwo) {
  PolicyCollection c;
  c.entries.push_back({PolicyParams{}, {0.31, 0.5}});
  c.entries.push_back({PolicyParams{}, {0.0, 0.0}});
  std::size_t idx = apply_action({0.2, 0.5}, make_action(0, 0.1), c);
  EXPECT_EQ(idx, 0u);
}

TEST(ApplyAction, MatchesBruteForceScan) {
  Rng rng(31);
  PolicyCollection c;
  for (int i = 0; i < 50; ++i) c.entries.push_back({PolicyParams{}, {rng.uniform(), rng.uniform()}});
  for (int trial = 0; trial < 40; ++trial) {
    PcsPoint cur{rng.uniform(), rng.uniform()};
    int ai = static_cast<int>(rng.uniform_index(4));
    PcsAction act = make_action(ai, 0.1);
    std::size_t got = apply_action(cur, act, c);
    PcsPoint target = act.target_from(cur);
    std::size_t want = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c.size(); ++i) {
      double d2 = c.entries[i].pcs.dist2(target);
      if (d2 < best) {
        best = d2;
        want = i;
      }
    }
    EXPECT_EQ(got, want);
  }
}

TEST(ApplyAction, RoundTripOnGridCollection) {
  // 5x5 grid of entries spaced exactly eps apart: from interior entries,
  // +axis then -axis returns home exactly.
  PolicyCollection c;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) c.entries.push_back({PolicyParams{}, {0.1 * i, 0.1 * j}});
  const double eps = 0.1;
  for (int i = 1; i < 4; ++i) {
    for (int j = 1; j < 4; ++j) {
      PcsPoint origin = c.entries[static_cast<std::size_t>(i) * 5 + j].pcs;
      for (int axis = 0; axis < 2; ++axis) {
        std::size_t mid = apply_action(origin, {static_cast<PcsAxis>(axis), +1, eps}, c);
        std::size_t back = apply_action(c.entries[mid].pcs, {static_cast<PcsAxis>(axis), -1, eps}, c);
        EXPECT_EQ(c.entries[back].pcs.dist2(origin), 0.0);
      }
    }
  }
}

TEST(NormalizePcs, EndpointsMapToUnitBox) {
  PolicyCollection c;
  c.entries.push_back({PolicyParams{}, {0.0, -2.0}});
  c.entries.push_back({PolicyParams{}, {10.0, -1.0}});
  normalize_pcs(c);
  EXPECT_DOUBLE_EQ(c.entries[0].pcs.agg, 0.0);
  EXPECT_DOUBLE_EQ(c.entries[0].pcs.res, 0.0);
  EXPECT_DOUBLE_EQ(c.entries[1].pcs.agg, 1.0);
  EXPECT_DOUBLE_EQ(c.entries[1].pcs.res, 1.0);
}

TEST(NormalizePcs, DegenerateAxisMapsToHalf) {
  PolicyCollection c;
  c.entries.push_back({PolicyParams{}, {4.0, 1.0}});
  c.entries.push_back({PolicyParams{}, {4.0, 3.0}});
  normalize_pcs(c);
  EXPECT_DOUBLE_EQ(c.entries[0].pcs.agg, 0.5);
  EXPECT_DOUBLE_EQ(c.entries[1].pcs.agg, 0.5);
  EXPECT_DOUBLE_EQ(c.entries[0].pcs.res, 0.0);
  EXPECT_DOUBLE_EQ(c.entries[1].pcs.res, 1.0);
}

TEST(NormalizePcs, RandomSetsMapMinMaxExactly) {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    PolicyCollection c;
    int n = 3 + static_cast<int>(rng.uniform_index(20));
    for (int i = 0; i < n; ++i)
      c.entries.push_back({PolicyParams{}, {rng.uniform(-50.0, 50.0), rng.uniform(-5.0, 5.0)}});
    // Independent min/max.
    double lo_a = 1e18, hi_a = -1e18, lo_r = 1e18, hi_r = -1e18;
    for (const auto& e : c.entries) {
      lo_a = std::min(lo_a, e.pcs.agg);
      hi_a = std::max(hi_a, e.pcs.agg);
      lo_r = std::min(lo_r, e.pcs.res);
      hi_r = std::max(hi_r, e.pcs.res);
    }
    PcsNormMap map = normalize_pcs(c);
    EXPECT_DOUBLE_EQ(map.apply({lo_a, lo_r}).agg, 0.0);
    EXPECT_DOUBLE_EQ(map.apply({hi_a, hi_r}).agg, 1.0);
    EXPECT_DOUBLE_EQ(map.apply({lo_a, lo_r}).res, 0.0);
    EXPECT_DOUBLE_EQ(map.apply({hi_a, hi_r}).res, 1.0);
  }
}

TEST(CollectionCsv, RoundTripWithLabels) {
  auto dir = std::filesystem::temp_directory_path() / "pcs_core_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "collection.csv").string();

  std::vector<LabeledEntry> rows;
  Rng rng(41);
  for (int i = 0; i < 12; ++i) {
    LabeledEntry le;
    VecN v = {rng.uniform(0.6, 1.0)};
    for (int j = 0; j < 7; ++j) v.push_back(rng.uniform(1.0, 10.0));
    le.entry.params = PolicyParams::from_vector(v);
    le.entry.pcs = {rng.uniform(-3.0, 3.0), rng.uniform(-10.0, -1.0)};
    le.label = i < 8 ? "all" : "pareto";
    rows.push_back(le);
  }
  save_collection_csv(path, rows);

  PolicyCollection pareto = load_collection(path, "pareto", false);
  EXPECT_EQ(pareto.size(), 4u);
  EXPECT_NEAR(pareto.entries[0].pcs.agg, rows[8].entry.pcs.agg, 1e-9);
  EXPECT_NEAR(pareto.entries[0].params.w_v2, rows[8].entry.params.w_v2, 1e-9);

  // Normalized load projects subsets through the frame of the "all" rows.
  PolicyCollection norm = load_collection(path, "pareto", true);
  PolicyCollection frame;
  for (int i = 0; i < 8; ++i) frame.entries.push_back(rows[i].entry);
  PcsNormMap map = normalize_pcs(frame);
  for (std::size_t i = 0; i < norm.size(); ++i) {
    PcsPoint expect = map.apply(rows[8 + i].entry.pcs);
    EXPECT_NEAR(norm.entries[i].pcs.agg, expect.agg, 1e-9);
    EXPECT_NEAR(norm.entries[i].pcs.res, expect.res, 1e-9);
  }
}
