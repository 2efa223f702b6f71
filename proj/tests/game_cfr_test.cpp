#include "pcs/game_cfr.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace pcs;

namespace {

// Literal implementation of the counterfactual-value definition: enumerate
// terminals under the node, weight by the opponent's uniform prefix
// probability and the uniform continuation probability.
struct BruteForceCfr {
  const OutcomeTable* table;

  void collect(std::size_t node, int depth, std::vector<double>& utils) const {
    int rounds = table->decision_rounds();
    if (depth == rounds) {
      ASSERT_TRUE(table->outcomes[node].has_value());
      utils.push_back(table->outcomes[node]->utility_ego);
      return;
    }
    for (std::size_t j = 0; j < 16; ++j) collect(node * 16 + j, depth + 1, utils);
  }

  double value(int depth, std::size_t node) const {
    std::vector<double> utils;
    collect(node, depth, utils);
    double reach_opp = std::pow(0.25, depth);
    double cont = 1.0 / static_cast<double>(utils.size());
    double acc = 0.0;
    for (double u : utils) acc += cont * u;
    return reach_opp * acc;
  }

  double action_value(int depth, std::size_t node, int a) const {
    double reach_opp = std::pow(0.25, depth);
    double acc = 0.0;
    for (int o = 0; o < 4; ++o) {
      std::vector<double> utils;
      collect(OutcomeTable::child_index(node, a, o), depth + 1, utils);
      double cont = 1.0 / static_cast<double>(utils.size());
      double sub = 0.0;
      for (double u : utils) sub += cont * u;
      acc += 0.25 * sub;
    }
    return reach_opp * acc;
  }

  double regret(int depth, std::size_t node, int a) const {
    return action_value(depth, node, a) - value(depth, node);
  }
};

OutcomeTable random_table(int m, Rng& rng) {
  OutcomeTable t(m);
  for (auto& o : t.outcomes) {
    double u = rng.uniform(-5.0, 5.0);
    TerminalOutcome term;
    term.utility_ego = u;
    term.utility_opp = -u;
    o = term;
  }
  return t;
}

GameSimEnv tiny_env(const TrackMap& map, const Raceline& rl, const PolicyCollection& coll, int m,
                    double step_duration = 0.6) {
  GameSimEnv env;
  env.map = &map;
  env.raceline = &rl;
  env.planner.n_long = 2;
  env.planner.n_lat = 3;
  env.planner.lookahead = 2.0;
  env.planner.velocity_factors = {1.0};
  env.rollout.dt = 0.02;
  env.rollout.replan_period = 0.2;
  env.rollout.lidar.beams = 12;
  env.collection = &coll;
  env.game.m = m;
  env.game.step_duration = step_duration;
  env.game.eps = 0.1;
  return env;
}

PolicyCollection grid_collection() {
  PolicyCollection coll;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      PolicyParams p;
      p.gamma_v = 0.7 + 0.1 * i;
      p.w_do = 2.0 + 3.0 * j;
      coll.entries.push_back({p, {0.25 * i + 0.25, 0.25 * j + 0.25}});
    }
  }
  coll.normalized = true;  // synthetic coords already in [0,1]
  return coll;
}

}  // namespace

TEST(TerminalUtilityTest, ProgressMargin) {
  TerminalOutcome t = terminal_utility(50.0, 47.0, false);
  EXPECT_DOUBLE_EQ(t.utility_ego, 3.0);
  EXPECT_DOUBLE_EQ(t.utility_opp, -3.0);
  EXPECT_FALSE(t.collision);
}

TEST(TerminalUtilityTest, CollisionZeroesBoth) {
  TerminalOutcome t = terminal_utility(50.0, 47.0, true);
  EXPECT_DOUBLE_EQ(t.utility_ego, 0.0);
  EXPECT_DOUBLE_EQ(t.utility_opp, 0.0);
  EXPECT_TRUE(t.collision);
}

TEST(TerminalUtilityTest, ExactTieIsDraw) {
  TerminalOutcome t = terminal_utility(12.5, 12.5, false);
  EXPECT_DOUBLE_EQ(t.utility_ego, 0.0);
  EXPECT_DOUBLE_EQ(t.utility_opp, 0.0);
}

TEST(GameConfigTest, CountArithmetic) {
  GameConfig g;
  g.m = 2;
  EXPECT_EQ(g.games_per_start_pair(), 16u);
  EXPECT_EQ(g.branches_per_agent(), 4u);
  g.n_init = 1;
  EXPECT_EQ(g.total_samples(), 4u);  // root node, 4 actions
  g.m = 3;
  g.n_init = 2;
  EXPECT_EQ(g.total_games(), 1024u);
  g.m = 4;
  g.n_init = 20;
  EXPECT_EQ(g.total_games(), 1638400u);
}

TEST(CfrEvaluatorTest, DepthOneUniformOpponentByHand) {
  // m=2: one decision round; v(h, e) = mean over opponent actions.
  OutcomeTable t(2);
  double u[4][4];
  Rng rng(3);
  for (int e = 0; e < 4; ++e)
    for (int o = 0; o < 4; ++o) {
      u[e][o] = rng.uniform(-5.0, 5.0);
      TerminalOutcome term;
      term.utility_ego = u[e][o];
      term.utility_opp = -u[e][o];
      t.outcomes[OutcomeTable::child_index(0, e, o)] = term;
    }
  CfrEvaluator eval(t);
  for (int e = 0; e < 4; ++e) {
    double mean = (u[e][0] + u[e][1] + u[e][2] + u[e][3]) / 4.0;
    EXPECT_NEAR(*eval.action_value(0, 0, e), mean, 1e-12);
  }
}

TEST(CfrEvaluatorTest, AllZeroUtilitiesGiveZeroValues) {
  OutcomeTable t(3);
  for (auto& o : t.outcomes) o = TerminalOutcome{};
  CfrEvaluator eval(t);
  EXPECT_DOUBLE_EQ(*eval.value(0, 0), 0.0);
  for (int a = 0; a < 4; ++a) EXPECT_DOUBLE_EQ(*eval.regret(0, 0, a), 0.0);
  for (std::size_t n = 0; n < 16; ++n)
    for (int a = 0; a < 4; ++a) EXPECT_DOUBLE_EQ(*eval.regret(1, n, a), 0.0);
}

TEST(CfrEvaluatorTest, MatchesBruteForceOnRandomTrees) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    int m = trial % 2 == 0 ? 2 : 3;
    OutcomeTable t = random_table(m, rng);
    CfrEvaluator eval(t);
    BruteForceCfr oracle{&t};
    for (int d = 0; d < t.decision_rounds(); ++d) {
      std::size_t nodes = GameConfig::ipow(16, d);
      for (std::size_t n = 0; n < nodes; ++n) {
        EXPECT_NEAR(*eval.value(d, n), oracle.value(d, n), 1e-9);
        for (int a = 0; a < 4; ++a)
          EXPECT_NEAR(*eval.regret(d, n, a), oracle.regret(d, n, a), 1e-9);
      }
    }
  }
}

TEST(CfrEvaluatorTest, RegretsZeroMeanUnderUniformProfile) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    OutcomeTable t = random_table(3, rng);
    CfrEvaluator eval(t);
    for (int d = 0; d < 2; ++d) {
      for (std::size_t n = 0; n < GameConfig::ipow(16, d); ++n) {
        double acc = 0.0;
        for (int a = 0; a < 4; ++a) acc += 0.25 * *eval.regret(d, n, a);
        EXPECT_NEAR(acc, 0.0, 1e-12);
      }
    }
  }
}

TEST(CfrEvaluatorTest, FailedBranchesRenormalize) {
  OutcomeTable t(2);
  // Action 0 has only two valid opponent replies.
  for (int e = 0; e < 4; ++e)
    for (int o = 0; o < 4; ++o) {
      if (e == 0 && o >= 2) continue;
      TerminalOutcome term;
      term.utility_ego = e == 0 ? (o == 0 ? 2.0 : 4.0) : 1.0;
      term.utility_opp = -term.utility_ego;
      t.outcomes[OutcomeTable::child_index(0, e, o)] = term;
    }
  CfrEvaluator eval(t);
  EXPECT_NEAR(*eval.action_value(0, 0, 0), 3.0, 1e-12);  // mean of the two valid replies
  EXPECT_NEAR(*eval.action_value(0, 0, 1), 1.0, 1e-12);
}

TEST(EncodeTest, EmptyHistoryOnlyCandidateSlot) {
  GameHistory h;
  FeatureVector f = encode(h, 0);
  for (int i = 0; i < 36; ++i) EXPECT_EQ(f[i], 0.0f);
  EXPECT_EQ(f[36], 1.0f);
  EXPECT_EQ(f[37], 0.0f);
}

TEST(EncodeTest, FullHistorySetsAllMasks) {
  GameHistory h;
  for (int t = 0; t < 3; ++t) {
    h.ego_pcs.push_back({0.1 * t, 0.2 * t});
    h.opp_pcs.push_back({0.3 * t, 0.4 * t});
  }
  h.ego_actions = {1, 3};
  FeatureVector f = encode(h, 2);
  for (int i = 12; i < 24; ++i) EXPECT_EQ(f[i], 1.0f);
  EXPECT_EQ(f[24 + 1], 1.0f);
  EXPECT_EQ(f[28 + 3], 1.0f);
  EXPECT_EQ(f[38], 1.0f);
}

TEST(EncodeTest, RoundTripDecode) {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    GameHistory h;
    int steps = 1 + static_cast<int>(rng.uniform_index(3));
    for (int t = 0; t < steps; ++t) {
      h.ego_pcs.push_back({rng.uniform(), rng.uniform()});
      h.opp_pcs.push_back({rng.uniform(), rng.uniform()});
    }
    for (int t = 0; t + 1 < steps; ++t) h.ego_actions.push_back(static_cast<int>(rng.uniform_index(4)));
    int action = static_cast<int>(rng.uniform_index(4));
    FeatureVector f = encode(h, action);

    // Test-only inverse.
    GameHistory dec;
    for (int t = 0; t < 3; ++t) {
      if (f[12 + 2 * t] == 1.0f) dec.ego_pcs.push_back({f[2 * t], f[2 * t + 1]});
      if (f[18 + 2 * t] == 1.0f) dec.opp_pcs.push_back({f[6 + 2 * t], f[6 + 2 * t + 1]});
    }
    for (int t = 0; t < 3; ++t)
      for (int a = 0; a < 4; ++a)
        if (f[24 + 4 * t + a] == 1.0f) dec.ego_actions.push_back(a);
    int dec_action = -1;
    for (int a = 0; a < 4; ++a)
      if (f[36 + a] == 1.0f) dec_action = a;

    ASSERT_EQ(dec.ego_pcs.size(), h.ego_pcs.size());
    for (std::size_t t = 0; t < h.ego_pcs.size(); ++t) {
      EXPECT_EQ(dec.ego_pcs[t].agg, static_cast<float>(h.ego_pcs[t].agg));
      EXPECT_EQ(dec.opp_pcs[t].res, static_cast<float>(h.opp_pcs[t].res));
    }
    EXPECT_EQ(dec.ego_actions, h.ego_actions);
    EXPECT_EQ(dec_action, action);
  }
}

TEST(EncodeTest, OverlongHistoryRejected) {
  GameHistory h;
  for (int t = 0; t < 4; ++t) {
    h.ego_pcs.push_back({0, 0});
    h.opp_pcs.push_back({0, 0});
  }
  EXPECT_THROW(encode(h, 0), std::invalid_argument);
}

TEST(EnumerateTest, CountersAndDeterminism) {
  TrackMap map = testutil::ring_track(2.0, 4.0, 0.05, 0.05);
  Raceline rl = default_raceline(map, 2.0);
  PolicyCollection coll = grid_collection();
  GameSimEnv env = tiny_env(map, rl, coll, 2);

  GameStart start = make_game_start(env, 0, 4, 99, true);
  EnumeratedTree a = enumerate_game_tree(env, start);
  EXPECT_EQ(a.games_played, 16u);
  EXPECT_EQ(a.failed_branches, 0u);

  EnumeratedTree b = enumerate_game_tree(env, start);
  for (std::size_t i = 0; i < a.table.outcomes.size(); ++i) {
    ASSERT_TRUE(a.table.outcomes[i].has_value());
    EXPECT_EQ(a.table.outcomes[i]->utility_ego, b.table.outcomes[i]->utility_ego);
    EXPECT_EQ(a.table.outcomes[i]->final_s_ego, b.table.outcomes[i]->final_s_ego);
  }
}

TEST(EnumerateTest, SharedPrefixMatchesManualReplay) {
  // Replaying one specific action sequence through plain rollouts must land
  // on the same terminal outcome bit for bit.
  TrackMap map = testutil::ring_track(2.0, 4.0, 0.05, 0.05);
  Raceline rl = default_raceline(map, 2.0);
  PolicyCollection coll = grid_collection();
  GameSimEnv env = tiny_env(map, rl, coll, 3);

  GameStart start = make_game_start(env, 1, 7, 123, false);
  EnumeratedTree tree = enumerate_game_tree(env, start);

  const int ego_seq[2] = {2, 0};
  const int opp_seq[2] = {1, 3};
  LatticePlanner ego(*env.map, *env.raceline, env.vehicle, env.planner, coll.entries[1].params);
  LatticePlanner opp(*env.map, *env.raceline, env.vehicle, env.planner, coll.entries[7].params);
  VehicleState se = start.ego_state, so = start.opp_state;
  PcsPoint pe = coll.entries[1].pcs, po = coll.entries[7].pcs;
  double prog_e = to_frenet(map, se.x, se.y).s;
  double prog_o = to_frenet(map, so.x, so.y).s;
  bool collided = false;
  for (int seg = 0; seg < 3; ++seg) {
    std::vector<PlannerFn> fns = {[&ego](const Observation& o) { return ego(o); },
                                  [&opp](const Observation& o) { return opp(o); }};
    RolloutResult r = rollout(map, env.vehicle, fns, {se, so}, env.game.step_duration, env.rollout);
    prog_e += r.trajectories[0].back().s - r.trajectories[0].front().s;
    prog_o += r.trajectories[1].back().s - r.trajectories[1].front().s;
    se = r.trajectories[0].back();
    so = r.trajectories[1].back();
    if (r.any_collision) {
      collided = true;
      break;
    }
    if (seg < 2) {
      std::size_t ei = apply_action(pe, make_action(ego_seq[seg], env.game.eps), coll);
      pe = coll.entries[ei].pcs;
      ego.set_params(coll.entries[ei].params);
      std::size_t oi = apply_action(po, make_action(opp_seq[seg], env.game.eps), coll);
      po = coll.entries[oi].pcs;
      opp.set_params(coll.entries[oi].params);
    }
  }
  TerminalOutcome manual = terminal_utility(prog_e, prog_o, collided);
  std::size_t idx = OutcomeTable::child_index(OutcomeTable::child_index(0, ego_seq[0], opp_seq[0]),
                                              ego_seq[1], opp_seq[1]);
  ASSERT_TRUE(tree.table.outcomes[idx].has_value());
  EXPECT_EQ(tree.table.outcomes[idx]->utility_ego, manual.utility_ego);
  EXPECT_EQ(tree.table.outcomes[idx]->final_s_ego, manual.final_s_ego);
  EXPECT_EQ(tree.table.outcomes[idx]->collision, manual.collision);
}

TEST(DatasetIo, RoundTripAndErrors) {
  auto dir = std::filesystem::temp_directory_path() / "pcs_game_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "data.bin").string();
  {
    DatasetWriter w(path);
    Rng rng(5);
    for (int i = 0; i < 10; ++i) {
      DatasetRecord rec;
      for (auto& f : rec.features) f = static_cast<float>(rng.uniform());
      rec.action = static_cast<std::uint8_t>(rng.uniform_index(4));
      rec.regret = static_cast<float>(rng.uniform(-2.0, 2.0));
      w.write(rec);
    }
    w.finish();
  }
  auto recs = load_dataset(path);
  ASSERT_EQ(recs.size(), 10u);

  // Truncation must be detected.
  auto trunc = (dir / "trunc.bin").string();
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(trunc, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
  }
  EXPECT_THROW(load_dataset(trunc), std::runtime_error);
}

TEST(BuildDataset, SingleStartPairCounts) {
  TrackMap map = testutil::ring_track(2.0, 4.0, 0.05, 0.05);
  Raceline rl = default_raceline(map, 2.0);
  PolicyCollection coll = grid_collection();
  GameSimEnv env = tiny_env(map, rl, coll, 2);

  auto dir = std::filesystem::temp_directory_path() / "pcs_game_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "collect_m2.bin").string();
  DatasetWriter writer(path);
  CollectStats stats = build_dataset(env, {0}, {4}, 7, writer);
  EXPECT_EQ(stats.trees, 1u);
  EXPECT_EQ(stats.games, 16u);
  EXPECT_EQ(stats.samples, 4u);  // root node, 4 actions

  auto recs = load_dataset(path);
  ASSERT_EQ(recs.size(), 4u);
  // Emitted regrets at the root sum to zero under the uniform profile.
  double acc = 0.0;
  for (const auto& r : recs) acc += 0.25 * r.regret;
  EXPECT_NEAR(acc, 0.0, 1e-6);
}

TEST(BuildDataset, CountFormulaM3) {
  TrackMap map = testutil::ring_track(2.0, 4.0, 0.05, 0.05);
  Raceline rl = default_raceline(map, 2.0);
  PolicyCollection coll = grid_collection();
  GameSimEnv env = tiny_env(map, rl, coll, 3, 0.4);
  env.game.n_init = 2;

  auto dir = std::filesystem::temp_directory_path() / "pcs_game_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "collect_m3.bin").string();
  DatasetWriter writer(path);
  CollectStats stats = build_dataset(env, {0, 1}, {4, 5}, 11, writer);
  EXPECT_EQ(stats.trees, 4u);
  EXPECT_EQ(stats.games, 1024u);  // 2^2 * 4^4
  EXPECT_EQ(stats.failed_branches, 0u);
  EXPECT_EQ(stats.samples, env.game.total_samples());
  EXPECT_EQ(stats.samples, 4u * (4u + 16u * 4u));
}
