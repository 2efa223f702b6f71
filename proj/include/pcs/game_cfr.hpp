#pragma once

// Two-player zero-sum extensive-form game over PCS actions: full game-tree
// enumeration through the simulator, exact counterfactual values/regrets
// under the uniform data-collection profile, feature encoding of histories,
// and the binary training-record stream.
//
// A game has m segments of step_duration seconds. Segment 0 runs the starting
// policies; before each later segment both agents simultaneously apply one of
// the 4 PCS actions, so there are m-1 decision rounds and 4^(m-1) action
// sequences per agent.

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "pcs/csv.hpp"
#include "pcs/lattice_planner.hpp"
#include "pcs/mo_cmaes.hpp"
#include "pcs/pcs_core.hpp"
#include "pcs/threading.hpp"
#include "pcs/track.hpp"
#include "pcs/vehicle_sim.hpp"

namespace pcs {

struct GameConfig {
  int m = 4;                  // actions per agent (segments per game)
  double step_duration = 8.0; // seconds per game step
  int n_init = 20;            // starting policies per agent
  double eps = 0.1;           // PCS action step, normalized units
  double start_side_offset = 0.45;

  static std::uint64_t ipow(std::uint64_t base, int exp) {
    std::uint64_t r = 1;
    for (int i = 0; i < exp; ++i) {
      if (r > std::numeric_limits<std::uint64_t>::max() / base)
        throw std::overflow_error("GameConfig: count overflow");
      r *= base;
    }
    return r;
  }

  int decision_rounds() const { return m - 1; }
  std::uint64_t branches_per_agent() const { return ipow(kActionCount, m - 1); }
  std::uint64_t games_per_start_pair() const { return ipow(kActionCount * kActionCount, m - 1); }
  std::uint64_t total_games() const {
    return games_per_start_pair() * static_cast<std::uint64_t>(n_init) * n_init;
  }
  std::uint64_t samples_per_tree() const {
    std::uint64_t acc = 0;
    for (int j = 0; j <= m - 2; ++j) acc += ipow(16, j) * kActionCount;
    return acc;
  }
  std::uint64_t total_samples() const {
    return samples_per_tree() * static_cast<std::uint64_t>(n_init) * n_init;
  }

  void validate() const {
    if (m < 2) throw std::invalid_argument("game: m must be >= 2");
    if (!(step_duration > 0.0)) throw std::invalid_argument("game: step_duration must be positive");
    if (!(eps > 0.0)) throw std::invalid_argument("game: eps must be positive");
  }

  static GameConfig from_config(const Config& c) {
    GameConfig g;
    g.m = c.get_int("game", "m", g.m);
    g.step_duration = c.get_double("game", "step_duration", g.step_duration);
    g.n_init = c.get_int("game", "n_init", g.n_init);
    g.eps = c.get_double("pcs", "eps", g.eps);
    g.start_side_offset = c.get_double("game", "start_side_offset", g.start_side_offset);
    g.validate();
    return g;
  }
};

struct TerminalOutcome {
  double utility_ego = 0.0;
  double utility_opp = 0.0;
  bool collision = false;
  double final_s_ego = 0.0;
  double final_s_opp = 0.0;
};

// Winner by larger unwrapped progress, utilities +/-(s_w - s_l); any collision
// (and the exact tie) gives both agents zero.
inline TerminalOutcome terminal_utility(double s_ego, double s_opp, bool collision) {
  TerminalOutcome t;
  t.final_s_ego = s_ego;
  t.final_s_opp = s_opp;
  t.collision = collision;
  if (!collision) {
    t.utility_ego = s_ego - s_opp;
    t.utility_opp = -(s_ego - s_opp);
  }
  return t;
}

// Ego's decision-time information: own policy coordinates per completed
// segment, the opponent coordinates estimated from its observed trajectory,
// and the ego's own past actions (one fewer entry).
struct GameHistory {
  std::vector<PcsPoint> ego_pcs;
  std::vector<PcsPoint> opp_pcs;
  std::vector<int> ego_actions;

  int step() const { return static_cast<int>(ego_pcs.size()) + 1; }

  void validate(int m) const {
    if (ego_pcs.size() != opp_pcs.size()) throw std::invalid_argument("history: pcs sequence mismatch");
    if (!ego_actions.empty() && ego_actions.size() + 1 != ego_pcs.size() && ego_actions.size() != ego_pcs.size())
      throw std::invalid_argument("history: action sequence length mismatch");
    if (step() > m) throw std::invalid_argument("history: step exceeds game depth");
  }
};

// Terminal outcomes of one enumerated tree, indexed by the joint action
// sequence: depth-d node index is the base-16 number of its joint actions
// (ego*4 + opp per round). A missing outcome marks a failed simulation branch.
struct OutcomeTable {
  int segments = 2;
  std::vector<std::optional<TerminalOutcome>> outcomes;

  OutcomeTable() = default;
  explicit OutcomeTable(int m) : segments(m) {
    outcomes.assign(GameConfig::ipow(16, m - 1), std::nullopt);
  }
  int decision_rounds() const { return segments - 1; }
  static std::size_t child_index(std::size_t parent, int ego_action, int opp_action) {
    return parent * 16 + static_cast<std::size_t>(ego_action) * kActionCount + opp_action;
  }
};

// Exact counterfactual values under the uniform data-collection profile:
// v(h) = (1/4)^d * E[u | uniform joint play from h], with the opponent-reach
// weight (1/4)^d from its uniform prefix probabilities. Failed branches are
// excluded by renormalizing over valid descendants.
class CfrEvaluator {
 public:
  explicit CfrEvaluator(const OutcomeTable& table) : table_(&table) {
    int rounds = table.decision_rounds();
    value_.resize(rounds + 1);
    value_[rounds].resize(table.outcomes.size());
    for (std::size_t i = 0; i < table.outcomes.size(); ++i)
      value_[rounds][i] =
          table.outcomes[i] ? std::optional<double>(table.outcomes[i]->utility_ego) : std::nullopt;
    for (int d = rounds - 1; d >= 0; --d) {
      value_[d].resize(GameConfig::ipow(16, d));
      for (std::size_t n = 0; n < value_[d].size(); ++n) {
        double acc = 0.0;
        int cnt = 0;
        for (std::size_t j = 0; j < 16; ++j) {
          const auto& child = value_[d + 1][n * 16 + j];
          if (child) {
            acc += *child;
            ++cnt;
          }
        }
        value_[d][n] = cnt > 0 ? std::optional<double>(acc / cnt) : std::nullopt;
      }
    }
  }

  static double reach_weight(int depth) { return std::pow(0.25, depth); }

  // v(h) for the ego at a depth-d node.
  std::optional<double> value(int depth, std::size_t node) const {
    const auto& v = value_[depth][node];
    if (!v) return std::nullopt;
    return reach_weight(depth) * *v;
  }

  // v(h, e_k): ego commits to e_k at this round, both uniform afterwards.
  std::optional<double> action_value(int depth, std::size_t node, int ego_action) const {
    if (depth >= table_->decision_rounds()) throw std::invalid_argument("action_value: terminal node");
    double acc = 0.0;
    int cnt = 0;
    for (int o = 0; o < kActionCount; ++o) {
      const auto& child = value_[depth + 1][OutcomeTable::child_index(node, ego_action, o)];
      if (child) {
        acc += *child;
        ++cnt;
      }
    }
    if (cnt == 0) return std::nullopt;
    return reach_weight(depth) * (acc / cnt);
  }

  // Single-pass converged target: R(h, e_k) = v(h, e_k) - v(h).
  std::optional<double> regret(int depth, std::size_t node, int ego_action) const {
    auto av = action_value(depth, node, ego_action);
    auto v = value(depth, node);
    if (!av || !v) return std::nullopt;
    return *av - *v;
  }

 private:
  const OutcomeTable* table_;
  std::vector<std::vector<std::optional<double>>> value_;
};

// ---------------------------------------------------------------------------
// Feature encoding (fixed 40-wide layout, 3 history slots):
//   [0..5]   ego PCS history (agg, res per slot)
//   [6..11]  opponent PCS history
//   [12..17] ego history mask
//   [18..23] opponent history mask
//   [24..35] past ego actions, one-hot per slot
//   [36..39] candidate action one-hot
// Masked-off slots stay exactly zero.

inline constexpr int kFeatureLen = 40;
inline constexpr int kHistorySlots = 3;

using FeatureVector = std::array<float, kFeatureLen>;

inline FeatureVector encode(const GameHistory& history, int action) {
  if (action < 0 || action >= kActionCount) throw std::invalid_argument("encode: bad action index");
  if (history.ego_pcs.size() != history.opp_pcs.size())
    throw std::invalid_argument("encode: history pcs sequences differ in length");
  if (history.ego_pcs.size() > kHistorySlots)
    throw std::invalid_argument("encode: history longer than the encoder layout");
  if (history.ego_actions.size() > kHistorySlots)
    throw std::invalid_argument("encode: action history longer than the encoder layout");
  FeatureVector f{};
  for (std::size_t t = 0; t < history.ego_pcs.size(); ++t) {
    f[2 * t] = static_cast<float>(history.ego_pcs[t].agg);
    f[2 * t + 1] = static_cast<float>(history.ego_pcs[t].res);
    f[6 + 2 * t] = static_cast<float>(history.opp_pcs[t].agg);
    f[6 + 2 * t + 1] = static_cast<float>(history.opp_pcs[t].res);
    f[12 + 2 * t] = 1.0f;
    f[12 + 2 * t + 1] = 1.0f;
    f[18 + 2 * t] = 1.0f;
    f[18 + 2 * t + 1] = 1.0f;
  }
  for (std::size_t t = 0; t < history.ego_actions.size(); ++t)
    f[24 + 4 * t + history.ego_actions[t]] = 1.0f;
  f[36 + action] = 1.0f;
  return f;
}

// ---------------------------------------------------------------------------
// Game enumeration through the simulator.

struct GameSimEnv {
  const TrackMap* map = nullptr;
  const Raceline* raceline = nullptr;
  VehicleParams vehicle;
  PlannerConfig planner;
  RolloutConfig rollout;
  GResOptions gres;
  const PolicyCollection* collection = nullptr;  // normalized frame
  GameConfig game;
};

struct GameStart {
  std::size_t ego_entry = 0;
  std::size_t opp_entry = 0;
  VehicleState ego_state;
  VehicleState opp_state;
};

// Opponent coordinates estimated from one game step's trajectories: progress
// is re-based to the segment start so the estimate reflects behavior within
// the segment, restraint comes from the opponent's scans (N=1).
inline PcsPoint estimate_opponent_pcs(const Trajectory& opp_traj, const Trajectory& ego_traj,
                                      const GResOptions& gres, const PcsNormMap& norm) {
  double agg = (opp_traj.back().s - opp_traj.front().s) - (ego_traj.back().s - ego_traj.front().s);
  std::vector<Trajectory> set = {opp_traj};
  double res = g_res(set, gres);
  return norm.apply({agg, res});
}

struct EnumeratedTree {
  OutcomeTable table;
  // Ego's decision-time history per depth (0..m-2), indexed like the table.
  std::vector<std::vector<GameHistory>> ego_history;
  std::uint64_t games_played = 0;
  std::uint64_t failed_branches = 0;
};

namespace detail {

struct GameSnapshot {
  LatticePlanner ego_planner;
  LatticePlanner opp_planner;
  VehicleState ego_state;
  VehicleState opp_state;
  double ego_s = 0.0;  // unwrapped progress across segments
  double opp_s = 0.0;
  PcsPoint ego_pcs;
  PcsPoint opp_pcs;
  GameHistory hist_ego;
  GameHistory hist_opp;
  bool dead = false;       // collision ended the game early
  bool failed = false;     // simulator failure: branch excluded
  bool collided = false;
};

struct TreeEnumerator {
  const GameSimEnv* env;
  EnumeratedTree* out;

  void advance(GameSnapshot snap, int seg_idx, std::size_t idx) {
    const GameConfig& game = env->game;
    if (!snap.dead && !snap.failed) {
      try {
        auto& ego_pl = snap.ego_planner;
        auto& opp_pl = snap.opp_planner;
        std::vector<PlannerFn> fns = {[&ego_pl](const Observation& o) { return ego_pl(o); },
                                      [&opp_pl](const Observation& o) { return opp_pl(o); }};
        RolloutResult r = rollout(*env->map, env->vehicle, fns, {snap.ego_state, snap.opp_state},
                                  game.step_duration, env->rollout);
        const Trajectory& te = r.trajectories[0];
        const Trajectory& to = r.trajectories[1];
        snap.ego_s += te.back().s - te.front().s;
        snap.opp_s += to.back().s - to.front().s;
        snap.ego_state = te.back();
        snap.opp_state = to.back();
        if (r.any_collision) {
          snap.dead = true;
          snap.collided = true;
        } else {
          snap.hist_ego.ego_pcs.push_back(snap.ego_pcs);
          snap.hist_ego.opp_pcs.push_back(
              estimate_opponent_pcs(to, te, env->gres, env->collection->norm));
          snap.hist_opp.ego_pcs.push_back(snap.opp_pcs);
          snap.hist_opp.opp_pcs.push_back(
              estimate_opponent_pcs(te, to, env->gres, env->collection->norm));
        }
      } catch (const std::exception&) {
        snap.failed = true;
      }
    }

    if (seg_idx == game.m - 1) {
      if (snap.failed) {
        out->failed_branches += 1;
      } else {
        out->table.outcomes[idx] = terminal_utility(snap.ego_s, snap.opp_s, snap.collided);
        out->games_played += 1;
      }
      return;
    }

    out->ego_history[seg_idx][idx] = snap.hist_ego;
    for (int e = 0; e < kActionCount; ++e) {
      for (int o = 0; o < kActionCount; ++o) {
        GameSnapshot child = snap;
        if (!child.dead && !child.failed) {
          std::size_t ei = apply_action(child.ego_pcs, make_action(e, game.eps), *env->collection);
          child.ego_pcs = env->collection->entries[ei].pcs;
          child.ego_planner.set_params(env->collection->entries[ei].params);
          child.hist_ego.ego_actions.push_back(e);
          std::size_t oi = apply_action(child.opp_pcs, make_action(o, game.eps), *env->collection);
          child.opp_pcs = env->collection->entries[oi].pcs;
          child.opp_planner.set_params(env->collection->entries[oi].params);
          child.hist_opp.ego_actions.push_back(o);
        }
        advance(std::move(child), seg_idx + 1, OutcomeTable::child_index(idx, e, o));
      }
    }
  }
};

}  // namespace detail

// Plays every joint action sequence from one start pair. Shared prefixes are
// simulated once (snapshot branching), which also makes the bit-exact
// shared-prefix property hold by construction.
inline EnumeratedTree enumerate_game_tree(const GameSimEnv& env, const GameStart& start) {
  env.game.validate();
  if (!env.collection || env.collection->empty())
    throw std::invalid_argument("enumerate_game_tree: empty policy collection");
  EnumeratedTree out;
  out.table = OutcomeTable(env.game.m);
  out.ego_history.resize(env.game.decision_rounds());
  for (int d = 0; d < env.game.decision_rounds(); ++d) out.ego_history[d].resize(GameConfig::ipow(16, d));

  detail::GameSnapshot snap{
      LatticePlanner(*env.map, *env.raceline, env.vehicle, env.planner,
                     env.collection->entries[start.ego_entry].params),
      LatticePlanner(*env.map, *env.raceline, env.vehicle, env.planner,
                     env.collection->entries[start.opp_entry].params),
      start.ego_state,
      start.opp_state,
      to_frenet(*env.map, start.ego_state.x, start.ego_state.y).s,
      to_frenet(*env.map, start.opp_state.x, start.opp_state.y).s,
      env.collection->entries[start.ego_entry].pcs,
      env.collection->entries[start.opp_entry].pcs,
      {},
      {},
      false,
      false,
      false};
  detail::TreeEnumerator enumerator{&env, &out};
  enumerator.advance(std::move(snap), 0, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Training record stream: header (magic, version, feature_len, action_count,
// record count), then records of 40 little-endian f32 features, a u8 action,
// and an f32 regret.

struct DatasetRecord {
  FeatureVector features;
  std::uint8_t action = 0;
  float regret = 0.0f;
};

inline constexpr char kDatasetMagic[4] = {'P', 'C', 'S', 'D'};

class DatasetWriter {
 public:
  explicit DatasetWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("dataset: cannot write " + path);
    out_.write(kDatasetMagic, 4);
    std::uint32_t version = 1, flen = kFeatureLen, actions = kActionCount;
    out_.write(reinterpret_cast<const char*>(&version), 4);
    out_.write(reinterpret_cast<const char*>(&flen), 4);
    out_.write(reinterpret_cast<const char*>(&actions), 4);
    std::uint64_t count = 0;
    out_.write(reinterpret_cast<const char*>(&count), 8);
  }

  void write(const DatasetRecord& rec) {
    out_.write(reinterpret_cast<const char*>(rec.features.data()), sizeof(float) * kFeatureLen);
    out_.write(reinterpret_cast<const char*>(&rec.action), 1);
    out_.write(reinterpret_cast<const char*>(&rec.regret), sizeof(float));
    ++count_;
  }

  std::uint64_t count() const { return count_; }

  void finish() {
    out_.seekp(16);
    out_.write(reinterpret_cast<const char*>(&count_), 8);
    out_.flush();
    if (!out_) throw std::runtime_error("dataset: write failure");
  }

 private:
  std::ofstream out_;
  std::uint64_t count_ = 0;
};

inline std::vector<DatasetRecord> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kDatasetMagic, 4))
    throw std::runtime_error("dataset: bad magic in " + path);
  std::uint32_t version = 0, flen = 0, actions = 0;
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&flen), 4);
  in.read(reinterpret_cast<char*>(&actions), 4);
  in.read(reinterpret_cast<char*>(&count), 8);
  if (version != 1) throw std::runtime_error("dataset: unsupported version");
  if (flen != kFeatureLen || actions != kActionCount)
    throw std::runtime_error("dataset: layout mismatch (feature_len " + std::to_string(flen) + ", actions " +
                             std::to_string(actions) + ")");
  std::vector<DatasetRecord> recs(count);
  for (auto& rec : recs) {
    in.read(reinterpret_cast<char*>(rec.features.data()), sizeof(float) * kFeatureLen);
    in.read(reinterpret_cast<char*>(&rec.action), 1);
    in.read(reinterpret_cast<char*>(&rec.regret), sizeof(float));
  }
  if (!in) throw std::runtime_error("dataset: truncated file " + path);
  return recs;
}

// ---------------------------------------------------------------------------
// Data collection over the Cartesian product of the two DPP subsets.

struct CollectStats {
  std::uint64_t trees = 0;
  std::uint64_t games = 0;
  std::uint64_t failed_branches = 0;
  std::uint64_t samples = 0;
};

// Start poses: side by side on a start line drawn once per pair from the
// seeded generator; sides alternate with pair parity.
inline GameStart make_game_start(const GameSimEnv& env, std::size_t ego_entry, std::size_t opp_entry,
                                 std::uint64_t pair_seed, bool ego_left) {
  Rng rng(pair_seed);
  double s = rng.uniform(0.0, env.raceline->total_length);
  double off = env.game.start_side_offset;
  GameStart start;
  start.ego_entry = ego_entry;
  start.opp_entry = opp_entry;
  start.ego_state = start_state_at(*env.map, *env.raceline, s, ego_left ? +off : -off);
  start.opp_state = start_state_at(*env.map, *env.raceline, s, ego_left ? -off : +off);
  return start;
}

// Emits one RegretSample per (decision node, action) of a completed tree.
template <typename Sink>
inline std::uint64_t emit_tree_samples(const EnumeratedTree& tree, const GameConfig& game, Sink&& sink) {
  CfrEvaluator eval(tree.table);
  std::uint64_t emitted = 0;
  for (int d = 0; d < game.decision_rounds(); ++d) {
    for (std::size_t n = 0; n < tree.ego_history[d].size(); ++n) {
      for (int a = 0; a < kActionCount; ++a) {
        auto r = eval.regret(d, n, a);
        if (!r) continue;  // failed branches excluded
        DatasetRecord rec;
        rec.features = encode(tree.ego_history[d][n], a);
        rec.action = static_cast<std::uint8_t>(a);
        rec.regret = static_cast<float>(*r);
        sink(rec);
        ++emitted;
      }
    }
  }
  return emitted;
}

inline CollectStats build_dataset(const GameSimEnv& env, const std::vector<std::size_t>& dpp1,
                                  const std::vector<std::size_t>& dpp2, std::uint64_t seed,
                                  DatasetWriter& writer, unsigned threads = 1) {
  if (dpp1.empty() || dpp2.empty()) throw std::invalid_argument("build_dataset: empty start subsets");
  for (auto i : dpp1)
    for (auto j : dpp2)
      if (i == j) throw std::invalid_argument("build_dataset: start subsets must be disjoint");

  struct PairResult {
    std::vector<DatasetRecord> records;
    std::uint64_t games = 0;
    std::uint64_t failed = 0;
  };
  const std::size_t n_pairs = dpp1.size() * dpp2.size();
  std::vector<PairResult> results(n_pairs);
  parallel_for(n_pairs, threads, [&](std::size_t k) {
    std::size_t i = k / dpp2.size();
    std::size_t j = k % dpp2.size();
    GameStart start = make_game_start(env, dpp1[i], dpp2[j], Rng::derive_seed(seed, i, j), (i + j) % 2 == 0);
    EnumeratedTree tree = enumerate_game_tree(env, start);
    results[k].games = tree.games_played;
    results[k].failed = tree.failed_branches;
    emit_tree_samples(tree, env.game, [&](const DatasetRecord& rec) { results[k].records.push_back(rec); });
  });

  CollectStats stats;
  stats.trees = n_pairs;
  for (const auto& r : results) {
    stats.games += r.games;
    stats.failed_branches += r.failed;
    for (const auto& rec : r.records) writer.write(rec);
    stats.samples += r.records.size();
  }
  writer.finish();
  return stats;
}

inline void save_collect_summary(const std::string& path, const GameConfig& game, const CollectStats& stats) {
  CsvWriter w(path, {"trees", "games_played", "failed_branches", "samples", "expected_games", "expected_samples"});
  w.row({std::to_string(stats.trees), std::to_string(stats.games), std::to_string(stats.failed_branches),
         std::to_string(stats.samples),
         std::to_string(game.games_per_start_pair() * stats.trees),
         std::to_string(game.samples_per_tree() * stats.trees)});
}

}  // namespace pcs
