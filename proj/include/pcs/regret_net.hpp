#pragma once

// Counterfactual-regret approximator: one-hidden-layer MLP with leaky-ReLU
// (slope 0 = plain ReLU, 1 = identity for linear test mode), trained with
// Adam on L1 loss under a reduce-on-plateau learning rate. Weights serialize
// as 32-bit floats; the Scalar template keeps a 64-bit instantiation
// available for gradient checking.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcs/game_cfr.hpp"
#include "pcs/math.hpp"

namespace pcs {

template <typename Scalar>
struct MlpT {
  int in_dim = kFeatureLen;
  int hidden = 2048;
  Scalar alpha = Scalar(0.01);
  std::vector<Scalar> w1;  // hidden x in_dim, row-major
  std::vector<Scalar> b1;  // hidden
  std::vector<Scalar> w2;  // hidden
  Scalar b2 = Scalar(0);

  static MlpT init(int in_dim, int hidden, Scalar alpha, std::uint64_t seed) {
    MlpT m;
    m.in_dim = in_dim;
    m.hidden = hidden;
    m.alpha = alpha;
    m.w1.resize(static_cast<std::size_t>(hidden) * in_dim);
    m.b1.assign(hidden, Scalar(0));
    m.w2.resize(hidden);
    m.b2 = Scalar(0);
    Rng rng(seed);
    double s1 = std::sqrt(2.0 / in_dim);
    double s2 = std::sqrt(2.0 / hidden);
    for (auto& w : m.w1) w = Scalar(rng.normal() * s1);
    for (auto& w : m.w2) w = Scalar(rng.normal() * s2);
    return m;
  }

  Scalar activate(Scalar pre) const { return pre > Scalar(0) ? pre : alpha * pre; }
  Scalar activate_grad(Scalar pre) const { return pre > Scalar(0) ? Scalar(1) : alpha; }

  template <typename In>
  Scalar forward(std::span<const In> x) const {
    if (static_cast<int>(x.size()) != in_dim) throw std::invalid_argument("mlp: input size mismatch");
    Scalar y = b2;
    for (int j = 0; j < hidden; ++j) {
      Scalar pre = b1[j];
      const Scalar* row = &w1[static_cast<std::size_t>(j) * in_dim];
      for (int i = 0; i < in_dim; ++i) pre += row[i] * Scalar(x[i]);
      y += w2[j] * activate(pre);
    }
    return y;
  }

  Scalar forward(const FeatureVector& x) const { return forward(std::span<const float>(x.data(), x.size())); }

  // Inference-side clip: regrets below zero carry no weight in the strategy.
  Scalar forward_clipped(const FeatureVector& x) const { return std::max(forward(x), Scalar(0)); }

  std::size_t param_count() const { return w1.size() + b1.size() + w2.size() + 1; }
};

using Mlp = MlpT<float>;

// --------------------------------------------------------------------------
// Serialization: magic "PCSR", u32 version, u32 feature_len, u32 hidden,
// f32 alpha, then w1 (row-major), b1, w2, b2 as little-endian f32.

template <typename Scalar>
inline void save_model(const std::string& path, const MlpT<Scalar>& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("model: cannot write " + path);
  out.write("PCSR", 4);
  std::uint32_t version = 1, flen = static_cast<std::uint32_t>(m.in_dim),
                hidden = static_cast<std::uint32_t>(m.hidden);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&flen), 4);
  out.write(reinterpret_cast<const char*>(&hidden), 4);
  float alpha = static_cast<float>(m.alpha);
  out.write(reinterpret_cast<const char*>(&alpha), 4);
  auto wf = [&](Scalar v) {
    float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  };
  for (Scalar v : m.w1) wf(v);
  for (Scalar v : m.b1) wf(v);
  for (Scalar v : m.w2) wf(v);
  wf(m.b2);
  if (!out) throw std::runtime_error("model: write failure " + path);
}

template <typename Scalar = float>
inline MlpT<Scalar> load_model(const std::string& path, int expected_feature_len = -1) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("model: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "PCSR") throw std::runtime_error("model: bad magic in " + path);
  std::uint32_t version = 0, flen = 0, hidden = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&flen), 4);
  in.read(reinterpret_cast<char*>(&hidden), 4);
  if (version != 1) throw std::runtime_error("model: unsupported version " + std::to_string(version));
  if (expected_feature_len >= 0 && flen != static_cast<std::uint32_t>(expected_feature_len))
    throw std::runtime_error("model: feature_len " + std::to_string(flen) + " does not match expected " +
                             std::to_string(expected_feature_len));
  float alpha = 0.0f;
  in.read(reinterpret_cast<char*>(&alpha), 4);
  MlpT<Scalar> m;
  m.in_dim = static_cast<int>(flen);
  m.hidden = static_cast<int>(hidden);
  m.alpha = Scalar(alpha);
  m.w1.resize(static_cast<std::size_t>(flen) * hidden);
  m.b1.resize(hidden);
  m.w2.resize(hidden);
  auto rf = [&]() {
    float f = 0.0f;
    in.read(reinterpret_cast<char*>(&f), 4);
    return Scalar(f);
  };
  for (auto& v : m.w1) v = rf();
  for (auto& v : m.b1) v = rf();
  for (auto& v : m.w2) v = rf();
  m.b2 = rf();
  if (!in) throw std::runtime_error("model: truncated file " + path);
  return m;
}

// --------------------------------------------------------------------------
// Training.

struct TrainConfig {
  int hidden = 2048;
  double alpha = 0.01;  // leaky-ReLU slope; set 0 for plain ReLU
  int batch = 1024;
  int epochs = 2000;
  double lr0 = 0.005;
  int plateau_patience = 10;   // validation evaluations without improvement
  double plateau_factor = 0.5;
  double val_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  static TrainConfig from_config(const Config& c) {
    TrainConfig t;
    t.hidden = c.get_int("train", "hidden", t.hidden);
    t.alpha = c.get_double("train", "alpha", t.alpha);
    t.batch = c.get_int("train", "batch", t.batch);
    t.epochs = c.get_int("train", "epochs", t.epochs);
    t.lr0 = c.get_double("train", "lr0", t.lr0);
    t.plateau_patience = c.get_int("train", "plateau_patience", t.plateau_patience);
    t.plateau_factor = c.get_double("train", "plateau_factor", t.plateau_factor);
    t.val_fraction = c.get_double("train", "val_fraction", t.val_fraction);
    t.seed = static_cast<std::uint64_t>(c.get_int("train", "seed", static_cast<int>(t.seed)));
    return t;
  }
};

struct TrainLogRow {
  int epoch = 0;
  double train_l1 = 0.0;
  double val_l1 = 0.0;
  double lr = 0.0;
};

template <typename Scalar>
struct TrainResult {
  MlpT<Scalar> model;  // best-validation checkpoint
  std::vector<TrainLogRow> log;
  double best_val = std::numeric_limits<double>::infinity();
};

namespace detail {

template <typename Scalar>
struct MlpGradients {
  std::vector<Scalar> w1, b1, w2;
  Scalar b2 = Scalar(0);

  explicit MlpGradients(const MlpT<Scalar>& m)
      : w1(m.w1.size(), Scalar(0)), b1(m.b1.size(), Scalar(0)), w2(m.w2.size(), Scalar(0)) {}

  void zero() {
    std::fill(w1.begin(), w1.end(), Scalar(0));
    std::fill(b1.begin(), b1.end(), Scalar(0));
    std::fill(w2.begin(), w2.end(), Scalar(0));
    b2 = Scalar(0);
  }
};

// Accumulates the L1 subgradient for one sample; returns |y - target|.
template <typename Scalar>
inline double backprop_l1(const MlpT<Scalar>& m, const FeatureVector& x, Scalar target,
                          MlpGradients<Scalar>& g, std::vector<Scalar>& pre_buf) {
  pre_buf.resize(m.hidden);
  Scalar y = m.b2;
  for (int j = 0; j < m.hidden; ++j) {
    Scalar pre = m.b1[j];
    const Scalar* row = &m.w1[static_cast<std::size_t>(j) * m.in_dim];
    for (int i = 0; i < m.in_dim; ++i) pre += row[i] * Scalar(x[i]);
    pre_buf[j] = pre;
    y += m.w2[j] * m.activate(pre);
  }
  Scalar diff = y - target;
  Scalar dy = diff > Scalar(0) ? Scalar(1) : (diff < Scalar(0) ? Scalar(-1) : Scalar(0));
  g.b2 += dy;
  for (int j = 0; j < m.hidden; ++j) {
    Scalar h = m.activate(pre_buf[j]);
    g.w2[j] += dy * h;
    Scalar dpre = dy * m.w2[j] * m.activate_grad(pre_buf[j]);
    g.b1[j] += dpre;
    Scalar* grow = &g.w1[static_cast<std::size_t>(j) * m.in_dim];
    for (int i = 0; i < m.in_dim; ++i) grow[i] += dpre * Scalar(x[i]);
  }
  return std::abs(static_cast<double>(diff));
}

struct AdamState {
  std::vector<double> m, v;
  long long t = 0;
};

}  // namespace detail

// Adam on L1 loss with deterministic seeded shuffling, a one-time validation
// split, and plateau-driven learning-rate decay. Returns the parameters of
// the best validation epoch.
template <typename Scalar>
inline TrainResult<Scalar> train(const std::vector<DatasetRecord>& data, const TrainConfig& cfg) {
  if (data.size() < 2) throw std::invalid_argument("train: need at least 2 samples");
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_index(i + 1)]);
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_fraction * data.size()));
  n_val = std::min(n_val, data.size() - 1);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());

  TrainResult<Scalar> out;
  MlpT<Scalar> model = MlpT<Scalar>::init(kFeatureLen, cfg.hidden, Scalar(cfg.alpha), cfg.seed ^ 0x9e37ULL);
  detail::MlpGradients<Scalar> grads(model);
  detail::AdamState adam;
  adam.m.assign(model.param_count(), 0.0);
  adam.v.assign(model.param_count(), 0.0);
  std::vector<Scalar> pre_buf;

  auto val_loss = [&]() {
    double acc = 0.0;
    for (auto i : val_idx)
      acc += std::abs(static_cast<double>(model.forward(data[i].features)) - data[i].regret);
    return acc / static_cast<double>(val_idx.size());
  };

  double lr = cfg.lr0;
  int plateau_streak = 0;
  out.model = model;

  const int batch = std::max(1, cfg.batch);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = train_idx.size() - 1; i > 0; --i)
      std::swap(train_idx[i], train_idx[rng.uniform_index(i + 1)]);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += batch) {
      std::size_t end = std::min(train_idx.size(), start + batch);
      grads.zero();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& rec = data[train_idx[k]];
        batch_loss += detail::backprop_l1(model, rec.features, Scalar(rec.regret), grads, pre_buf);
      }
      double inv = 1.0 / static_cast<double>(end - start);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += batch_loss;
      seen += end - start;

      adam.t += 1;
      double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.t));
      double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.t));
      std::size_t p = 0;
      auto update = [&](Scalar& param, Scalar grad_raw) {
        double g = static_cast<double>(grad_raw) * inv;
        adam.m[p] = cfg.beta1 * adam.m[p] + (1.0 - cfg.beta1) * g;
        adam.v[p] = cfg.beta2 * adam.v[p] + (1.0 - cfg.beta2) * g * g;
        double mh = adam.m[p] / bc1;
        double vh = adam.v[p] / bc2;
        param = Scalar(static_cast<double>(param) - lr * mh / (std::sqrt(vh) + cfg.adam_eps));
        ++p;
      };
      for (std::size_t i = 0; i < model.w1.size(); ++i) update(model.w1[i], grads.w1[i]);
      for (std::size_t i = 0; i < model.b1.size(); ++i) update(model.b1[i], grads.b1[i]);
      for (std::size_t i = 0; i < model.w2.size(); ++i) update(model.w2[i], grads.w2[i]);
      update(model.b2, grads.b2);
    }

    double vl = val_loss();
    out.log.push_back({epoch, seen ? epoch_loss / static_cast<double>(seen) : 0.0, vl, lr});
    if (vl < out.best_val - 1e-15) {
      out.best_val = vl;
      out.model = model;
      plateau_streak = 0;
    } else {
      ++plateau_streak;
      if (plateau_streak >= cfg.plateau_patience) {
        lr *= cfg.plateau_factor;
        plateau_streak = 0;
      }
    }
  }
  return out;
}

inline void save_train_log(const std::string& path, const std::vector<TrainLogRow>& log) {
  CsvWriter w(path, {"epoch", "train_l1", "val_l1", "lr"});
  for (const auto& r : log)
    w.row({std::to_string(r.epoch), CsvWriter::num(r.train_l1), CsvWriter::num(r.val_l1), CsvWriter::num(r.lr)});
}

// --------------------------------------------------------------------------
// Finite-difference gradient validation.

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool skipped = false;  // input sat on an activation or loss kink
  std::size_t checked = 0;
};

// Compares the analytic L1 subgradient against central differences over all
// parameters. Samples within `kink_margin` of an activation or loss kink are
// skipped (the subgradient is not unique there).
template <typename Scalar>
inline GradCheckResult grad_check(const MlpT<Scalar>& model, const FeatureVector& x, double target,
                                  double h = 1e-6, double kink_margin = 1e-4) {
  MlpT<Scalar> m = model;
  GradCheckResult res;

  // Kink screen at the base point.
  {
    Scalar y = m.b2;
    for (int j = 0; j < m.hidden; ++j) {
      Scalar pre = m.b1[j];
      const Scalar* row = &m.w1[static_cast<std::size_t>(j) * m.in_dim];
      for (int i = 0; i < m.in_dim; ++i) pre += row[i] * Scalar(x[i]);
      if (std::abs(static_cast<double>(pre)) < kink_margin) {
        res.skipped = true;
        return res;
      }
      y += m.w2[j] * m.activate(pre);
    }
    if (std::abs(static_cast<double>(y) - target) < kink_margin) {
      res.skipped = true;
      return res;
    }
  }

  detail::MlpGradients<Scalar> grads(m);
  std::vector<Scalar> pre_buf;
  detail::backprop_l1(m, x, Scalar(target), grads, pre_buf);

  auto loss_at = [&]() { return std::abs(static_cast<double>(m.forward(x)) - target); };
  auto check = [&](Scalar& param, Scalar analytic) {
    Scalar saved = param;
    param = saved + Scalar(h);
    double up = loss_at();
    param = saved - Scalar(h);
    double down = loss_at();
    param = saved;
    double numeric = (up - down) / (2.0 * h);
    double a = static_cast<double>(analytic);
    double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    res.max_rel_err = std::max(res.max_rel_err, err);
    ++res.checked;
  };
  for (std::size_t i = 0; i < m.w1.size(); ++i) check(m.w1[i], grads.w1[i]);
  for (std::size_t i = 0; i < m.b1.size(); ++i) check(m.b1[i], grads.b1[i]);
  for (std::size_t i = 0; i < m.w2.size(); ++i) check(m.w2[i], grads.w2[i]);
  check(m.b2, grads.b2);
  return res;
}

}  // namespace pcs
