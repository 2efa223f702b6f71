#pragma once

// CMA-ES distribution core: box-clipped multivariate normal sampling and the
// standard evolution-path updates (weighted recombination, CSA step size,
// rank-one plus rank-mu covariance). Ranking is supplied by the caller, which
// is what lets the multi-objective wrapper sort by hypervolume loss and the
// test harness sort by a scalar objective.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <vector>

#include "pcs/math.hpp"

namespace pcs {

struct EsState {
  int dim = 0;
  VecN mean;
  double sigma = 0.3;
  Mat cov;          // symmetric positive definite
  VecN p_sigma;     // conjugate evolution path
  VecN p_c;         // covariance evolution path
  int generation = 0;
  Rng rng{0};
  int repair_count = 0;  // eigenvalue floor repairs, for logs
};

class CmaEs {
 public:
  CmaEs(VecN mean0, double sigma0, std::vector<std::pair<double, double>> box, std::uint64_t seed)
      : box_(std::move(box)) {
    state_.dim = static_cast<int>(mean0.size());
    if (box_.size() != mean0.size()) throw std::invalid_argument("CmaEs: box/mean dimension mismatch");
    state_.mean = std::move(mean0);
    state_.sigma = sigma0;
    state_.cov = Mat::identity(state_.dim);
    state_.p_sigma.assign(state_.dim, 0.0);
    state_.p_c.assign(state_.dim, 0.0);
    state_.rng = Rng(seed);
    decompose();
  }

  const EsState& state() const { return state_; }
  EsState& mutable_state() { return state_; }

  // Draws n samples from N(mean, sigma^2 C), clipped into the box.
  std::vector<VecN> ask(int n) {
    if (n < 2) throw std::invalid_argument("CmaEs::ask: need n >= 2");
    std::vector<VecN> out;
    out.reserve(n);
    const int dim = state_.dim;
    for (int k = 0; k < n; ++k) {
      VecN z(dim);
      for (int i = 0; i < dim; ++i) z[i] = state_.rng.normal();
      VecN x(dim, 0.0);
      // x = mean + sigma * B * diag(sqrt(eig)) * z
      for (int i = 0; i < dim; ++i) {
        double acc = 0.0;
        for (int j = 0; j < dim; ++j) acc += eigvec_(i, j) * eig_sqrt_[j] * z[j];
        x[i] = state_.mean[i] + state_.sigma * acc;
      }
      for (int i = 0; i < dim; ++i) x[i] = pcs::clamp(x[i], box_[i].first, box_[i].second);
      out.push_back(std::move(x));
    }
    return out;
  }

  // Distribution update from the elite samples, best first.
  void tell(const std::vector<VecN>& elites) {
    if (elites.empty()) throw std::invalid_argument("CmaEs::tell: empty elite set");
    const int dim = state_.dim;
    const std::size_t mu = elites.size();

    VecN w(mu);
    double wsum = 0.0;
    for (std::size_t i = 0; i < mu; ++i) {
      w[i] = std::log(static_cast<double>(mu) + 0.5) - std::log(static_cast<double>(i + 1));
      wsum += w[i];
    }
    for (auto& v : w) v /= wsum;
    double mu_eff = 0.0;
    for (double v : w) mu_eff += v * v;
    mu_eff = 1.0 / mu_eff;

    const double n = dim;
    double c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
    double d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma;
    double c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
    double c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
    double c_mu = std::min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) * (n + 2.0) + mu_eff));
    double chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    VecN old_mean = state_.mean;
    VecN new_mean(dim, 0.0);
    for (std::size_t i = 0; i < mu; ++i)
      for (int d = 0; d < dim; ++d) new_mean[d] += w[i] * elites[i][d];

    VecN shift(dim);
    for (int d = 0; d < dim; ++d) shift[d] = (new_mean[d] - old_mean[d]) / state_.sigma;

    // C^{-1/2} shift via the cached eigendecomposition.
    VecN tmp(dim, 0.0);
    for (int j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (int i = 0; i < dim; ++i) acc += eigvec_(i, j) * shift[i];
      tmp[j] = acc / eig_sqrt_[j];
    }
    VecN inv_sqrt_shift(dim, 0.0);
    for (int i = 0; i < dim; ++i) {
      double acc = 0.0;
      for (int j = 0; j < dim; ++j) acc += eigvec_(i, j) * tmp[j];
      inv_sqrt_shift[i] = acc;
    }

    for (int d = 0; d < dim; ++d)
      state_.p_sigma[d] = (1.0 - c_sigma) * state_.p_sigma[d] +
                          std::sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * inv_sqrt_shift[d];

    double ps_norm = norm(state_.p_sigma);
    double denom = std::sqrt(1.0 - std::pow(1.0 - c_sigma, 2.0 * (state_.generation + 1)));
    bool h_sigma = ps_norm / std::max(denom, 1e-12) < (1.4 + 2.0 / (n + 1.0)) * chi_n;

    for (int d = 0; d < dim; ++d)
      state_.p_c[d] = (1.0 - c_c) * state_.p_c[d] +
                      (h_sigma ? std::sqrt(c_c * (2.0 - c_c) * mu_eff) * shift[d] : 0.0);

    Mat c_new(dim, dim);
    double old_factor = 1.0 - c_1 - c_mu;
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c) c_new(r, c) = old_factor * state_.cov(r, c);
    double rank1 = c_1;
    double correction = (1.0 - (h_sigma ? 1.0 : 0.0)) * c_c * (2.0 - c_c);
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c) {
        c_new(r, c) += rank1 * (state_.p_c[r] * state_.p_c[c] + correction * state_.cov(r, c));
      }
    for (std::size_t i = 0; i < mu; ++i) {
      VecN y(dim);
      for (int d = 0; d < dim; ++d) y[d] = (elites[i][d] - old_mean[d]) / state_.sigma;
      for (int r = 0; r < dim; ++r)
        for (int c = 0; c < dim; ++c) c_new(r, c) += c_mu * w[i] * y[r] * y[c];
    }
    c_new.symmetrize();
    state_.cov = c_new;

    state_.sigma *= std::exp((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0));
    state_.mean = new_mean;
    state_.generation += 1;
    decompose();
  }

  // Scalar-objective harness mode: standard (mu, lambda) selection by f.
  struct ScalarResult {
    VecN best_x;
    double best_f = std::numeric_limits<double>::infinity();
    int generations = 0;
  };

  ScalarResult minimize(const std::function<double(const VecN&)>& f, int lambda, int max_generations,
                        double target_f = -std::numeric_limits<double>::infinity()) {
    ScalarResult res;
    int mu = std::max(1, lambda / 2);
    for (int g = 0; g < max_generations; ++g) {
      auto xs = ask(lambda);
      std::vector<std::pair<double, std::size_t>> ranked(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) ranked[i] = {f(xs[i]), i};
      std::sort(ranked.begin(), ranked.end());
      if (ranked.front().first < res.best_f) {
        res.best_f = ranked.front().first;
        res.best_x = xs[ranked.front().second];
      }
      std::vector<VecN> elites;
      elites.reserve(mu);
      for (int i = 0; i < mu; ++i) elites.push_back(xs[ranked[i].second]);
      tell(elites);
      res.generations = g + 1;
      if (res.best_f <= target_f) break;
    }
    return res;
  }

  void save(std::ostream& out) const {
    const char magic[4] = {'P', 'C', 'S', 'E'};
    out.write(magic, 4);
    std::uint32_t version = 1;
    std::uint32_t dim = static_cast<std::uint32_t>(state_.dim);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    std::int64_t gen = state_.generation;
    out.write(reinterpret_cast<const char*>(&gen), 8);
    auto wd = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    wd(state_.sigma);
    for (double v : state_.mean) wd(v);
    for (double v : state_.cov.a) wd(v);
    for (double v : state_.p_sigma) wd(v);
    for (double v : state_.p_c) wd(v);
    auto rs = state_.rng.state();
    for (auto v : rs) out.write(reinterpret_cast<const char*>(&v), 8);
    for (const auto& b : box_) {
      wd(b.first);
      wd(b.second);
    }
  }

  static CmaEs load(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "PCSE") throw std::runtime_error("es checkpoint: bad magic");
    std::uint32_t version = 0, dim = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&dim), 4);
    if (version != 1) throw std::runtime_error("es checkpoint: unsupported version");
    std::int64_t gen = 0;
    in.read(reinterpret_cast<char*>(&gen), 8);
    auto rd = [&]() {
      double v;
      in.read(reinterpret_cast<char*>(&v), 8);
      return v;
    };
    double sigma = rd();
    VecN mean(dim);
    for (auto& v : mean) v = rd();
    Mat cov(dim, dim);
    for (auto& v : cov.a) v = rd();
    VecN ps(dim), pc(dim);
    for (auto& v : ps) v = rd();
    for (auto& v : pc) v = rd();
    std::array<std::uint64_t, 4> rs;
    for (auto& v : rs) in.read(reinterpret_cast<char*>(&v), 8);
    std::vector<std::pair<double, double>> box(dim);
    for (auto& b : box) {
      b.first = rd();
      b.second = rd();
    }
    if (!in) throw std::runtime_error("es checkpoint: truncated file");
    CmaEs es(mean, sigma, box, 0);
    es.state_.generation = static_cast<int>(gen);
    es.state_.cov = cov;
    es.state_.p_sigma = ps;
    es.state_.p_c = pc;
    es.state_.rng.set_state(rs);
    es.decompose();
    return es;
  }

 private:
  void decompose() {
    jacobi_eigen(state_.cov, eigvals_, eigvec_);
    eig_sqrt_.resize(state_.dim);
    bool repaired = false;
    for (int i = 0; i < state_.dim; ++i) {
      if (eigvals_[i] < 1e-12) {
        eigvals_[i] = 1e-12;
        repaired = true;
      }
      eig_sqrt_[i] = std::sqrt(eigvals_[i]);
    }
    if (repaired) {
      // Rebuild C from the floored spectrum to keep it positive definite.
      state_.repair_count += 1;
      Mat c(state_.dim, state_.dim);
      for (int r = 0; r < state_.dim; ++r)
        for (int col = 0; col < state_.dim; ++col) {
          double acc = 0.0;
          for (int k = 0; k < state_.dim; ++k) acc += eigvec_(r, k) * eigvals_[k] * eigvec_(col, k);
          c(r, col) = acc;
        }
      c.symmetrize();
      state_.cov = c;
    }
  }

  EsState state_;
  std::vector<std::pair<double, double>> box_;
  VecN eigvals_;
  VecN eig_sqrt_;
  Mat eigvec_;
};

}  // namespace pcs
