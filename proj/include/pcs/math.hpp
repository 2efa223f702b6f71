#pragma once

// Small fixed-size numeric kernel: 2-D vectors, dense row-major matrices,
// a cyclic Jacobi eigensolver for symmetric matrices, Gaussian elimination,
// and a serializable counter-free PRNG (xoshiro256++) with Box-Muller normals.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcs {

inline constexpr double kPi = 3.14159265358979323846;

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double k) const { return {x * k, y * k}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  double norm2() const { return x * x + y * y; }
  Vec2 normalized() const {
    double n = norm();
    return n > 0.0 ? Vec2{x / n, y / n} : Vec2{1.0, 0.0};
  }
  // 90-degree counterclockwise rotation (left normal of a direction).
  Vec2 left() const { return {-y, x}; }
};

inline Vec2 unit_vec(double angle) { return {std::cos(angle), std::sin(angle)}; }

using VecN = std::vector<double>;

inline double dot(const VecN& a, const VecN& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const VecN& a) { return std::sqrt(dot(a, a)); }

// Dense row-major matrix, sized for small fixed problems (covariances, Jacobians).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {}

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  VecN mul(const VecN& v) const {
    VecN out(rows, 0.0);
    for (int r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int c = 0; c < cols; ++c) s += (*this)(r, c) * v[c];
      out[r] = s;
    }
    return out;
  }

  void symmetrize() {
    for (int r = 0; r < rows; ++r)
      for (int c = r + 1; c < cols; ++c) {
        double m = 0.5 * ((*this)(r, c) + (*this)(c, r));
        (*this)(r, c) = m;
        (*this)(c, r) = m;
      }
  }
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
// Returns eigenvalues ascending; columns of `vectors` are the eigenvectors.
inline void jacobi_eigen(const Mat& sym, VecN& values, Mat& vectors, int max_sweeps = 64) {
  int n = sym.rows;
  Mat a = sym;
  vectors = Mat::identity(n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = vectors(k, p), vkq = vectors(k, q);
          vectors(k, p) = c * vkp - s * vkq;
          vectors(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  values.resize(n);
  for (int i = 0; i < n; ++i) values[i] = a(i, i);
  // Sort ascending, permuting eigenvector columns alongside.
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int i, int j) { return values[i] < values[j]; });
  VecN sorted_vals(n);
  Mat sorted_vecs(n, n);
  for (int c = 0; c < n; ++c) {
    sorted_vals[c] = values[idx[c]];
    for (int r = 0; r < n; ++r) sorted_vecs(r, c) = vectors(r, idx[c]);
  }
  values = sorted_vals;
  vectors = sorted_vecs;
}

// Solves A x = b in place by Gaussian elimination with partial pivoting.
// Returns false if the matrix is numerically singular.
inline bool solve_linear(Mat a, VecN b, VecN& x) {
  int n = a.rows;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (std::abs(a(piv, col)) < 1e-14) return false;
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      std::swap(b[col], b[piv]);
    }
    for (int r = col + 1; r < n; ++r) {
      double f = a(r, col) / a(col, col);
      for (int c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  x.assign(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a(r, c) * x[c];
    x[r] = s / a(r, r);
  }
  return true;
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
inline std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
}  // namespace detail

// xoshiro256++ with explicit, serializable state. Normal deviates use
// Box-Muller without caching the spare, so the state is just the four words.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto& w : state_) w = detail::splitmix64(sm);
  }

  std::uint64_t next_u64() {
    std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  double normal() {
    double u1 = uniform();
    // Keep log() off zero; u1 in (0, 1].
    u1 = 1.0 - u1;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

  // Derives an independent stream, for per-item seeding in parallel loops.
  static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t s = base ^ (0x9e3779b97f4a7c15ULL + a * 0xd1342543de82ef95ULL + b * 0x2545f4914f6cdd1dULL);
    return detail::splitmix64(s);
  }

 private:
  std::array<std::uint64_t, 4> state_{};
};

template <typename T>
T clamp(T v, T lo, T hi) {
  return std::min(std::max(v, lo), hi);
}

inline bool all_finite(const VecN& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace pcs
