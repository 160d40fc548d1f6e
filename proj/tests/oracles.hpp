#ifndef QBSVIE_TESTS_ORACLES_HPP
#define QBSVIE_TESTS_ORACLES_HPP

// Independent reference computations. None of these call the solvers; the
// path-tree ones enumerate paths directly and share only the node numbering
// (n at step k, children 2n and 2n+1, up = low bit).

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double binom(unsigned n, unsigned k) {
  return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0));
}

/// ln E[e^{q f(W_T)} | W(t_k) = (2m-k) sqrt(dt)] / q on the recombining lattice, by binomial sums.
inline double lattice_log_mgf(unsigned N, double T, unsigned k, unsigned m, double q,
                              const std::function<double(double)>& f) {
  const double s = std::sqrt(T / N);
  const unsigned r = N - k;
  long double acc = 0.0L, shift = -INFINITY;
  std::vector<long double> ex(r + 1);
  for (unsigned u = 0; u <= r; ++u) {
    ex[u] = q * f((2.0 * (m + u) - N) * s);
    shift = std::max(shift, ex[u]);
  }
  for (unsigned u = 0; u <= r; ++u) acc += binom(r, u) * std::pow(0.5L, r) * std::exp(ex[u] - shift);
  return static_cast<double>((std::log(acc) + shift) / q);
}

/// E[f(W_T)] on the lattice.
inline double lattice_mean(unsigned N, double T, const std::function<double(double)>& f) {
  const double s = std::sqrt(T / N);
  long double acc = 0.0L;
  for (unsigned u = 0; u <= N; ++u) acc += binom(N, u) * std::pow(0.5L, N) * f((2.0 * u - N) * s);
  return static_cast<double>(acc);
}

/// Y(t) = 1 + int_t^T a Y(s) ds solved backwards by trapezoid on a fine grid; returns Y(t0).
inline double scalar_volterra_linear(double a, double T, double t0, int fine_steps = 200000) {
  const double h = (T - t0) / fine_steps;
  double y = 1.0;
  for (int k = 0; k < fine_steps; ++k) y = y * (1.0 + 0.5 * a * h) / (1.0 - 0.5 * a * h);
  return y;
}

inline double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

/// Path-tree W(t_k) at node n.
inline double tree_w(unsigned k, std::uint64_t n, double sdt) {
  return (2.0 * std::popcount(n) - static_cast<double>(k)) * sdt;
}

/// Discrete Type-I / Type-II system on the path tree, solved as one dense
/// nonlinear system in all eta(i, j, n), j < N, by Newton with a
/// finite-difference Jacobian.
///
///   eta(i,j,n) = mean of children + dt * rest(t_i, t_j, ybar_j(n), Z, z') + ln cosh(q Z sqrt(dt)) / q
///   Z = (child_up - child_down) / (2 sqrt(dt)),  ybar_j = (Y_j + E_j[Y_{j+1}]) / 2,  Y_j = eta(j, j, .)
///   z' = Z(t_j, t_i): for j > i the increment integrand of Y_j at step i (descendant averages),
///        for j = i the member's own Z at the diagonal.
struct TreeSystem {
  unsigned N;
  double T;
  double q;
  std::function<double(double t, double s, double y, double z, double zp)> rest;
  std::function<double(double t, double wT)> psi;  // psi(t) as a function of W(T)
  bool with_zprime = false;

  double dt() const { return T / N; }
  double sdt() const { return std::sqrt(dt()); }
  double t(unsigned k) const { return k == N ? T : k * T / N; }

  // offset of eta(i, j, .) in the unknown vector
  std::vector<std::vector<std::size_t>> offsets() const {
    std::vector<std::vector<std::size_t>> off(N + 1, std::vector<std::size_t>(N + 1, 0));
    std::size_t pos = 0;
    for (unsigned i = 0; i <= N; ++i)
      for (unsigned j = i; j < N; ++j) {
        off[i][j] = pos;
        pos += std::size_t{1} << j;
      }
    return off;
  }

  std::size_t unknowns() const {
    std::size_t c = 0;
    for (unsigned i = 0; i <= N; ++i)
      for (unsigned j = i; j < N; ++j) c += std::size_t{1} << j;
    return c;
  }

  double eta(const Eigen::VectorXd& x, const std::vector<std::vector<std::size_t>>& off, unsigned i, unsigned j,
             std::uint64_t n) const {
    if (j == N) return psi(t(i), tree_w(N, n, sdt()));
    return x[static_cast<Eigen::Index>(off[i][j] + n)];
  }

  double Y(const Eigen::VectorXd& x, const std::vector<std::vector<std::size_t>>& off, unsigned j,
           std::uint64_t n) const {
    return eta(x, off, j, j, n);
  }

  /// E[Y_j | node a at step l], l <= j, by averaging over all descendants.
  double cond_mean_Y(const Eigen::VectorXd& x, const std::vector<std::vector<std::size_t>>& off, unsigned j,
                     unsigned l, std::uint64_t a) const {
    const unsigned r = j - l;
    long double acc = 0.0L;
    for (std::uint64_t d = 0; d < (std::uint64_t{1} << r); ++d) acc += Y(x, off, j, (a << r) | d);
    return static_cast<double>(acc / static_cast<long double>(std::uint64_t{1} << r));
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& x) const {
    const auto off = offsets();
    Eigen::VectorXd F(x.size());
    const double s2 = 2.0 * sdt();
    for (unsigned i = 0; i <= N; ++i) {
      for (unsigned j = i; j < N; ++j) {
        for (std::uint64_t n = 0; n < (std::uint64_t{1} << j); ++n) {
          const double up = eta(x, off, i, j + 1, 2 * n + 1), dn = eta(x, off, i, j + 1, 2 * n);
          const double z = (up - dn) / s2;
          const double ynext = 0.5 * (Y(x, off, j + 1, 2 * n + 1) + Y(x, off, j + 1, 2 * n));
          const double ybar = 0.5 * (Y(x, off, j, n) + ynext);
          double zp = 0.0;
          if (with_zprime) {
            if (j == i) {
              zp = z;
            } else {
              const std::uint64_t a = n >> (j - i);
              zp = (cond_mean_Y(x, off, j, i + 1, 2 * a + 1) - cond_mean_Y(x, off, j, i + 1, 2 * a)) / s2;
            }
          }
          const double quad = q == 0.0 ? 0.0 : log_cosh(q * z * sdt()) / q;
          const double rhs = 0.5 * (up + dn) + dt() * rest(t(i), t(j), ybar, z, zp) + quad;
          F[static_cast<Eigen::Index>(off[i][j] + n)] = eta(x, off, i, j, n) - rhs;
        }
      }
    }
    return F;
  }

  /// Returns the converged unknowns; throws if Newton stalls.
  Eigen::VectorXd solve(double tol = 1e-14, int max_iter = 50) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(unknowns()));
    for (int it = 0; it < max_iter; ++it) {
      const Eigen::VectorXd F = residual(x);
      if (F.lpNorm<Eigen::Infinity>() < tol) return x;
      Eigen::MatrixXd J(x.size(), x.size());
      for (Eigen::Index c = 0; c < x.size(); ++c) {
        const double h = 1e-7 * std::max(1.0, std::abs(x[c]));
        Eigen::VectorXd xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        J.col(c) = (residual(xp) - residual(xm)) / (2.0 * h);
      }
      x -= J.partialPivLu().solve(F);
    }
    if (residual(x).lpNorm<Eigen::Infinity>() < 1e-11) return x;
    throw std::runtime_error("tree oracle: Newton did not converge");
  }

  /// Y(t_j) at node n from a solved vector.
  std::vector<std::vector<double>> diagonal(const Eigen::VectorXd& x) const {
    const auto off = offsets();
    std::vector<std::vector<double>> out(N + 1);
    for (unsigned j = 0; j <= N; ++j)
      for (std::uint64_t n = 0; n < (std::uint64_t{1} << j); ++n) out[j].push_back(Y(x, off, j, n));
    return out;
  }

  /// Z(t_i, t_j), i <= j < N, at node n.
  double z_upper(const Eigen::VectorXd& x, unsigned i, unsigned j, std::uint64_t n) const {
    const auto off = offsets();
    return (eta(x, off, i, j + 1, 2 * n + 1) - eta(x, off, i, j + 1, 2 * n)) / (2.0 * sdt());
  }
};

}  // namespace oracle

#endif  // QBSVIE_TESTS_ORACLES_HPP
