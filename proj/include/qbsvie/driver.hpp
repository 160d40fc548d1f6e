#ifndef QBSVIE_DRIVER_HPP
#define QBSVIE_DRIVER_HPP

// Discrete Brownian drivers and their conditional-expectation operators.
//
// Node numbering at step k:
//   lattice    m = number of up-moves, 0 <= m <= k, W = (2m - k) sqrt(dt);
//              children of (k, m) are (k+1, m) [down] and (k+1, m+1) [up].
//   path-tree  n in [0, 2^k), bit b of the path is the b-th move (1 = up),
//              first move most significant; children are 2n [down], 2n+1 [up].
//   monte-carlo  n = path index at every step.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qbsvie/errors.hpp"
#include "qbsvie/grid.hpp"

namespace qbsvie {

enum class Backend { lattice, path_tree, monte_carlo };

inline std::string to_string(Backend b) {
  switch (b) {
    case Backend::lattice: return "lattice";
    case Backend::path_tree: return "path-tree";
    case Backend::monte_carlo: return "monte-carlo";
  }
  return "?";
}

inline Backend backend_from_string(const std::string& s) {
  if (s == "lattice") return Backend::lattice;
  if (s == "path-tree") return Backend::path_tree;
  if (s == "monte-carlo") return Backend::monte_carlo;
  throw ValidationError("unknown driver backend '" + s + "' (expected lattice | path-tree | monte-carlo)");
}

struct DriverSpec {
  Backend backend = Backend::lattice;
  std::size_t paths = 4096;        // monte-carlo only
  std::uint64_t seed = 7;          // monte-carlo only
  int basis_degree = 4;            // monte-carlo only
  std::size_t path_tree_cap = 22;  // maximum N for the full path tree
};

enum class Measurability { adapted, terminal };

/// Values on the nodes of one step. A terminal-measurable function lives on
/// step-N nodes and may depend on the whole path.
struct NodeFunction {
  std::size_t step = 0;
  std::vector<double> values;
  Measurability kind = Measurability::adapted;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t n) const { return values[n]; }
  double& operator[](std::size_t n) { return values[n]; }

  double sup_norm() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }
};

class Driver;

/// Read-only view of one terminal node / leaf / path, handed to position processes.
class PathView {
 public:
  PathView(const Driver& driver, std::size_t terminal_node) : driver_(&driver), node_(terminal_node) {}

  std::size_t node() const noexcept { return node_; }
  double terminal_w() const;
  /// W(t_l) along this path; unavailable on the recombining lattice for l < N.
  double w(std::size_t l) const;
  double running_max() const;

 private:
  const Driver* driver_;
  std::size_t node_;
};

/// psi(t): F_T-measurable for each t. Evaluated at outer grid times t_i.
struct PositionProcess {
  std::function<double(double t, std::size_t i, const PathView& path)> value;
  bool path_dependent = false;
  std::string description = "custom";
};

inline PositionProcess constant_position(double c) {
  return {[c](double, std::size_t, const PathView&) { return c; }, false, "constant(" + std::to_string(c) + ")"};
}

/// psi(t) = a * t * W(T)
inline PositionProcess linear_terminal(double a) {
  return {[a](double t, std::size_t, const PathView& p) { return a * t * p.terminal_w(); }, false,
          "linear_terminal(" + std::to_string(a) + ")"};
}

/// psi(t) = max(W(T) - K, 0)
inline PositionProcess call_terminal(double strike) {
  return {[strike](double, std::size_t, const PathView& p) { return std::max(p.terminal_w() - strike, 0.0); }, false,
          "call_terminal(" + std::to_string(strike) + ")"};
}

/// psi(t) = max_k W(t_k), k = 0..N (W(0) = 0 included).
inline PositionProcess running_max_position() {
  return {[](double, std::size_t, const PathView& p) { return p.running_max(); }, true, "running_max"};
}

class Driver {
 public:
  Driver(TimeGrid grid, DriverSpec spec) : grid_(grid), spec_(spec) {
    switch (spec_.backend) {
      case Backend::lattice: break;
      case Backend::path_tree:
        if (grid_.steps() > spec_.path_tree_cap)
          throw SizeError("path-tree driver: N = " + std::to_string(grid_.steps()) + " exceeds cap " +
                          std::to_string(spec_.path_tree_cap));
        if (grid_.steps() >= 63) throw SizeError("path-tree driver: N must be below 63");
        break;
      case Backend::monte_carlo:
        if (spec_.paths < 2) throw ValidationError("monte-carlo driver: need at least 2 paths");
        if (spec_.basis_degree < 0) throw ValidationError("monte-carlo driver: basis degree must be >= 0");
        simulate();
        factor_regressions();
        break;
    }
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  const DriverSpec& spec() const noexcept { return spec_; }
  Backend backend() const noexcept { return spec_.backend; }
  std::size_t steps() const noexcept { return grid_.steps(); }
  bool is_binary() const noexcept { return spec_.backend != Backend::monte_carlo; }
  bool has_paths() const noexcept { return spec_.backend != Backend::lattice; }

  std::size_t node_count(std::size_t k) const {
    switch (spec_.backend) {
      case Backend::lattice: return k + 1;
      case Backend::path_tree: return std::size_t{1} << k;
      case Backend::monte_carlo: return spec_.paths;
    }
    return 0;
  }

  std::size_t total_nodes() const {
    std::size_t total = 0;
    for (std::size_t k = 0; k <= steps(); ++k) total += node_count(k);
    return total;
  }

  /// Probability of node n at step k (uniform over paths on path-tree / mc).
  double node_probability(std::size_t k, std::size_t n) const {
    switch (spec_.backend) {
      case Backend::lattice: return binomial_probability(k, n);
      case Backend::path_tree: return std::ldexp(1.0, -static_cast<int>(k));
      case Backend::monte_carlo: return 1.0 / static_cast<double>(spec_.paths);
    }
    return 0.0;
  }

  double w(std::size_t k, std::size_t n) const {
    const double s = grid_.sqrt_dt();
    switch (spec_.backend) {
      case Backend::lattice: return (2.0 * static_cast<double>(n) - static_cast<double>(k)) * s;
      case Backend::path_tree:
        return (2.0 * static_cast<double>(std::popcount(static_cast<std::uint64_t>(n))) - static_cast<double>(k)) * s;
      case Backend::monte_carlo: return paths_[k][n];
    }
    return 0.0;
  }

  /// Index at step l of the ancestor of node n at step k (l <= k). Undefined on the lattice.
  std::size_t ancestor(std::size_t k, std::size_t n, std::size_t l) const {
    switch (spec_.backend) {
      case Backend::path_tree: return n >> (k - l);
      case Backend::monte_carlo: return n;
      case Backend::lattice: break;
    }
    throw ValidationError("recombining lattice nodes have no unique ancestor");
  }

  NodeFunction node_values(std::size_t k, const std::function<double(double)>& f_of_w) const {
    NodeFunction out{k, std::vector<double>(node_count(k)), Measurability::adapted};
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = f_of_w(w(k, n));
    return out;
  }

  NodeFunction constant(std::size_t k, double c) const {
    return NodeFunction{k, std::vector<double>(node_count(k), c), Measurability::adapted};
  }

  /// E_{t_k}[f] for f at step k+1.
  NodeFunction expect_step(const NodeFunction& f) const {
    require_defined(f, "expect_step");
    if (f.step == 0) throw ValidationError("expect_step: function is already at step 0");
    const std::size_t k = f.step - 1;
    NodeFunction out{k, std::vector<double>(node_count(k)), Measurability::adapted};
    switch (spec_.backend) {
      case Backend::lattice:
        for (std::size_t m = 0; m <= k; ++m) out[m] = 0.5 * (f[m] + f[m + 1]);
        break;
      case Backend::path_tree:
        for (std::size_t n = 0; n < out.size(); ++n) out[n] = 0.5 * (f[2 * n] + f[2 * n + 1]);
        break;
      case Backend::monte_carlo: out.values = regress(k, f.values); break;
    }
    return out;
  }

  /// E_{t_k}[f] for f at any step >= k (tower of one-step averages on binary
  /// backends, one least-squares projection on Monte Carlo).
  NodeFunction conditional_expectation(const NodeFunction& f, std::size_t k) const {
    require_defined(f, "conditional_expectation");
    if (k > f.step)
      throw ValidationError("conditional_expectation: target step " + std::to_string(k) + " is after step " +
                            std::to_string(f.step));
    if (k == f.step && f.kind == Measurability::adapted) return f;
    if (spec_.backend == Backend::monte_carlo) {
      return NodeFunction{k, regress(k, f.values), Measurability::adapted};
    }
    NodeFunction cur = f;
    cur.kind = Measurability::adapted;
    while (cur.step > k) cur = expect_step(cur);
    return cur;
  }

  /// Z_k = E_{t_k}[f dW_{k+1}] / dt for f at step k+1: the discrete
  /// martingale-representation integrand. Binary backends: (f_up - f_down) / (2 sqrt(dt)).
  NodeFunction increment_projection(const NodeFunction& f) const {
    require_defined(f, "increment_projection");
    if (f.step == 0) throw ValidationError("increment_projection: function is at step 0");
    const std::size_t k = f.step - 1;
    const double denom = 2.0 * grid_.sqrt_dt();
    NodeFunction out{k, std::vector<double>(node_count(k)), Measurability::adapted};
    switch (spec_.backend) {
      case Backend::lattice:
        for (std::size_t m = 0; m <= k; ++m) out[m] = (f[m + 1] - f[m]) / denom;
        break;
      case Backend::path_tree:
        for (std::size_t n = 0; n < out.size(); ++n) out[n] = (f[2 * n + 1] - f[2 * n]) / denom;
        break;
      case Backend::monte_carlo: {
        std::vector<double> prod(spec_.paths);
        for (std::size_t p = 0; p < prod.size(); ++p) prod[p] = f[p] * (paths_[k + 1][p] - paths_[k][p]);
        out.values = regress(k, prod);
        for (double& v : out.values) v /= grid_.dt();
        break;
      }
    }
    return out;
  }

  /// Increment dW_{k+1} seen from node n at step k+1.
  double increment(std::size_t k1, std::size_t n) const {
    switch (spec_.backend) {
      case Backend::lattice: throw ValidationError("lattice nodes do not determine the last increment");
      case Backend::path_tree: return (n & 1U) ? grid_.sqrt_dt() : -grid_.sqrt_dt();
      case Backend::monte_carlo: return paths_[k1][n] - paths_[k1 - 1][n];
    }
    return 0.0;
  }

  /// psi(t_i) on the terminal nodes.
  NodeFunction evaluate_position(const PositionProcess& psi, std::size_t i) const {
    if (i > steps()) throw ValidationError("evaluate_position: outer index out of range");
    if (psi.path_dependent && spec_.backend == Backend::lattice)
      throw ValidationError("position '" + psi.description +
                            "' is path-dependent and cannot be represented on the recombining lattice");
    const std::size_t N = steps();
    NodeFunction out{N, std::vector<double>(node_count(N)), Measurability::terminal};
    const double t = grid_[i];
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = psi.value(t, i, PathView(*this, n));
    return out;
  }

  /// max over outer indices and terminal nodes of |psi(t_i)|.
  double position_sup_norm(const PositionProcess& psi) const {
    double m = 0.0;
    for (std::size_t i = 0; i <= steps(); ++i) m = std::max(m, evaluate_position(psi, i).sup_norm());
    return m;
  }

  /// Expectation at time 0 of f at step k.
  double mean(const NodeFunction& f) const {
    require_defined(f, "mean");
    long double acc = 0.0L;
    for (std::size_t n = 0; n < f.size(); ++n)
      acc += static_cast<long double>(node_probability(f.step, n)) * static_cast<long double>(f[n]);
    return static_cast<double>(acc);
  }

  const std::vector<std::vector<double>>& mc_paths() const { return paths_; }

 private:
  void require_defined(const NodeFunction& f, const char* op) const {
    if (f.step > steps() || f.size() != node_count(f.step))
      throw ValidationError(std::string(op) + ": function at step " + std::to_string(f.step) + " has " +
                            std::to_string(f.size()) + " values, driver has " +
                            (f.step > steps() ? std::string("no such step") : std::to_string(node_count(f.step))));
  }

  double binomial_probability(std::size_t k, std::size_t m) const {
    // C(k, m) 2^-k via lgamma; exact enough for reporting, never used by the solvers.
    const double lg = std::lgamma(static_cast<double>(k) + 1.0) - std::lgamma(static_cast<double>(m) + 1.0) -
                      std::lgamma(static_cast<double>(k - m) + 1.0);
    return std::exp(lg - static_cast<double>(k) * std::log(2.0));
  }

  void simulate() {
    const std::size_t N = steps(), P = spec_.paths;
    paths_.assign(N + 1, std::vector<double>(P, 0.0));
    const double s = grid_.sqrt_dt();
    for (std::size_t p = 0; p < P; ++p) {
      // one stream per (seed, path) so paths are reproducible independently of each other
      std::seed_seq seq{static_cast<std::uint32_t>(spec_.seed), static_cast<std::uint32_t>(spec_.seed >> 32),
                        static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(p >> 32)};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> normal(0.0, 1.0);
      for (std::size_t k = 1; k <= N; ++k) paths_[k][p] = paths_[k - 1][p] + s * normal(rng);
    }
  }

  void factor_regressions() {
    const std::size_t N = steps(), P = spec_.paths;
    regressions_.clear();
    regressions_.reserve(N + 1);
    for (std::size_t k = 0; k <= N; ++k) {
      // W(0) = 0 on every path: only the constant is identifiable there.
      const int degree = k == 0 ? 0 : spec_.basis_degree;
      const double scale = k == 0 ? 1.0 : std::sqrt(grid_[k]);
      Eigen::MatrixXd basis(P, degree + 1);
      for (std::size_t p = 0; p < P; ++p) {
        const double x = paths_[k][p] / scale;
        double v = 1.0;
        for (int d = 0; d <= degree; ++d) {
          basis(static_cast<Eigen::Index>(p), d) = v;
          v *= x;
        }
      }
      regressions_.push_back(Regression{basis, Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(basis)});
    }
  }

  std::vector<double> regress(std::size_t k, const std::vector<double>& target) const {
    const auto& r = regressions_[k];
    const Eigen::Map<const Eigen::VectorXd> y(target.data(), static_cast<Eigen::Index>(target.size()));
    const Eigen::VectorXd coef = r.qr.solve(y);
    const Eigen::VectorXd fit = r.basis * coef;
    return std::vector<double>(fit.data(), fit.data() + fit.size());
  }

  struct Regression {
    Eigen::MatrixXd basis;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  };

  TimeGrid grid_;
  DriverSpec spec_;
  std::vector<std::vector<double>> paths_;  // [step][path], monte-carlo only
  std::vector<Regression> regressions_;
};

inline Driver build_driver(const TimeGrid& grid, const DriverSpec& spec) { return Driver(grid, spec); }

inline double PathView::terminal_w() const { return driver_->w(driver_->steps(), node_); }

inline double PathView::w(std::size_t l) const {
  const std::size_t N = driver_->steps();
  if (l == N) return terminal_w();
  return driver_->w(l, driver_->ancestor(N, node_, l));
}

inline double PathView::running_max() const {
  double m = 0.0;  // W(0) = 0
  for (std::size_t l = 1; l <= driver_->steps(); ++l) m = std::max(m, w(l));
  return m;
}

}  // namespace qbsvie

#endif  // QBSVIE_DRIVER_HPP
