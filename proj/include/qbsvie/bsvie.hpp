#ifndef QBSVIE_BSVIE_HPP
#define QBSVIE_BSVIE_HPP

// Quadratic BSVIE solvers.
//
//   Type-I   Y(t) = psi(t) + int_t^T g(t,s,Y(s),Z(t,s)) ds - int_t^T Z(t,s) dW(s)
//   Type-II  Y(t) = psi(t) + int_t^T g(t,s,Y(s),Z(t,s),Z(s,t)) ds - int_t^T Z(t,s) dW(s)
//            with Y(t) = E[Y(t)] + int_0^t Z(t,s) dW(s)  (adapted M-solution)
//
// A Type-I solve is a global Picard iteration on the grid: freeze Y, solve the
// family of BSDEs indexed by the outer time, read the diagonal back. Z is
// stored on the triangle (i, j), i <= j, with Z(i, N) = 0 (no increment left).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qbsvie/bsde.hpp"
#include "qbsvie/driver.hpp"
#include "qbsvie/errors.hpp"
#include "qbsvie/generator.hpp"
#include "qbsvie/grid.hpp"

namespace qbsvie {

struct PicardConfig {
  double tol = 1e-10;
  int max_iter = 200;
  BsdeConfig inner;

  /// 1e-10 on lattice / path-tree, 1e-6 on Monte Carlo.
  static PicardConfig for_driver(const Driver& driver) {
    PicardConfig c;
    if (driver.backend() == Backend::monte_carlo) c.tol = 1e-6;
    return c;
  }
};

struct PicardDiagnostics {
  int iterations = 0;
  std::vector<double> differences;  // d_k = sup |Y^{k+1} - Y^k|
  std::vector<double> ratios;       // d_{k+1} / d_k

  double max_ratio_after_first() const {
    double m = 0.0;
    for (std::size_t k = 1; k < ratios.size(); ++k) m = std::max(m, ratios[k]);
    return m;
  }
};

struct BoundDiagnostics {
  double alpha_constant = 0.0;
  double alpha_margin = 0.0;  // max over nodes of |Y(t_i)|^2 - alpha(t_i); <= 0 when the ceiling holds
  bool alpha_holds = true;
  double bmo = 0.0;
  double bmo_budget = std::numeric_limits<double>::infinity();
  bool bmo_within_budget = true;
  BoundReport briand_hu;
};

struct Type1Solution {
  std::vector<NodeFunction> Y;               // Y[i] at step i
  std::vector<std::vector<NodeFunction>> Z;  // Z[i][j - i] at step j, j = i..N
  PicardDiagnostics picard;
  BoundDiagnostics bounds;

  const NodeFunction& z(std::size_t i, std::size_t j) const { return Z.at(i).at(j - i); }
  std::size_t steps() const { return Y.size() - 1; }
};

struct Type2MSolution {
  std::vector<NodeFunction> Y;               // Y[i] at step i
  std::vector<std::vector<NodeFunction>> Z;  // Z[i][j] at step j, full square
  std::vector<double> outer_changes;
  int outer_iterations = 0;
  PicardDiagnostics last_picard;

  const NodeFunction& z(std::size_t i, std::size_t j) const { return Z.at(i).at(j); }
};

/// Sup-norm distance between two adapted processes given per step.
inline double sup_distance(const std::vector<NodeFunction>& a, const std::vector<NodeFunction>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t n = 0; n < a[k].size(); ++n) d = std::max(d, std::abs(a[k][n] - b[k][n]));
  return d;
}

inline PositionProcess negate(const PositionProcess& psi) {
  return {[f = psi.value](double t, std::size_t i, const PathView& p) { return -f(t, i, p); }, psi.path_dependent,
          "-(" + psi.description + ")"};
}

inline PositionProcess shift(const PositionProcess& psi, double c) {
  return {[f = psi.value, c](double t, std::size_t i, const PathView& p) { return f(t, i, p) + c; }, psi.path_dependent,
          psi.description + " + " + std::to_string(c)};
}

inline PositionProcess scale(const PositionProcess& psi, double lambda) {
  return {[f = psi.value, lambda](double t, std::size_t i, const PathView& p) { return lambda * f(t, i, p); },
          psi.path_dependent, std::to_string(lambda) + "*(" + psi.description + ")"};
}

/// a psi1 + b psi2
inline PositionProcess combine(const PositionProcess& p1, double a, const PositionProcess& p2, double b) {
  return {[f1 = p1.value, f2 = p2.value, a, b](double t, std::size_t i, const PathView& p) {
            return a * f1(t, i, p) + b * f2(t, i, p);
          },
          p1.path_dependent || p2.path_dependent, "combination"};
}

namespace detail {

inline Type1Solution from_family(BsdeFamilySolution&& fam, std::size_t N) {
  Type1Solution sol;
  sol.Y = std::move(fam.diagonal);
  sol.Z.resize(N + 1);
  for (std::size_t i = 0; i <= N; ++i) {
    BsdeSolution& m = fam.members[i];
    sol.Z[i] = std::move(m.Z);
    NodeFunction last = m.Y.back();
    std::fill(last.values.begin(), last.values.end(), 0.0);
    sol.Z[i].push_back(std::move(last));
  }
  return sol;
}

/// alpha ceiling, BMO budget and Briand-Hu bound of every family member.
inline BoundDiagnostics bound_diagnostics(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                          const BsdeFamilySolution& fam, const std::vector<NodeFunction>& Y) {
  BoundDiagnostics b;
  const double psi_sup = driver.position_sup_norm(psi);
  b.alpha_constant = alpha_constant(psi_sup, g);
  const ScalarFn alpha = alpha_bound(b.alpha_constant, driver.grid().horizon());
  b.alpha_margin = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < Y.size(); ++i)
    for (double v : Y[i].values) b.alpha_margin = std::max(b.alpha_margin, v * v - alpha(driver.grid()[i]));
  b.alpha_holds = b.alpha_margin <= 1e-9 * (1.0 + b.alpha_constant);

  b.bmo = bmo_norm_estimate(driver, fam).value;
  b.bmo_budget = bmo_budget(g.cert.gamma, psi_sup);
  b.bmo_within_budget = b.bmo <= b.bmo_budget;

  // Each member is a BSDE whose y-slot is frozen at the solution, so
  // |g| <= h(s) + beta sup|Y| + (gamma/2) z^2 and it has no own-y growth.
  double y_sup = 0.0;
  for (const auto& y : Y) y_sup = std::max(y_sup, y.sup_norm());
  BriandHuCertificate c;
  c.gamma = g.cert.gamma;
  c.beta = 0.0;
  const double level = g.cert.beta * y_sup;
  c.h = [h = g.cert.h, level](double s) { return std::abs(h(s)) + level; };
  b.briand_hu.worst_margin = -std::numeric_limits<double>::infinity();
  for (const BsdeSolution& m : fam.members) {
    const BoundReport r = briand_hu_bound_check(driver, m, c);
    b.briand_hu.holds = b.briand_hu.holds && r.holds;
    b.briand_hu.violations += r.violations;
    if (r.worst_margin > b.briand_hu.worst_margin) b.briand_hu = {b.briand_hu.holds, r.worst_margin, r.worst_step,
                                                                  r.worst_node, b.briand_hu.violations};
  }
  return b;
}

}  // namespace detail

/// Type-I with a y-free generator: no iteration, (Y, Z) read off one BSDE family.
inline Type1Solution solve_type1_special(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                         const BsdeConfig& cfg = {}) {
  if (g.uses_y) throw ValidationError("solve_type1_special: generator '" + g.name + "' depends on y");
  if (g.uses_zprime) throw ValidationError("solve_type1_special: generator '" + g.name + "' depends on z'");
  BsdeFamilySolution fam = solve_bsde_family(driver, g, psi, nullptr, nullptr, cfg);
  std::vector<NodeFunction> diag = fam.diagonal;
  BoundDiagnostics bounds = detail::bound_diagnostics(driver, g, psi, fam, diag);
  Type1Solution sol = detail::from_family(std::move(fam), driver.steps());
  sol.picard.iterations = 1;
  sol.bounds = std::move(bounds);
  return sol;
}

/// Type-I by Picard iteration from (Y, Z) = 0. `zprime` supplies the reflected
/// argument when called from the Type-II solver; `warm_start` replaces Y^0.
inline Type1Solution solve_type1_general(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                         const PicardConfig& cfg,
                                         const std::function<ZprimeFn(std::size_t)>* zprime = nullptr,
                                         const std::vector<NodeFunction>* warm_start = nullptr) {
  if (g.uses_zprime && !zprime)
    throw ValidationError("solve_type1_general: generator '" + g.name + "' depends on z'; use the M-solution solver");
  const std::size_t N = driver.steps();
  std::vector<NodeFunction> U;
  if (warm_start) {
    U = *warm_start;
  } else {
    U.reserve(N + 1);
    for (std::size_t k = 0; k <= N; ++k) U.push_back(driver.constant(k, 0.0));
  }

  PicardDiagnostics diag;
  BsdeFamilySolution fam;
  for (;;) {
    fam = solve_bsde_family(driver, g, psi, &U, zprime, cfg.inner);
    const double d = sup_distance(fam.diagonal, U);
    if (!diag.differences.empty()) diag.ratios.push_back(diag.differences.back() > 0.0 ? d / diag.differences.back() : 0.0);
    diag.differences.push_back(d);
    ++diag.iterations;
    U = fam.diagonal;
    // Gamma ignores its first argument when g is y-free: one sweep is the fixed point.
    if (!g.uses_y || d < cfg.tol) break;
    if (diag.iterations >= cfg.max_iter) {
      const bool diverging = diag.ratios.size() >= 2 && diag.ratios.back() >= 1.0;
      throw SolverFailure(std::string("Picard iteration ") + (diverging ? "diverging" : "not converged") + " after " +
                              std::to_string(diag.iterations) + " sweeps (last difference " + std::to_string(d) + ")",
                          "type-I picard", diag.differences);
    }
  }
  BoundDiagnostics bounds = detail::bound_diagnostics(driver, g, psi, fam, U);
  Type1Solution sol = detail::from_family(std::move(fam), N);
  sol.picard = std::move(diag);
  sol.bounds = std::move(bounds);
  return sol;
}

inline Type1Solution solve_type1_general(const Driver& driver, const Generator& g, const PositionProcess& psi) {
  return solve_type1_general(driver, g, psi, PicardConfig::for_driver(driver));
}

// ---------------------------------------------------------------------------
// Residuals

struct BsvieResidual {
  double expectation = 0.0;     // max |Y(t_i) - E_i[psi(t_i) + sum_j D_ij]|
  double representation = 0.0;  // max |Z(t_i,t_j) - projection of the reconstructed eta|
  double pathwise = std::numeric_limits<double>::quiet_NaN();  // full residual on path-bearing drivers
};

/// Re-derives the one-step drifts D_ij from the final (Y, Z) and checks that
/// they reproduce Y (in conditional expectation, through the martingale
/// integrands, and pathwise where paths exist). `zprime_of(i)` as in the solvers.
inline BsvieResidual bsvie_residual(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                    const std::vector<NodeFunction>& Y,
                                    const std::vector<std::vector<NodeFunction>>& Zupper,
                                    const std::function<ZprimeFn(std::size_t)>* zprime_of = nullptr) {
  const std::size_t N = driver.steps();
  const double dt = driver.grid().dt();
  const std::vector<NodeFunction> ybar = trapezoid_argument(driver, Y);
  BsvieResidual res;
  if (driver.has_paths()) res.pathwise = 0.0;
  for (std::size_t i = 0; i <= N; ++i) {
    ZprimeFn zp;
    if (zprime_of) zp = (*zprime_of)(i);
    const double t = driver.grid()[i];
    std::vector<NodeFunction> D(N + 1);
    for (std::size_t j = i; j < N; ++j) {
      const NodeFunction& z = Zupper[i][j - i];
      D[j] = z;
      for (std::size_t n = 0; n < z.size(); ++n)
        D[j][n] = dt * g.rest(t, driver.grid()[j], ybar[j][n], z[n], zp ? zp(j, n) : 0.0) +
                  quadratic_increment(g.q, z[n], dt, driver.is_binary());
    }
    NodeFunction eta = driver.evaluate_position(psi, i);
    eta.kind = Measurability::adapted;
    const NodeFunction psi_i = eta;
    for (std::size_t j = N; j-- > i;) {
      const NodeFunction proj = driver.increment_projection(eta);
      for (std::size_t n = 0; n < proj.size(); ++n)
        res.representation = std::max(res.representation, std::abs(proj[n] - Zupper[i][j - i][n]));
      NodeFunction prev = driver.expect_step(eta);
      for (std::size_t n = 0; n < prev.size(); ++n) prev[n] += D[j][n];
      eta = std::move(prev);
    }
    for (std::size_t n = 0; n < eta.size(); ++n) res.expectation = std::max(res.expectation, std::abs(eta[n] - Y[i][n]));

    if (driver.has_paths()) {
      for (std::size_t leaf = 0; leaf < driver.node_count(N); ++leaf) {
        double r = Y[i][driver.ancestor(N, leaf, i)] - psi_i[leaf];
        for (std::size_t j = i; j < N; ++j) {
          const std::size_t a = driver.ancestor(N, leaf, j);
          r -= D[j][a];
          r += Zupper[i][j - i][a] * driver.increment(j + 1, driver.ancestor(N, leaf, j + 1));
        }
        res.pathwise = std::max(res.pathwise, std::abs(r));
      }
    }
  }
  return res;
}

inline BsvieResidual bsvie_residual(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                    const Type1Solution& sol) {
  return bsvie_residual(driver, g, psi, sol.Y, sol.Z);
}

// ---------------------------------------------------------------------------
// Type-II adapted M-solutions

struct OuterConfig {
  double tol = 1e-10;
  int max_iter = 200;
  PicardConfig picard;

  static OuterConfig for_driver(const Driver& driver) {
    OuterConfig c;
    c.picard = PicardConfig::for_driver(driver);
    c.tol = c.picard.tol;
    return c;
  }
};

/// Lower-triangle integrands Z(t_i, t_j), j < i: the martingale
/// representation of Y(t_i) along steps before i. lower[i][j] at step j.
inline std::vector<std::vector<NodeFunction>> representation_integrands(const Driver& driver,
                                                                        const std::vector<NodeFunction>& Y) {
  std::vector<std::vector<NodeFunction>> lower(Y.size());
  for (std::size_t i = 0; i < Y.size(); ++i) {
    lower[i].resize(i);
    NodeFunction F = Y[i];
    for (std::size_t j = i; j-- > 0;) {
      lower[i][j] = driver.increment_projection(F);
      F = driver.expect_step(F);
    }
  }
  return lower;
}

namespace detail {

/// z'(i, j, n) = Z(t_j, t_i): lower entry of row j (F_{t_i}-measurable) for
/// j > i, and the diagonal Z(t_i, t_i) for j = i.
inline std::function<ZprimeFn(std::size_t)> reflected_argument(const Driver& driver,
                                                               const std::vector<std::vector<NodeFunction>>& lower,
                                                               const std::vector<NodeFunction>& diag) {
  return [&driver, &lower, &diag](std::size_t i) -> ZprimeFn {
    return [&driver, &lower, &diag, i](std::size_t j, std::size_t n) {
      if (j == i) return diag[i][n];
      return lower[j][i][driver.ancestor(j, n, i)];
    };
  };
}

}  // namespace detail

inline Type2MSolution solve_type2_msolution(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                            const OuterConfig& cfg) {
  const std::size_t N = driver.steps();
  if (g.uses_zprime && driver.backend() == Backend::lattice)
    throw ValidationError("solve_type2_msolution: a z'-dependent generator makes the inner drift path-dependent; "
                          "use the path-tree or monte-carlo driver");
  if (g.uses_zprime && !(std::isfinite(g.cert.zprime_bound)))
    throw ValidationError("solve_type2_msolution: z' dependence of '" + g.name + "' is not bounded");

  std::vector<std::vector<NodeFunction>> lower(N + 1);
  std::vector<NodeFunction> diag(N + 1);
  for (std::size_t i = 0; i <= N; ++i) {
    diag[i] = driver.constant(i, 0.0);
    for (std::size_t j = 0; j < i; ++j) lower[i].push_back(driver.constant(j, 0.0));
  }

  Type2MSolution out;
  std::optional<std::vector<NodeFunction>> prevY;
  Type1Solution inner;
  for (;;) {
    const auto zprime = detail::reflected_argument(driver, lower, diag);
    inner = solve_type1_general(driver, g, psi, cfg.picard, g.uses_zprime ? &zprime : nullptr,
                                prevY ? &*prevY : nullptr);
    auto new_lower = representation_integrands(driver, inner.Y);
    std::vector<NodeFunction> new_diag(N + 1);
    for (std::size_t i = 0; i <= N; ++i) new_diag[i] = inner.z(i, i);

    double change = prevY ? sup_distance(inner.Y, *prevY) : std::numeric_limits<double>::infinity();
    if (prevY) {
      change = std::max(change, sup_distance(new_diag, diag));
      for (std::size_t i = 0; i <= N; ++i) change = std::max(change, sup_distance(new_lower[i], lower[i]));
    }
    lower = std::move(new_lower);
    diag = std::move(new_diag);
    prevY = inner.Y;
    ++out.outer_iterations;
    if (!g.uses_zprime || change < cfg.tol) {
      if (std::isfinite(change)) out.outer_changes.push_back(change);
      break;
    }
    if (std::isfinite(change)) out.outer_changes.push_back(change);
    if (out.outer_iterations >= cfg.max_iter)
      throw SolverFailure("M-solution outer iteration not converged after " + std::to_string(out.outer_iterations) +
                              " passes",
                          "type-II outer loop", out.outer_changes);
  }

  // Last inner solve used the reflected argument from the previous pass; with
  // change < tol the two agree to tolerance.
  out.Y = inner.Y;
  out.last_picard = inner.picard;
  out.Z.assign(N + 1, {});
  for (std::size_t i = 0; i <= N; ++i) {
    out.Z[i].reserve(N + 1);
    for (std::size_t j = 0; j < i; ++j) out.Z[i].push_back(lower[i][j]);
    for (std::size_t j = i; j <= N; ++j) out.Z[i].push_back(inner.z(i, j));
  }
  return out;
}

inline Type2MSolution solve_type2_msolution(const Driver& driver, const Generator& g, const PositionProcess& psi) {
  return solve_type2_msolution(driver, g, psi, OuterConfig::for_driver(driver));
}

/// Upper-triangle view of an M-solution, Z[i][j - i] for j >= i.
inline std::vector<std::vector<NodeFunction>> upper_triangle(const Type2MSolution& sol) {
  std::vector<std::vector<NodeFunction>> up(sol.Y.size());
  for (std::size_t i = 0; i < sol.Y.size(); ++i)
    up[i].assign(sol.Z[i].begin() + static_cast<std::ptrdiff_t>(i), sol.Z[i].end());
  return up;
}

/// BSVIE residual of an M-solution, with the reflected argument read from its own Z.
inline BsvieResidual bsvie_residual(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                    const Type2MSolution& sol) {
  const std::size_t N = driver.steps();
  std::vector<std::vector<NodeFunction>> lower(N + 1);
  std::vector<NodeFunction> diag(N + 1);
  for (std::size_t i = 0; i <= N; ++i) {
    lower[i].assign(sol.Z[i].begin(), sol.Z[i].begin() + static_cast<std::ptrdiff_t>(i));
    diag[i] = sol.Z[i][i];
  }
  const auto zprime = detail::reflected_argument(driver, lower, diag);
  return bsvie_residual(driver, g, psi, sol.Y, upper_triangle(sol), g.uses_zprime ? &zprime : nullptr);
}

/// max over i of the error in Y(t_i) = E[Y(t_i)] + sum_{j<i} Z(t_i,t_j) dW_{j+1}.
/// Pathwise on path-tree / Monte Carlo; one step at a time on the lattice,
/// where each step's two-point identity is equivalent.
struct MResidual {
  double sup = 0.0;
  double rms = 0.0;  // over all checked (step, node) pairs; the informative figure on Monte Carlo
};

/// Residual of Y(t) = E Y(t) + sum_{j<i} Z(t, t_j) dW_j, pathwise on tree and
/// Monte Carlo, one step at a time (both children) on the lattice.
inline MResidual msolution_residuals(const Type2MSolution& sol, const Driver& driver) {
  MResidual r;
  long double acc = 0.0L;
  std::size_t count = 0;
  auto record = [&](double e) {
    r.sup = std::max(r.sup, std::abs(e));
    acc += static_cast<long double>(e) * e;
    ++count;
  };
  const double s = driver.grid().sqrt_dt();
  for (std::size_t i = 0; i < sol.Y.size(); ++i) {
    const NodeFunction& Yi = sol.Y[i];
    if (driver.has_paths()) {
      const double mean = driver.mean(Yi);
      for (std::size_t n = 0; n < Yi.size(); ++n) {
        double rec = mean;
        for (std::size_t j = 0; j < i; ++j)
          rec += sol.Z[i][j][driver.ancestor(i, n, j)] * driver.increment(j + 1, driver.ancestor(i, n, j + 1));
        record(rec - Yi[n]);
      }
    } else {
      NodeFunction F = Yi;
      for (std::size_t j = i; j-- > 0;) {
        const NodeFunction prev = driver.expect_step(F);
        const NodeFunction& z = sol.Z[i][j];
        for (std::size_t m = 0; m <= j; ++m) {
          record(prev[m] + z[m] * s - F[m + 1]);
          record(prev[m] - z[m] * s - F[m]);
        }
        F = prev;
      }
    }
  }
  if (count) r.rms = std::sqrt(static_cast<double>(acc / static_cast<long double>(count)));
  return r;
}

inline double msolution_residual(const Type2MSolution& sol, const Driver& driver) {
  return msolution_residuals(sol, driver).sup;
}

/// Discrete M^2 norm squared: E sum_i |Y(t_i)|^2 dt + E sum_{i <= j < N} |Z(t_i,t_j)|^2 dt^2.
inline double m2_norm_sq(const Driver& driver, const Type2MSolution& sol) {
  const std::size_t N = driver.steps();
  const double dt = driver.grid().dt();
  long double acc = 0.0L;
  auto second_moment = [&](const NodeFunction& f) {
    NodeFunction sq = f;
    for (double& v : sq.values) v *= v;
    return static_cast<long double>(driver.mean(sq));
  };
  for (std::size_t i = 0; i <= N; ++i) {
    acc += second_moment(sol.Y[i]) * dt;
    for (std::size_t j = i; j < N; ++j) acc += second_moment(sol.Z[i][j]) * dt * dt;
  }
  return static_cast<double>(acc);
}

/// Discrete H^2 norm squared: as m2_norm_sq with Z over the full square.
inline double h2_norm_sq(const Driver& driver, const Type2MSolution& sol) {
  const double dt = driver.grid().dt();
  long double acc = m2_norm_sq(driver, sol);
  for (std::size_t i = 0; i < sol.Y.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) {
      NodeFunction sq = sol.Z[i][j];
      for (double& v : sq.values) v *= v;
      acc += static_cast<long double>(driver.mean(sq)) * dt * dt;
    }
  return static_cast<double>(acc);
}

// ---------------------------------------------------------------------------
// Cascaded BSDE partition scheme

struct PartitionScheme {
  TimeGrid partition;
  std::vector<std::size_t> cell_end;  // driver step of t_k for k = 0..N_Pi
  std::vector<std::size_t> cell_of;   // cell index k (1-based) of each driver step
  std::vector<NodeFunction> Y;        // Y^Pi at every driver step
  std::vector<std::vector<NodeFunction>> Zcell;  // Zcell[k-1][j - cell_start] = Z^k(t_j), j from t_{k-1} to N-1
  std::vector<NodeFunction> psi_samples;         // psi_k = psi(t_k), k = 1..N_Pi (index k-1)

  const NodeFunction& z(std::size_t outer_step, std::size_t j) const {
    const std::size_t k = cell_of.at(outer_step);
    return Zcell.at(k - 1).at(j - cell_end.at(k - 1));
  }
};

/// Cell k covers driver steps (t_{k-1}, t_k]; its BSDE has terminal psi(t_k),
/// reads the already-determined Y^Pi in the drift on later cells and its own
/// value inside the cell, and uses its own Z throughout. t_0 belongs to cell 1.
inline PartitionScheme cascaded_partition_scheme(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                                 const TimeGrid& partition, const BsdeConfig& cfg = {}) {
  const std::size_t N = driver.steps(), NP = partition.steps();
  if (partition.horizon() != driver.grid().horizon() || N % NP != 0)
    throw ValidationError("cascaded_partition_scheme: partition with " + std::to_string(NP) +
                          " cells is not nested in the driver grid of " + std::to_string(N) + " steps");
  if (g.uses_zprime) throw ValidationError("cascaded_partition_scheme: generator must not depend on z'");
  detail::check_implicit_step(driver, g);
  const std::size_t stride = N / NP;

  PartitionScheme ps{partition, {}, std::vector<std::size_t>(N + 1, 0), std::vector<NodeFunction>(N + 1), {}, {}};
  for (std::size_t k = 0; k <= NP; ++k) ps.cell_end.push_back(k * stride);
  for (std::size_t j = 0; j <= N; ++j) ps.cell_of[j] = j == 0 ? 1 : (j + stride - 1) / stride;
  ps.Zcell.resize(NP);
  ps.psi_samples.resize(NP);

  for (std::size_t k = NP; k >= 1; --k) {
    const std::size_t end = ps.cell_end[k], start = ps.cell_end[k - 1];
    NodeFunction eta = driver.evaluate_position(psi, end);
    ps.psi_samples[k - 1] = eta;
    eta.kind = Measurability::adapted;
    const double t_outer = driver.grid()[end];
    std::vector<NodeFunction> Z(N - start);
    std::vector<NodeFunction> own(end - start + 1);
    if (end == N) own.back() = eta;
    for (std::size_t j = N; j-- > start;) {
      detail::StepResult step;
      if (j > end) {
        // later cells: the y-slot reads the determined utilities
        NodeFunction ybar = ps.Y[j];
        const NodeFunction next_mean = driver.expect_step(ps.Y[j + 1]);
        for (std::size_t n = 0; n < ybar.size(); ++n) ybar[n] = 0.5 * (ps.Y[j][n] + next_mean[n]);
        step = detail::backward_step(driver, g, t_outer, eta, &ybar, nullptr, cfg);
      } else if (j == end) {
        // own value at t_k, next value from the later cell
        const NodeFunction next_mean = driver.expect_step(ps.Y[j + 1]);
        step = detail::backward_step(driver, g, t_outer, eta, nullptr, nullptr, cfg, &next_mean);
      } else {
        step = detail::backward_step(driver, g, t_outer, eta, nullptr, nullptr, cfg);
      }
      Z[j - start] = std::move(step.zeta);
      eta = std::move(step.eta);
      if (j <= end) own[j - start] = eta;
    }
    for (std::size_t j = start + 1; j <= end; ++j) ps.Y[j] = own[j - start];
    if (k == 1) ps.Y[0] = own[0];
    ps.Zcell[k - 1] = std::move(Z);
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Comparison

struct ComparisonReport {
  double max_violation = 0.0;  // max over nodes of (Y1 - Ybar)^+ and (Ybar - Y2)^+
  std::size_t worst_step = 0;
  std::size_t worst_node = 0;
  bool holds = true;
  std::vector<NodeFunction> Y1, Ybar, Y2;
};

struct ComparisonConfig {
  double tol = 1e-8;
  SampleSpec hypothesis_samples{};
  PicardConfig picard{};
};

namespace detail {

inline Type1Solution solve_type1_auto(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                      const PicardConfig& cfg) {
  return g.uses_y ? solve_type1_general(driver, g, psi, cfg) : solve_type1_special(driver, g, psi, cfg.inner);
}

}  // namespace detail

/// Solves the three BSVIEs with g1 <= gbar <= g2, psi1 <= psibar <= psi2 and
/// checks Y1 <= Ybar <= Y2 nodewise. Hypotheses are sampled first; a violated
/// one is rejected with its witness before any solve. psibar defaults to the midpoint.
inline ComparisonReport compare_type1(const Driver& driver, const Generator& g1, const Generator& gbar,
                                      const Generator& g2, const PositionProcess& psi1,
                                      const std::optional<PositionProcess>& psibar_opt, const PositionProcess& psi2,
                                      const ComparisonConfig& cfg = {}) {
  const PositionProcess psibar = psibar_opt ? *psibar_opt : combine(psi1, 0.5, psi2, 0.5);
  if (gbar.uses_y && !gbar.monotone_in_y)
    throw ValidationError("compare_type1: intermediate generator '" + gbar.name + "' is not declared nondecreasing in y");

  const SampleSpec& ss = cfg.hypothesis_samples;
  std::mt19937_64 rng(ss.seed);
  std::uniform_real_distribution<double> ut(0.0, driver.grid().horizon()), uy(-ss.y_range, ss.y_range),
      uz(-ss.z_range, ss.z_range);
  for (std::size_t n = 0; n < ss.count; ++n) {
    double t = ut(rng), s = ut(rng);
    if (t > s) std::swap(t, s);
    const double y = uy(rng), z = uz(rng);
    const double a = g1(t, s, y, z), b = gbar(t, s, y, z), c = g2(t, s, y, z);
    if (a > b + 1e-12 * (1.0 + std::abs(b)) || b > c + 1e-12 * (1.0 + std::abs(c)))
      throw ValidationError("compare_type1: generator ordering g1 <= gbar <= g2 fails at (t,s,y,z) = (" +
                            std::to_string(t) + ", " + std::to_string(s) + ", " + std::to_string(y) + ", " +
                            std::to_string(z) + ")");
  }
  for (std::size_t i = 0; i <= driver.steps(); ++i) {
    const NodeFunction a = driver.evaluate_position(psi1, i), b = driver.evaluate_position(psibar, i),
                       c = driver.evaluate_position(psi2, i);
    for (std::size_t n = 0; n < a.size(); ++n)
      if (a[n] > b[n] || b[n] > c[n])
        throw ValidationError("compare_type1: position ordering fails at outer index " + std::to_string(i) +
                              ", terminal node " + std::to_string(n));
  }

  ComparisonReport rep;
  rep.Y1 = detail::solve_type1_auto(driver, g1, psi1, cfg.picard).Y;
  rep.Ybar = detail::solve_type1_auto(driver, gbar, psibar, cfg.picard).Y;
  rep.Y2 = detail::solve_type1_auto(driver, g2, psi2, cfg.picard).Y;
  for (std::size_t k = 0; k < rep.Y1.size(); ++k) {
    for (std::size_t n = 0; n < rep.Y1[k].size(); ++n) {
      const double v = std::max(rep.Y1[k][n] - rep.Ybar[k][n], rep.Ybar[k][n] - rep.Y2[k][n]);
      if (v > rep.max_violation) {
        rep.max_violation = v;
        rep.worst_step = k;
        rep.worst_node = n;
      }
    }
  }
  rep.holds = rep.max_violation <= cfg.tol;
  return rep;
}

}  // namespace qbsvie

#endif  // QBSVIE_BSVIE_HPP
