#ifndef QBSVIE_BSDE_HPP
#define QBSVIE_BSDE_HPP

// Backward induction for quadratic BSDEs and for families of BSDEs indexed by
// an outer time, plus the a priori diagnostics (Briand-Hu exponential bound,
// BMO estimate, the alpha ceiling on |Y|^2).
//
// One step from t_{j+1} back to t_j:
//   Z_j = E_j[Y_{j+1} dW] / dt
//   Y_j = E_j[Y_{j+1}] + dt * rest(t, t_j, ybar_j, Z_j, z'_j) + Q(Z_j)
// where ybar_j = (Y_j + E_j[Y_{j+1}]) / 2 (trapezoidal in y, implicit) unless a
// frozen y-argument is supplied, and Q is the quadratic increment of
// generator.hpp (exact for g = (q/2) z^2 on binary drivers).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qbsvie/driver.hpp"
#include "qbsvie/errors.hpp"
#include "qbsvie/generator.hpp"

namespace qbsvie {

struct BsdeConfig {
  double inner_tol = 1e-12;
  int inner_max_iter = 100;
  std::optional<double> z_clip;  // off by default; every activation is counted
};

struct BsdeDiagnostics {
  int max_inner_iterations = 0;
  double max_residual = 0.0;
  std::size_t z_clip_activations = 0;
};

/// Solution on steps start..N. Y has N-start+1 entries, Z has N-start.
struct BsdeSolution {
  std::size_t start = 0;
  std::vector<NodeFunction> Y;
  std::vector<NodeFunction> Z;
  NodeFunction xi;
  BsdeDiagnostics diagnostics;

  const NodeFunction& y_at(std::size_t k) const { return Y.at(k - start); }
  const NodeFunction& z_at(std::size_t k) const { return Z.at(k - start); }
  std::size_t last_step() const { return start + Y.size() - 1; }
};

struct BsdeFamilySolution {
  std::vector<BsdeSolution> members;  // members[i] lives on [t_i, T] with terminal psi(t_i)
  std::vector<NodeFunction> diagonal;  // Y(t_i) = eta(t_i, t_i)
};

/// Reflected-argument lookup for one family member: z'(j, n) at node n of step j.
using ZprimeFn = std::function<double(std::size_t j, std::size_t n)>;

namespace detail {

struct StepResult {
  NodeFunction eta;
  NodeFunction zeta;
  int iterations = 0;
  double residual = 0.0;
  std::size_t clips = 0;
};

inline StepResult backward_step(const Driver& driver, const Generator& g, double t_outer, const NodeFunction& next,
                                const NodeFunction* frozen_ybar, const ZprimeFn* zprime, const BsdeConfig& cfg,
                                const NodeFunction* next_mean_override = nullptr) {
  const std::size_t j = next.step - 1;
  const double dt = driver.grid().dt();
  const double s = driver.grid()[j];
  const bool binary = driver.is_binary();

  StepResult r;
  const NodeFunction m = driver.expect_step(next);
  r.zeta = driver.increment_projection(next);
  if (cfg.z_clip) {
    for (double& z : r.zeta.values) {
      if (std::abs(z) > *cfg.z_clip) {
        z = std::copysign(*cfg.z_clip, z);
        ++r.clips;
      }
    }
  }
  r.eta = m;
  for (std::size_t n = 0; n < m.size(); ++n) {
    const double z = r.zeta[n];
    const double zp = zprime ? (*zprime)(j, n) : 0.0;
    const double base = m[n] + quadratic_increment(g.q, z, dt, binary);
    if (frozen_ybar || !g.uses_y) {
      const double y = frozen_ybar ? (*frozen_ybar)[n] : m[n];
      r.eta[n] = base + dt * g.rest(t_outer, s, y, z, zp);
      continue;
    }
    const double partner = next_mean_override ? (*next_mean_override)[n] : m[n];
    double eta = base;
    int it = 0;
    double change = std::numeric_limits<double>::infinity();
    while (it < cfg.inner_max_iter) {
      ++it;
      const double updated = base + dt * g.rest(t_outer, s, 0.5 * (eta + partner), z, zp);
      change = std::abs(updated - eta);
      eta = updated;
      if (change <= cfg.inner_tol * std::max(1.0, std::abs(eta))) break;
    }
    if (!(change <= cfg.inner_tol * std::max(1.0, std::abs(eta))))
      throw SolverFailure("implicit step did not converge after " + std::to_string(cfg.inner_max_iter) + " iterations",
                          "step " + std::to_string(j) + ", node " + std::to_string(n));
    r.eta[n] = eta;
    r.iterations = std::max(r.iterations, it);
    r.residual = std::max(r.residual, std::abs(eta - base - dt * g.rest(t_outer, s, 0.5 * (eta + partner), z, zp)));
  }
  return r;
}

inline void check_implicit_step(const Driver& driver, const Generator& g) {
  const double rate = driver.grid().dt() * g.lipschitz_y();
  if (rate >= 1.0)
    throw ValidationError("dt * L_y = " + std::to_string(rate) + " >= 1: implicit step not solvable for generator '" +
                          g.name + "'");
}

inline BsdeSolution solve_from(const Driver& driver, const Generator& g, double t_outer, const NodeFunction& xi,
                               std::size_t start, const std::vector<NodeFunction>* frozen_ybar,
                               const ZprimeFn* zprime, const BsdeConfig& cfg) {
  const std::size_t N = driver.steps();
  BsdeSolution sol;
  sol.start = start;
  sol.xi = xi;
  sol.Y.resize(N - start + 1);
  sol.Z.resize(N - start);
  sol.Y.back() = xi;
  sol.Y.back().kind = Measurability::adapted;
  for (std::size_t j = N; j-- > start;) {
    const NodeFunction* ybar = frozen_ybar ? &(*frozen_ybar)[j] : nullptr;
    StepResult step = backward_step(driver, g, t_outer, sol.Y[j + 1 - start], ybar, zprime, cfg);
    sol.Y[j - start] = std::move(step.eta);
    sol.Z[j - start] = std::move(step.zeta);
    sol.diagnostics.max_inner_iterations = std::max(sol.diagnostics.max_inner_iterations, step.iterations);
    sol.diagnostics.max_residual = std::max(sol.diagnostics.max_residual, step.residual);
    sol.diagnostics.z_clip_activations += step.clips;
  }
  return sol;
}

}  // namespace detail

/// Trapezoidal y-argument ybar_j = (U_j + E_j[U_{j+1}]) / 2 for a frozen
/// process U given on every step 0..N. Entry N is U_N itself.
inline std::vector<NodeFunction> trapezoid_argument(const Driver& driver, const std::vector<NodeFunction>& U) {
  const std::size_t N = driver.steps();
  if (U.size() != N + 1) throw ValidationError("frozen y-argument must have one node function per step");
  std::vector<NodeFunction> out(N + 1);
  out[N] = U[N];
  for (std::size_t j = 0; j < N; ++j) {
    NodeFunction next_mean = driver.expect_step(U[j + 1]);
    out[j] = U[j];
    for (std::size_t n = 0; n < out[j].size(); ++n) out[j][n] = 0.5 * (U[j][n] + next_mean[n]);
  }
  return out;
}

/// Solves Y(t) = xi + int_t^T g(t_outer, s, Y, Z) ds - int_t^T Z dW on the whole grid.
inline BsdeSolution solve_bsde(const Driver& driver, const Generator& g, const NodeFunction& xi,
                               const BsdeConfig& cfg = {}, double t_outer = 0.0) {
  if (xi.step != driver.steps() || xi.size() != driver.node_count(driver.steps()))
    throw ValidationError("solve_bsde: terminal value must be defined on every terminal node");
  if (!std::isfinite(xi.sup_norm())) throw ValidationError("solve_bsde: terminal value is not bounded");
  if (g.uses_zprime) throw ValidationError("solve_bsde: generator depends on z', which a single BSDE does not carry");
  detail::check_implicit_step(driver, g);
  return detail::solve_from(driver, g, t_outer, xi, 0, nullptr, nullptr, cfg);
}

/// One BSDE per outer index i on [t_i, T] with terminal psi(t_i) and g
/// evaluated at outer time t_i. With `frozen` (a process U on every step) the
/// y-slot reads the trapezoidal average of U instead of the member's own value.
/// `zprime(i)` optionally supplies the reflected argument for member i.
inline BsdeFamilySolution solve_bsde_family(const Driver& driver, const Generator& g, const PositionProcess& psi,
                                           const std::vector<NodeFunction>* frozen = nullptr,
                                           const std::function<ZprimeFn(std::size_t)>* zprime = nullptr,
                                           const BsdeConfig& cfg = {}) {
  if (!frozen) detail::check_implicit_step(driver, g);
  if (g.uses_zprime && !zprime) throw ValidationError("solve_bsde_family: generator depends on z' but none supplied");
  const std::size_t N = driver.steps();
  std::vector<NodeFunction> ybar;
  if (frozen) ybar = trapezoid_argument(driver, *frozen);

  BsdeFamilySolution fam;
  fam.members.reserve(N + 1);
  fam.diagonal.reserve(N + 1);
  for (std::size_t i = 0; i <= N; ++i) {
    try {
      const NodeFunction xi = driver.evaluate_position(psi, i);
      ZprimeFn zp_i;
      if (zprime) zp_i = (*zprime)(i);
      fam.members.push_back(detail::solve_from(driver, g, driver.grid()[i], xi, i, frozen ? &ybar : nullptr,
                                               zprime ? &zp_i : nullptr, cfg));
    } catch (const SolverFailure& e) {
      throw SolverFailure(e.what(), "outer index " + std::to_string(i) + ", " + e.where(), e.history());
    }
    fam.diagonal.push_back(fam.members.back().y_at(i));
  }
  return fam;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct BriandHuCertificate {
  double gamma = 0.0;
  double beta = 0.0;
  ScalarFn h = [](double) { return 0.0; };
};

struct BoundReport {
  bool holds = true;
  double worst_margin = -std::numeric_limits<double>::infinity();  // max of (lhs - rhs), log scale for gamma > 0
  std::size_t worst_step = 0;
  std::size_t worst_node = 0;
  std::size_t violations = 0;
};

namespace detail {

/// int_t^T |h(s)| e^{beta (s - t)} ds by composite Simpson.
inline double discounted_h_integral(const ScalarFn& h, double beta, double t, double T) {
  if (T <= t) return 0.0;
  constexpr int panels = 512;
  const double step = (T - t) / panels;
  double acc = 0.0;
  for (int p = 0; p <= panels; ++p) {
    const double s = t + p * step;
    const double w = (p == 0 || p == panels) ? 1.0 : (p % 2 ? 4.0 : 2.0);
    acc += w * std::abs(h(s)) * std::exp(beta * (s - t));
  }
  return acc * step / 3.0;
}

}  // namespace detail

/// Checks e^{gamma|Y(t)|} <= E_t[exp(gamma e^{beta(T-t)}|xi| + gamma int_t^T |h| e^{beta(s-t)} ds)]
/// at every node, in log form. gamma = 0 is the limit |Y(t)| <= E_t[e^{beta(T-t)}|xi| + int ...].
inline BoundReport briand_hu_bound_check(const Driver& driver, const BsdeSolution& sol, const BriandHuCertificate& c,
                                         double tol = 1e-10) {
  const TimeGrid& grid = driver.grid();
  const std::size_t N = driver.steps();
  BoundReport rep;
  for (std::size_t k = sol.start; k <= N; ++k) {
    const double t = grid[k];
    const double growth = std::exp(c.beta * (grid.horizon() - t));
    const double drift = detail::discounted_h_integral(c.h, c.beta, t, grid.horizon());
    NodeFunction exponent = sol.xi;
    exponent.kind = Measurability::adapted;
    std::vector<double> lhs(driver.node_count(k)), rhs;
    if (c.gamma > 0.0) {
      double shift = 0.0;
      for (double v : exponent.values) shift = std::max(shift, c.gamma * growth * std::abs(v));
      for (double& v : exponent.values) v = std::exp(c.gamma * growth * std::abs(v) - shift);
      const NodeFunction e = driver.conditional_expectation(exponent, k);
      rhs.resize(e.size());
      for (std::size_t n = 0; n < e.size(); ++n) {
        rhs[n] = std::log(e[n]) + shift + c.gamma * drift;
        lhs[n] = c.gamma * std::abs(sol.y_at(k)[n]);
      }
    } else {
      for (double& v : exponent.values) v = growth * std::abs(v);
      const NodeFunction e = driver.conditional_expectation(exponent, k);
      rhs.resize(e.size());
      for (std::size_t n = 0; n < e.size(); ++n) {
        rhs[n] = e[n] + drift;
        lhs[n] = std::abs(sol.y_at(k)[n]);
      }
    }
    for (std::size_t n = 0; n < lhs.size(); ++n) {
      const double margin = lhs[n] - rhs[n];
      if (margin > rep.worst_margin) {
        rep.worst_margin = margin;
        rep.worst_step = k;
        rep.worst_node = n;
      }
      if (margin > tol * (1.0 + std::abs(rhs[n]))) {
        rep.holds = false;
        ++rep.violations;
      }
    }
  }
  return rep;
}

struct BmoEstimate {
  double value = 0.0;
  std::vector<double> tail_sup;  // tail_sup[k] = sup over tau >= t_k; nonincreasing in k
};

/// max over grid times tau and nodes of E_tau[sum_{k >= tau} Z_k^2 dt].
inline BmoEstimate bmo_norm_estimate(const Driver& driver, const BsdeSolution& sol) {
  const std::size_t N = driver.steps();
  const double dt = driver.grid().dt();
  BmoEstimate est;
  est.tail_sup.assign(N + 1, 0.0);
  NodeFunction acc = driver.constant(N, 0.0);
  std::vector<double> at_tau(N + 1, 0.0);
  for (std::size_t k = N; k-- > sol.start;) {
    NodeFunction cur = driver.expect_step(acc);
    const NodeFunction& z = sol.z_at(k);
    for (std::size_t n = 0; n < cur.size(); ++n) cur[n] += z[n] * z[n] * dt;
    at_tau[k] = *std::max_element(cur.values.begin(), cur.values.end());
    acc = std::move(cur);
  }
  double running = 0.0;
  for (std::size_t k = N + 1; k-- > 0;) {
    running = std::max(running, at_tau[k]);
    est.tail_sup[k] = running;
  }
  est.value = est.tail_sup[0];
  return est;
}

inline BmoEstimate bmo_norm_estimate(const Driver& driver, const BsdeFamilySolution& fam) {
  BmoEstimate est;
  est.tail_sup.assign(driver.steps() + 1, 0.0);
  for (const BsdeSolution& member : fam.members) {
    const BmoEstimate e = bmo_norm_estimate(driver, member);
    for (std::size_t k = 0; k < est.tail_sup.size(); ++k) est.tail_sup[k] = std::max(est.tail_sup[k], e.tail_sup[k]);
  }
  est.value = est.tail_sup[0];
  return est;
}

/// Budget A = (2/gamma^2) e^{gamma |psi|} + (1/gamma) e^{2(gamma+1)|psi| + gamma + 2}
/// on the squared BMO norm of the Z-field. Infinite when gamma = 0.
inline double bmo_budget(double gamma, double psi_sup) {
  if (!(gamma > 0.0)) return std::numeric_limits<double>::infinity();
  return 2.0 / (gamma * gamma) * std::exp(gamma * psi_sup) +
         std::exp(2.0 * (gamma + 1.0) * psi_sup + gamma + 2.0) / gamma;
}

/// alpha(t) = (C + 1/2) e^{2C(T-t)} - 1/2, the ceiling on |Y(t)|^2.
inline ScalarFn alpha_bound(double c_tilde, double horizon) {
  if (!(c_tilde > 0.0)) throw ValidationError("alpha_bound: constant must be positive");
  return [c_tilde, horizon](double t) { return (c_tilde + 0.5) * std::exp(2.0 * c_tilde * (horizon - t)) - 0.5; };
}

/// Smallest admissible constant: dominates |psi|^2 and the cross term
/// |2x g(t,s,y,0)| <= C(1 + x^2 + y^2), which L(1+|y|) growth gives for C >= 2L.
inline double alpha_constant(double psi_sup, const Generator& g) {
  return std::max({psi_sup * psi_sup, 2.0 * g.cert.L, 1e-12});
}

}  // namespace qbsvie

#endif  // QBSVIE_BSDE_HPP
