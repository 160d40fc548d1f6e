#ifndef QBSVIE_GENERATOR_HPP
#define QBSVIE_GENERATOR_HPP

// Generators g(t, s, y, z, z') with declared growth certificates.
//
// Every generator is stored as rest(t, s, y, z, z') + (q/2) z^2 with a
// constant q. The split lets binary-lattice solvers integrate the quadratic
// part in closed form (see quadratic_increment below).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qbsvie/errors.hpp"

namespace qbsvie {

using GeneratorFn = std::function<double(double t, double s, double y, double z, double zp)>;
using ScalarFn = std::function<double(double)>;

/// Constants of the growth assumptions:
///   |g| <= L(1+|y|) + (gamma/2) z^2
///   |g(y1,z1,z1') - g(y2,z2,z2')| <= lipschitz (|dy| + (1+|z1|+|z2|)|dz| + |dz'|)
///   |g| <= h(s) + beta |y| + (gamma/2) z^2          (Briand-Hu form)
///   |g(t,...) - g(t',...)| <= rho(|t-t'|) (1+|y|+z^2) (continuity in the outer time)
struct Certificate {
  double L = 0.0;
  double gamma = 0.0;
  double beta = 0.0;
  ScalarFn h = [](double) { return 0.0; };
  double h_sup = 0.0;
  std::optional<double> lipschitz;  // defaults to max(L, gamma/2)
  std::optional<ScalarFn> rho;
  double zprime_bound = 0.0;        // sup_{z'} |g(..., z') - g(..., 0)|

  double lipschitz_constant() const { return lipschitz.value_or(std::max(L, 0.5 * gamma)); }
};

struct Generator {
  std::string name = "custom";
  GeneratorFn rest = [](double, double, double, double, double) { return 0.0; };
  double q = 0.0;
  bool uses_y = false;
  bool uses_zprime = false;
  bool monotone_in_y = true;  // assumption (C)
  bool convex_in_z = true;
  bool homogeneous_in_z = true;  // g(., lambda z) = lambda g(., z), lambda >= 0, for the z-part
  Certificate cert;

  double operator()(double t, double s, double y, double z, double zp = 0.0) const {
    return rest(t, s, y, z, zp) + 0.5 * q * z * z;
  }

  /// Lipschitz rate in y, used for the implicit-step solvability check.
  double lipschitz_y() const { return uses_y ? cert.lipschitz_constant() : 0.0; }
};

/// ln cosh(x), stable for large |x|.
inline double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

/// One-step increment of the (q/2) z^2 part on a binary lattice with
/// z = (up - down) / (2 sqrt(dt)):  ln E[e^{q Y_next}] / q - E[Y_next]
/// = ln cosh(q z sqrt(dt)) / q, which tends to (q/2) z^2 dt.
/// Monte Carlo drivers use the continuum form (q/2) z^2 dt.
inline double quadratic_increment(double q, double z, double dt, bool binary) {
  if (q == 0.0) return 0.0;
  if (!binary) return 0.5 * q * z * z * dt;
  return log_cosh(q * z * std::sqrt(dt)) / q;
}

namespace catalog {

inline Generator zero() {
  Generator g;
  g.name = "zero";
  g.cert.rho = ScalarFn([](double u) { return u; });
  return g;
}

/// g = a y
inline Generator linear_y(double a) {
  Generator g;
  g.name = "linear_y(" + std::to_string(a) + ")";
  g.rest = [a](double, double, double y, double, double) { return a * y; };
  g.uses_y = a != 0.0;
  g.monotone_in_y = a >= 0.0;
  g.cert.L = std::abs(a);
  g.cert.beta = std::abs(a);
  g.cert.rho = ScalarFn([](double u) { return u; });
  return g;
}

/// g = z^2 / 2
inline Generator quadratic_half() {
  Generator g;
  g.name = "quadratic_half";
  g.q = 1.0;
  g.homogeneous_in_z = false;
  g.cert.gamma = 1.0;
  g.cert.rho = ScalarFn([](double u) { return u; });
  return g;
}

/// g = z^2 / (2 gamma), the generator of the entropic risk measure.
inline Generator entropic(double gamma) {
  if (!(gamma > 0.0)) throw ValidationError("entropic: gamma must be positive");
  Generator g;
  g.name = "entropic(" + std::to_string(gamma) + ")";
  g.q = 1.0 / gamma;
  g.homogeneous_in_z = false;
  g.cert.gamma = 1.0 / gamma;
  g.cert.rho = ScalarFn([](double u) { return u; });
  return g;
}

inline void require_nonnegative_weight(double gbar, const char* name) {
  if (!(gbar >= 0.0) || !std::isfinite(gbar))
    throw ValidationError(std::string(name) + ": weight must be finite and >= 0, got " + std::to_string(gbar));
}

/// g0 = gbar |z|: positively homogeneous and subadditive in z.
inline Generator coherent_abs(double gbar) {
  require_nonnegative_weight(gbar, "coherent_abs");
  Generator g;
  g.name = "coherent_abs(" + std::to_string(gbar) + ")";
  g.rest = [gbar](double, double, double, double z, double) { return gbar * std::abs(z); };
  // gbar|z| <= gbar/2 + (gbar/2) z^2
  g.cert.L = gbar;
  g.cert.gamma = gbar;
  g.cert.h = [gbar](double) { return 0.5 * gbar; };
  g.cert.h_sup = 0.5 * gbar;
  g.cert.rho = ScalarFn([](double u) { return u; });
  return g;
}

/// g0 = gbar sqrt(1 + z^2): convex in z.
inline Generator convex_sqrt(double gbar) {
  require_nonnegative_weight(gbar, "convex_sqrt");
  Generator g;
  g.name = "convex_sqrt(" + std::to_string(gbar) + ")";
  g.rest = [gbar](double, double, double, double z, double) { return gbar * std::sqrt(1.0 + z * z); };
  g.homogeneous_in_z = gbar == 0.0;
  // sqrt(1+z^2) <= 1 + |z| <= 3/2 + z^2/2
  g.cert.L = 1.5 * gbar;
  g.cert.gamma = gbar;
  g.cert.lipschitz = gbar;
  g.cert.h = [gbar](double) { return 1.5 * gbar; };
  g.cert.h_sup = 1.5 * gbar;
  g.cert.rho = ScalarFn([](double u) { return u; });
  return g;
}

/// g0 = gbar z^2
inline Generator entropic_weighted(double gbar) {
  require_nonnegative_weight(gbar, "entropic_weighted");
  Generator g;
  g.name = "entropic_weighted(" + std::to_string(gbar) + ")";
  g.q = 2.0 * gbar;
  g.homogeneous_in_z = gbar == 0.0;
  g.cert.gamma = 2.0 * gbar;
  g.cert.rho = ScalarFn([](double u) { return u; });
  return g;
}

/// g = c sin(z'): bounded, Lipschitz dependence on the reflected argument.
inline Generator sin_zprime(double c) {
  Generator g;
  g.name = "sin_zprime(" + std::to_string(c) + ")";
  g.rest = [c](double, double, double, double, double zp) { return c * std::sin(zp); };
  g.uses_zprime = c != 0.0;
  g.convex_in_z = false;
  g.homogeneous_in_z = false;
  g.cert.L = std::abs(c);
  g.cert.h = [c](double) { return std::abs(c); };
  g.cert.h_sup = std::abs(c);
  g.cert.zprime_bound = std::abs(c);
  g.cert.rho = ScalarFn([](double u) { return u; });
  return g;
}

/// Pointwise sum; certificates add.
inline Generator sum(const Generator& a, const Generator& b) {
  Generator g;
  g.name = a.name + " + " + b.name;
  g.rest = [ra = a.rest, rb = b.rest](double t, double s, double y, double z, double zp) {
    return ra(t, s, y, z, zp) + rb(t, s, y, z, zp);
  };
  g.q = a.q + b.q;
  g.uses_y = a.uses_y || b.uses_y;
  g.uses_zprime = a.uses_zprime || b.uses_zprime;
  g.monotone_in_y = a.monotone_in_y && b.monotone_in_y;
  g.convex_in_z = a.convex_in_z && b.convex_in_z;
  g.homogeneous_in_z = a.homogeneous_in_z && b.homogeneous_in_z;
  g.cert.L = a.cert.L + b.cert.L;
  g.cert.gamma = a.cert.gamma + b.cert.gamma;
  g.cert.beta = a.cert.beta + b.cert.beta;
  g.cert.h = [ha = a.cert.h, hb = b.cert.h](double s) { return ha(s) + hb(s); };
  g.cert.h_sup = a.cert.h_sup + b.cert.h_sup;
  g.cert.lipschitz = a.cert.lipschitz_constant() + b.cert.lipschitz_constant();
  if (a.cert.rho && b.cert.rho)
    g.cert.rho = ScalarFn([ra = *a.cert.rho, rb = *b.cert.rho](double u) { return ra(u) + rb(u); });
  g.cert.zprime_bound = a.cert.zprime_bound + b.cert.zprime_bound;
  return g;
}

/// g = r(s) y + g0(t, s, z), r >= 0 deterministic with sup r <= r_max.
inline Generator discounted(ScalarFn r, double r_max, const Generator& g0) {
  if (!(r_max >= 0.0)) throw ValidationError("discounted: r_max must be >= 0");
  if (g0.uses_y) throw ValidationError("discounted: g0 must not depend on y");
  Generator lin;
  lin.name = "discount";
  lin.rest = [r](double, double s, double y, double, double) { return r(s) * y; };
  lin.uses_y = r_max > 0.0;
  lin.monotone_in_y = true;
  lin.cert.L = r_max;
  lin.cert.beta = r_max;
  lin.cert.rho = ScalarFn([](double u) { return u; });
  Generator g = sum(lin, g0);
  g.name = "discounted(" + g0.name + ")";
  return g;
}

inline Generator discounted(double r0, const Generator& g0) {
  if (!(r0 >= 0.0)) throw ValidationError("discounted: rate must be >= 0");
  return discounted([r0](double) { return r0; }, r0, g0);
}

/// User-supplied generator. A reflected-argument dependence must come with
/// a finite bound on its effect.
inline Generator custom(std::string name, GeneratorFn fn, double q, bool uses_y, bool uses_zprime, bool monotone_in_y,
                        Certificate cert) {
  if (uses_zprime && !(std::isfinite(cert.zprime_bound) && cert.zprime_bound >= 0.0))
    throw ValidationError("custom generator '" + name + "': z' dependence must be bounded (declare zprime_bound)");
  Generator g;
  g.name = std::move(name);
  g.rest = std::move(fn);
  g.q = q;
  g.uses_y = uses_y;
  g.uses_zprime = uses_zprime;
  g.monotone_in_y = monotone_in_y;
  g.convex_in_z = false;  // nothing is claimed for user generators
  g.homogeneous_in_z = false;
  g.cert = std::move(cert);
  return g;
}

}  // namespace catalog

struct SampleSpec {
  double t_max = 1.0;  // t, s sampled in [0, t_max] with t <= s
  double y_range = 5.0;
  double z_range = 5.0;
  double zp_range = 5.0;
  std::size_t count = 10000;
  std::uint64_t seed = 1;
  double rel_tol = 1e-12;
};

struct CertificateViolation {
  std::string kind;
  double t, s, y, z, zp;
  double lhs, rhs;
};

struct CertificateReport {
  std::size_t samples = 0;
  std::vector<CertificateViolation> violations;
  bool ok() const { return violations.empty(); }
};

/// Spot-checks the declared certificate on random points. Violations are
/// report entries with their witness, never exceptions.
inline CertificateReport validate_certificate(const Generator& g, const SampleSpec& spec = {}) {
  CertificateReport report;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> ut(0.0, spec.t_max), uy(-spec.y_range, spec.y_range),
      uz(-spec.z_range, spec.z_range), uzp(-spec.zp_range, spec.zp_range), unit(0.0, 1.0);
  const Certificate& c = g.cert;
  const double lip = c.lipschitz_constant();
  auto exceeds = [&](double lhs, double rhs) { return lhs > rhs + spec.rel_tol * (1.0 + std::abs(rhs)); };
  auto record = [&](const char* kind, double t, double s, double y, double z, double zp, double lhs, double rhs) {
    report.violations.push_back({kind, t, s, y, z, zp, lhs, rhs});
  };

  for (std::size_t n = 0; n < spec.count; ++n) {
    double t = ut(rng), s = ut(rng);
    if (t > s) std::swap(t, s);
    const double y = uy(rng), z = uz(rng), zp = g.uses_zprime ? uzp(rng) : 0.0;
    const double y2 = uy(rng), z2 = uz(rng), zp2 = g.uses_zprime ? uzp(rng) : 0.0;
    ++report.samples;

    const double v = g(t, s, y, z, zp);
    if (!std::isfinite(v)) {
      record("non-finite value", t, s, y, z, zp, v, 0.0);
      continue;
    }
    if (double rhs = c.L * (1.0 + std::abs(y)) + 0.5 * c.gamma * z * z; exceeds(std::abs(v), rhs))
      record("growth", t, s, y, z, zp, std::abs(v), rhs);
    if (double rhs = std::abs(c.h(s)) + c.beta * std::abs(y) + 0.5 * c.gamma * z * z; exceeds(std::abs(v), rhs))
      record("briand-hu growth", t, s, y, z, zp, std::abs(v), rhs);

    const double diff = std::abs(v - g(t, s, y2, z2, zp2));
    const double lip_rhs =
        lip * (std::abs(y - y2) + (1.0 + std::abs(z) + std::abs(z2)) * std::abs(z - z2) + std::abs(zp - zp2));
    if (exceeds(diff, lip_rhs)) record("lipschitz", t, s, y, z, zp, diff, lip_rhs);

    if (!g.uses_y) {
      if (double dy = std::abs(v - g(t, s, y2, z, zp)); exceeds(dy, 0.0)) record("declared y-free", t, s, y, z, zp, dy, 0.0);
    }
    if (!g.uses_zprime) {
      if (double d = std::abs(v - g(t, s, y, z, zp2)); exceeds(d, 0.0)) record("declared z'-free", t, s, y, z, zp, d, 0.0);
    } else if (double d = std::abs(v - g(t, s, y, z, 0.0)); exceeds(d, c.zprime_bound)) {
      record("z' bound", t, s, y, z, zp, d, c.zprime_bound);
    }
    if (g.monotone_in_y) {
      const double dy = 1e-3 + unit(rng);
      const double fd = g(t, s, y + dy, z, zp) - v;
      if (fd < -spec.rel_tol * (1.0 + std::abs(v))) record("monotone in y", t, s, y, z, zp, fd, 0.0);
    }
  }
  return report;
}

/// Worst ratio |g(t,s,...) - g(t',s,...)| / (rho(|t-t'|)(1+|y|+z^2)) over the
/// given outer-time pairs and random (s, y, z, z'). <= 1 means the declared
/// modulus is consistent on the sample.
inline double continuity_modulus_probe(const Generator& g, const std::vector<std::pair<double, double>>& t_pairs,
                                       const SampleSpec& spec = {}) {
  if (!g.cert.rho) throw ValidationError("continuity_modulus_probe: generator '" + g.name + "' declares no modulus");
  const ScalarFn& rho = *g.cert.rho;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> us(0.0, spec.t_max), uy(-spec.y_range, spec.y_range),
      uz(-spec.z_range, spec.z_range), uzp(-spec.zp_range, spec.zp_range);
  double worst = 0.0;
  const std::size_t per_pair = std::max<std::size_t>(1, spec.count / std::max<std::size_t>(1, t_pairs.size()));
  for (const auto& [t, tp] : t_pairs) {
    const double denom_t = rho(std::abs(t - tp));
    for (std::size_t n = 0; n < per_pair; ++n) {
      const double s = us(rng), y = uy(rng), z = uz(rng), zp = g.uses_zprime ? uzp(rng) : 0.0;
      const double num = std::abs(g(t, s, y, z, zp) - g(tp, s, y, z, zp));
      if (num == 0.0) continue;
      const double denom = denom_t * (1.0 + std::abs(y) + z * z);
      worst = std::max(worst, denom > 0.0 ? num / denom : std::numeric_limits<double>::infinity());
    }
  }
  return worst;
}

}  // namespace qbsvie

#endif  // QBSVIE_GENERATOR_HPP
