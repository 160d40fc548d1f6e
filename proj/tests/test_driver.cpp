#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "qbsvie/driver.hpp"

using namespace qbsvie;

namespace {

Driver lattice(std::size_t n, double T = 1.0) { return Driver(make_uniform_grid(T, n), {}); }
Driver tree(std::size_t n, double T = 1.0) {
  DriverSpec s;
  s.backend = Backend::path_tree;
  return Driver(make_uniform_grid(T, n), s);
}
Driver mc(std::size_t n, std::size_t paths, std::uint64_t seed) {
  DriverSpec s;
  s.backend = Backend::monte_carlo;
  s.paths = paths;
  s.seed = seed;
  return Driver(make_uniform_grid(1.0, n), s);
}

}  // namespace

TEST(Driver, NodeCounts) {
  EXPECT_EQ(lattice(2).total_nodes(), 6u);
  const Driver t = tree(3);
  EXPECT_EQ(t.node_count(3), 8u);
  for (std::size_t n = 0; n < 8; ++n) EXPECT_EQ(t.node_probability(3, n), 0.125);
}

TEST(Driver, PathTreeCap) {
  EXPECT_THROW(tree(23), SizeError);
  EXPECT_NO_THROW(tree(12));
}

TEST(Driver, MonteCarloIsReproducible) {
  const Driver a = mc(10, 4096, 7), b = mc(10, 4096, 7), c = mc(10, 4096, 8);
  EXPECT_EQ(a.mc_paths(), b.mc_paths());
  EXPECT_NE(a.mc_paths(), c.mc_paths());
  EXPECT_THROW(mc(10, 1, 7), ValidationError);
}

TEST(Driver, LatticeSymmetryAndMoments) {
  const Driver d = lattice(9);
  for (std::size_t k = 0; k <= 9; ++k)
    for (std::size_t m = 0; m <= k; ++m) EXPECT_DOUBLE_EQ(d.w(k, m), -d.w(k, k - m));
  const NodeFunction w1 = d.node_values(5, [](double w) { return w; });
  const NodeFunction ew = d.expect_step(w1);
  for (std::size_t m = 0; m < ew.size(); ++m) EXPECT_NEAR(ew[m], d.w(4, m), 1e-15);
  // E over one step of (dW)^2 = dt
  NodeFunction sq = d.node_values(5, [](double w) { return w * w; });
  const NodeFunction esq = d.expect_step(sq);
  for (std::size_t m = 0; m < esq.size(); ++m) EXPECT_NEAR(esq[m] - d.w(4, m) * d.w(4, m), d.grid().dt(), 1e-15);
}

TEST(Driver, ConditionalExpectationBasics) {
  for (const Driver& d : {lattice(6), tree(6)}) {
    const NodeFunction c = d.constant(6, 2.5);
    for (double v : d.conditional_expectation(c, 2).values) EXPECT_EQ(v, 2.5);
    const NodeFunction w = d.node_values(6, [](double x) { return x; });
    EXPECT_EQ(d.conditional_expectation(w, 0)[0], 0.0);
  }
}

TEST(Driver, SquaredTerminalOnTreeMatchesBruteForce) {
  const Driver d = tree(8);
  const NodeFunction sq = d.node_values(8, [](double w) { return w * w; });
  for (std::size_t k = 0; k <= 8; ++k) {
    const NodeFunction e = d.conditional_expectation(sq, k);
    for (std::size_t n = 0; n < e.size(); ++n) {
      // enumerate all continuations
      long double acc = 0.0L;
      const std::size_t r = 8 - k;
      for (std::size_t c = 0; c < (std::size_t{1} << r); ++c) {
        const double w = oracle::tree_w(8, (n << r) | c, d.grid().sqrt_dt());
        acc += w * w;
      }
      const double brute = static_cast<double>(acc / (1u << r));
      EXPECT_NEAR(e[n], brute, 1e-13);
      EXPECT_NEAR(e[n], d.w(k, n) * d.w(k, n) + (1.0 - d.grid()[k]), 1e-13);
    }
  }
}

TEST(Driver, IncrementProjection) {
  const Driver d = lattice(10);
  for (double v : d.increment_projection(d.constant(4, 3.0)).values) EXPECT_EQ(v, 0.0);
  const NodeFunction w = d.node_values(4, [](double x) { return x; });
  for (double v : d.increment_projection(w).values) EXPECT_NEAR(v, 1.0, 1e-14);
  const NodeFunction w2 = d.node_values(4, [](double x) { return x * x; });
  const NodeFunction z = d.increment_projection(w2);
  for (std::size_t m = 0; m < z.size(); ++m) EXPECT_NEAR(z[m], 2.0 * d.w(3, m), 1e-13);
}

TEST(Driver, PositionEvaluation) {
  const Driver d = lattice(4);
  const NodeFunction c = d.evaluate_position(constant_position(1.5), 2);
  for (double v : c.values) EXPECT_EQ(v, 1.5);
  const NodeFunction lt = d.evaluate_position(linear_terminal(1.0), 2);
  for (std::size_t m = 0; m <= 4; ++m) EXPECT_DOUBLE_EQ(lt[m], 0.5 * (2.0 * m - 4.0) * 0.5);
  EXPECT_THROW(d.evaluate_position(running_max_position(), 0), ValidationError);

  const Driver t = tree(2);
  const NodeFunction rm = t.evaluate_position(running_max_position(), 0);
  const double s = t.grid().sqrt_dt();
  // leaves: 0 = down,down  1 = down,up  2 = up,down  3 = up,up
  EXPECT_DOUBLE_EQ(rm[3], 2 * s);
  EXPECT_DOUBLE_EQ(rm[2], s);
  EXPECT_DOUBLE_EQ(rm[1], 0.0);
  EXPECT_DOUBLE_EQ(rm[0], 0.0);
}

TEST(Driver, TowerPropertyIsExact) {
  for (const Driver& d : {lattice(12), tree(10)}) {
    const std::size_t N = d.steps();
    const NodeFunction f = d.node_values(N, [](double w) { return std::sin(3 * w) + w * w * w; });
    const NodeFunction a = d.conditional_expectation(d.conditional_expectation(f, 5), 2);
    const NodeFunction b = d.conditional_expectation(f, 2);
    for (std::size_t n = 0; n < a.size(); ++n) EXPECT_EQ(a[n], b[n]);
  }
}

TEST(Driver, DiscreteIsometryAndRepresentation) {
  const Driver d = tree(10);
  const std::size_t N = 10;
  NodeFunction f = d.evaluate_position(running_max_position(), N);
  f.kind = Measurability::adapted;
  // Z_k along the path and reconstruction f = E f + sum Z_k dW_{k+1}
  std::vector<NodeFunction> Z(N);
  NodeFunction cur = f;
  for (std::size_t k = N; k-- > 0;) {
    Z[k] = d.increment_projection(cur);
    cur = d.expect_step(cur);
  }
  const double mean = cur[0];
  double worst = 0.0;
  for (std::size_t leaf = 0; leaf < d.node_count(N); ++leaf) {
    double r = mean;
    for (std::size_t k = 0; k < N; ++k) r += Z[k][d.ancestor(N, leaf, k)] * d.increment(k + 1, d.ancestor(N, leaf, k + 1));
    worst = std::max(worst, std::abs(r - f[leaf]));
  }
  EXPECT_LT(worst, 1e-13);
  // E[(f - Ef)^2] = sum E[Z_k^2] dt
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t leaf = 0; leaf < d.node_count(N); ++leaf) lhs += (f[leaf] - mean) * (f[leaf] - mean);
  lhs /= static_cast<double>(d.node_count(N));
  for (std::size_t k = 0; k < N; ++k) {
    NodeFunction z2 = Z[k];
    for (double& v : z2.values) v *= v;
    rhs += d.mean(z2) * d.grid().dt();
  }
  EXPECT_NEAR(lhs, rhs, 1e-13);
}

TEST(Driver, MonteCarloRegressionReproducesBasisFunctions) {
  const Driver d = mc(10, 2000, 3);
  const NodeFunction f = d.node_values(6, [](double w) { return 1.0 - 2.0 * w + 0.5 * w * w * w; });
  const NodeFunction fit = d.conditional_expectation(NodeFunction{6, f.values, Measurability::terminal}, 6);
  for (std::size_t p = 0; p < f.size(); ++p) EXPECT_NEAR(fit[p], f[p], 1e-9);
  // E_k[W_N] ~ W_k, in root mean square over paths
  const NodeFunction wn = d.node_values(10, [](double w) { return w; });
  const NodeFunction e = d.conditional_expectation(wn, 5);
  double err = 0.0;
  for (std::size_t p = 0; p < e.size(); ++p) err += (e[p] - d.w(5, p)) * (e[p] - d.w(5, p));
  EXPECT_LT(std::sqrt(err / e.size()), 0.1);  // sampling noise ~ sqrt(var * basis / paths) = 0.035
}

TEST(Driver, RejectsMisshapenFunctions) {
  const Driver d = lattice(4);
  EXPECT_THROW(d.expect_step(NodeFunction{3, {1.0, 2.0}, Measurability::adapted}), ValidationError);
  EXPECT_THROW(d.conditional_expectation(d.constant(2, 0.0), 3), ValidationError);
}
