#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qbsvie/app.hpp"
#include "qbsvie/expression.hpp"

using namespace qbsvie;
using app::json;

namespace {

json base(const std::string& experiment) {
  return {{"experiment", experiment},
          {"driver", {{"backend", "lattice"}, {"steps", 4}}},
          {"generator", {{"name", "quadratic_half"}}},
          {"position", {{"class", "linear_terminal"}, {"a", 1.0}}}};
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("qbsvie_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Expression, ArithmeticAndPrecedence) {
  const Expression e = Expression::compile("1 + 2*x^2 - -y/4", {"x", "y"});
  EXPECT_DOUBLE_EQ(e({3.0, 2.0}), 1 + 18 + 0.5);
  EXPECT_DOUBLE_EQ(Expression::compile("2^3^2", {})({}), 512.0);
  EXPECT_DOUBLE_EQ(Expression::compile("-2^2", {})({}), -4.0);
  EXPECT_DOUBLE_EQ(Expression::compile("(1+2)*3", {})({}), 9.0);
}

TEST(Expression, FunctionsAndVariables) {
  const Expression e = Expression::compile("max(W_T - 1, 0) + ceil(32*t)/32 + sin(pi/2)", {"t", "W_T", "max_W"});
  EXPECT_DOUBLE_EQ(e({0.01, 2.5, 0.0}), 1.5 + 1.0 / 32 + 1.0);
  EXPECT_TRUE(e.uses(0));
  EXPECT_TRUE(e.uses(1));
  EXPECT_FALSE(e.uses(2));
  EXPECT_DOUBLE_EQ(Expression::compile("min(3, 1, 2)", {})({}), 1.0);
  EXPECT_NEAR(Expression::compile("log(exp(1.5)) + sqrt(abs(-4)) + tanh(0) + floor(2.7) + cos(0)", {})({}), 6.5, 1e-15);
}

TEST(Expression, Errors) {
  EXPECT_THROW(Expression::compile("x +", {"x"}), ValidationError);
  EXPECT_THROW(Expression::compile("q", {"x"}), ValidationError);
  EXPECT_THROW(Expression::compile("foo(1)", {}), ValidationError);
  EXPECT_THROW(Expression::compile("sin(1, 2)", {}), ValidationError);
  EXPECT_THROW(Expression::compile("(1", {}), ValidationError);
  EXPECT_THROW(Expression::compile("1 2", {}), ValidationError);
}

TEST(Config, ValidAndInvalid) {
  EXPECT_NO_THROW(app::validate_config(base("solve-type1")));
  json c = base("solve-type1");
  c["colour"] = "blue";
  EXPECT_THROW(app::validate_config(c), ValidationError);
  c = base("solve-type1");
  c["driver"]["stepz"] = 4;
  EXPECT_THROW(app::validate_config(c), ValidationError);
  c = base("solve-type1");
  c["driver"]["steps"] = 0;
  EXPECT_THROW(app::validate_config(c), ValidationError);
  c = base("solve-type1");
  c["driver"]["steps"] = 2.5;
  EXPECT_THROW(app::validate_config(c), ValidationError);
  c = base("nonsense");
  EXPECT_THROW(app::validate_config(c), ValidationError);
  c = base("solve-type1");
  c["generator"] = {{"name", "sum"}, {"terms", {{{"name", "linear_y"}, {"a", 0.5}}, {{"name", "bogus"}}}}};
  EXPECT_THROW(app::validate_config(c), ValidationError);
  c = base("solve-type1");
  c.erase("generator");
  EXPECT_THROW(app::validate_config(c), ValidationError);
}

TEST(Config, GeneratorParametersChecked) {
  EXPECT_THROW(app::build_generator({{"name", "linear_y"}}), ValidationError);
  EXPECT_THROW(app::build_generator({{"name", "quadratic_half"}, {"a", 1.0}}), ValidationError);
  EXPECT_THROW(app::build_generator({{"name", "custom"}, {"expression", "sin(zp)"}}), ValidationError);
  const Generator g = app::build_generator({{"name", "custom"}, {"expression", "0.5*y + abs(z)"}, {"L", 1.0}});
  EXPECT_TRUE(g.uses_y);
  EXPECT_FALSE(g.uses_zprime);
}

TEST(Config, OverridesAndHash) {
  json c = base("solve-type1");
  const std::string h0 = app::config_hash(c);
  EXPECT_EQ(h0, app::config_hash(base("solve-type1")));
  EXPECT_EQ(h0.size(), 16u);
  app::apply_override(c, "driver.steps=8");
  app::apply_override(c, "driver.backend=path-tree");
  app::apply_override(c, "tolerances.picard=1e-9");
  EXPECT_EQ(c["driver"]["steps"], 8);
  EXPECT_EQ(c["driver"]["backend"], "path-tree");
  EXPECT_EQ(c["tolerances"]["picard"], 1e-9);
  EXPECT_NE(app::config_hash(c), h0);
  EXPECT_THROW(app::apply_override(c, "novalue"), ValidationError);
  EXPECT_THROW(app::apply_override(c, "driver..steps=1"), ValidationError);
  EXPECT_THROW(app::apply_override(c, "driver.steps.x=1"), ValidationError);
}

TEST(Run, NeedsPosition) {
  json c = base("solve-type1");
  c.erase("position");
  EXPECT_THROW(app::run(c), ValidationError);
}

TEST(Run, Type1ZRowsAndRoundTrip) {
  const app::ResultBundle b = app::run(base("solve-type1"));
  EXPECT_EQ(b.Z.size(), 15u);
  EXPECT_EQ(b.Y.size(), 5u);
  EXPECT_LT(b.summary.at("exponential_oracle_error"), 1e-12);
  const app::ResultBundle back = json(b).get<app::ResultBundle>();
  EXPECT_EQ(back, b);

  const auto dir = scratch("type1");
  const auto files = app::emit(b, dir, "both");
  EXPECT_EQ(files.size(), 3u);
  const auto z = lines(dir / "z.csv");
  ASSERT_EQ(z.size(), 17u);
  EXPECT_EQ(z[0].rfind("# experiment=solve-type1 config_hash=" + b.provenance.config_hash, 0), 0u);
  EXPECT_NE(z[0].find("seed="), std::string::npos);
  EXPECT_EQ(z[1], "i,j,t,s,mean,min,max,nodes");
  EXPECT_EQ(lines(dir / "y.csv").size(), 7u);
  std::ifstream in(dir / "bundle.json");
  EXPECT_EQ(json::parse(in).get<app::ResultBundle>(), b);
}

TEST(Run, BitIdenticalReruns) {
  json c = base("solve-type1");
  c["generator"] = {{"name", "sum"}, {"terms", {{{"name", "linear_y"}, {"a", 0.5}}, {{"name", "quadratic_half"}}}}};
  c["driver"]["backend"] = "path-tree";
  c["driver"]["steps"] = 6;
  EXPECT_EQ(json(app::run(c)).dump(), json(app::run(c)).dump());
}

TEST(Run, ConvergenceCsvHasOneRowPerLevel) {
  json c = base("bsde-oracle");
  c["position"] = {{"class", "linear_terminal"}, {"a", 1.0}};
  c["ladder"] = {25, 50, 100};
  const app::ResultBundle b = app::run(c);
  ASSERT_EQ(b.convergence.size(), 3u);
  EXPECT_FALSE(b.convergence[0].ratio.has_value());
  EXPECT_NEAR(*b.convergence[1].ratio, 2.0, 0.3);
  const auto dir = scratch("ladder");
  app::emit(b, dir, "csv");
  const auto conv = lines(dir / "convergence.csv");
  ASSERT_EQ(conv.size(), 5u);
  EXPECT_EQ(conv[1], "N,error,ratio");
  EXPECT_EQ(conv[2].rfind("25,", 0), 0u);
}

TEST(Run, BsdeOracleDefaultsAndValue) {
  json c = base("bsde-oracle");
  c.erase("position");
  c["driver"]["steps"] = 100;
  const app::ResultBundle b = app::run(c);
  EXPECT_LE(b.summary.at("continuum_error"), 3e-3);
  EXPECT_NEAR(b.summary.at("Y0"), 100 * std::log(std::cosh(0.1)), 1e-12);
}

TEST(Run, Type2) {
  json c = base("solve-type2");
  c["driver"] = {{"backend", "path-tree"}, {"steps", 5}};
  c["generator"] = {{"name", "sum"}, {"terms", {{{"name", "sin_zprime"}, {"c", 0.1}}, {{"name", "quadratic_half"}}}}};
  const app::ResultBundle b = app::run(c);
  EXPECT_EQ(b.Z.size(), 36u);
  EXPECT_LT(b.summary.at("msolution_residual"), 1e-10);
  c["driver"]["backend"] = "lattice";
  EXPECT_THROW(app::run(c), ValidationError);
}

TEST(Run, PartitionLevels) {
  json c = base("partition-convergence");
  c["driver"]["steps"] = 16;
  c["position"] = {{"class", "custom_expression"}, {"expression", "max(ceil(4*t), 1)/4*W_T"}};
  c["partition"] = {{"levels", {1, 2, 4}}};
  const app::ResultBundle b = app::run(c);
  ASSERT_EQ(b.convergence.size(), 3u);
  EXPECT_LT(b.convergence[2].error, 1e-9);
  EXPECT_EQ(b.summary.at("nonincreasing"), 1.0);
}

TEST(Run, RiskAxioms) {
  json c = base("risk-axioms");
  c["driver"]["steps"] = 10;
  c["generator"] = {{"name", "coherent_abs"}, {"gbar", 0.5}};
  c["risk"] = {{"r0", 0.05}, {"instances", 3}};
  const app::ResultBundle b = app::run(c);
  EXPECT_EQ(b.summary.at("all_claimed_pass"), 1.0);
  EXPECT_EQ(b.diagnostics.at("verdicts").size(), 6u);
  EXPECT_EQ(b.y_label, "rho");
}

TEST(Run, InconsistencyDemo) {
  json c = base("inconsistency-demo");
  c["driver"]["steps"] = 20;
  c["generator"] = {{"name", "sum"}, {"terms", {{{"name", "linear_y"}, {"a", 0.5}}, {{"name", "quadratic_half"}}}}};
  const app::ResultBundle b = app::run(c);
  EXPECT_GT(b.summary.at("naive_gap"), 1e-3);
  EXPECT_LE(b.summary.at("bsvie_consistency_residual"), b.summary.at("solver_tolerance"));
}

TEST(Run, SolverFailureCarriesExperiment) {
  json c = base("solve-type1");
  c["generator"] = {{"name", "linear_y"}, {"a", 0.5}};
  c["position"] = {{"class", "constant"}, {"c", 1.0}};
  c["tolerances"] = {{"picard_max_iter", 2}};
  try {
    app::run(c);
    FAIL();
  } catch (const SolverFailure& e) {
    EXPECT_NE(e.where().find("solve-type1"), std::string::npos);
    EXPECT_EQ(e.history().size(), 2u);
  }
}

TEST(Emit, UnwritableDirectory) {
  const auto f = scratch("blocker");
  std::ofstream(f) << "x";
  EXPECT_THROW(app::emit(app::run(base("solve-type1")), f / "sub", "json"), app::IoError);
  EXPECT_THROW(app::emit(app::run(base("solve-type1")), scratch("fmt"), "xml"), ValidationError);
}
