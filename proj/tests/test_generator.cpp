#include <gtest/gtest.h>

#include <random>

#include "qbsvie/generator.hpp"

using namespace qbsvie;

TEST(Generator, CatalogValues) {
  EXPECT_EQ(catalog::quadratic_half()(0, 0, 0, 2.0), 2.0);
  EXPECT_EQ(catalog::coherent_abs(1.0)(0, 0, 0, -3.0), 3.0);
  EXPECT_EQ(catalog::entropic(2.0)(0, 0, 0, 2.0), 1.0);
  EXPECT_EQ(catalog::linear_y(0.5)(0, 0, 2.0, 7.0), 1.0);
  EXPECT_EQ(catalog::zero()(0.3, 0.4, 5.0, 6.0), 0.0);
  EXPECT_DOUBLE_EQ(catalog::convex_sqrt(2.0)(0, 0, 0, 0.0), 2.0);
  EXPECT_DOUBLE_EQ(catalog::entropic_weighted(0.25)(0, 0, 0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(catalog::sin_zprime(0.1)(0, 0, 0, 0, 1.0), 0.1 * std::sin(1.0));
}

TEST(Generator, NegativeWeightsRejected) {
  EXPECT_THROW(catalog::coherent_abs(-1.0), ValidationError);
  EXPECT_THROW(catalog::convex_sqrt(-0.1), ValidationError);
  EXPECT_THROW(catalog::entropic_weighted(-2.0), ValidationError);
  EXPECT_THROW(catalog::entropic(0.0), ValidationError);
  EXPECT_THROW(catalog::discounted(-0.1, catalog::zero()), ValidationError);
}

TEST(Generator, EveryCatalogEntryPassesItsCertificate) {
  const std::vector<Generator> all{catalog::zero(),
                                   catalog::linear_y(1.0),
                                   catalog::linear_y(-0.7),
                                   catalog::quadratic_half(),
                                   catalog::entropic(2.0),
                                   catalog::coherent_abs(1.3),
                                   catalog::convex_sqrt(0.8),
                                   catalog::entropic_weighted(0.25),
                                   catalog::sin_zprime(0.1),
                                   catalog::sum(catalog::linear_y(0.3), catalog::quadratic_half()),
                                   catalog::discounted(0.05, catalog::coherent_abs(1.0)),
                                   catalog::discounted(0.05, catalog::entropic_weighted(0.25))};
  for (const Generator& g : all) {
    const CertificateReport r = validate_certificate(g);
    EXPECT_EQ(r.samples, 10000u);
    EXPECT_TRUE(r.ok()) << g.name << ": " << r.violations.size() << " violations, first "
                        << (r.ok() ? "" : r.violations[0].kind);
  }
}

TEST(Generator, UnderstatedCertificateIsCaught) {
  Generator g = catalog::quadratic_half();
  g.cert.gamma = 0.5;
  const CertificateReport r = validate_certificate(g);
  ASSERT_FALSE(r.ok());
  EXPECT_NE(r.violations[0].z, 0.0);
  EXPECT_GT(r.violations[0].lhs, r.violations[0].rhs);

  Generator dec = catalog::linear_y(-1.0);
  dec.monotone_in_y = true;  // false claim
  bool saw = false;
  for (const auto& v : validate_certificate(dec).violations) saw = saw || v.kind == "monotone in y";
  EXPECT_TRUE(saw);
  EXPECT_TRUE(catalog::linear_y(1.0).monotone_in_y);
}

TEST(Generator, CoherentAbsIsHomogeneousAndSubadditive) {
  const Generator g = catalog::coherent_abs(1.7);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10, 10), ul(0, 5);
  for (int k = 0; k < 1000; ++k) {
    const double z1 = u(rng), z2 = u(rng), l = ul(rng);
    EXPECT_NEAR(g(0, 0, 0, l * z1), l * g(0, 0, 0, z1), 1e-12);
    EXPECT_LE(g(0, 0, 0, z1 + z2), g(0, 0, 0, z1) + g(0, 0, 0, z2) + 1e-12);
  }
}

TEST(Generator, MidpointConvexity) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-10, 10);
  for (const Generator& g : {catalog::convex_sqrt(1.0), catalog::entropic_weighted(0.5)}) {
    for (int k = 0; k < 1000; ++k) {
      const double a = u(rng), b = u(rng);
      EXPECT_LE(g(0, 0, 0, 0.5 * (a + b)), 0.5 * (g(0, 0, 0, a) + g(0, 0, 0, b)) + 1e-12) << g.name;
    }
  }
}

TEST(Generator, ModulusProbe) {
  const std::vector<std::pair<double, double>> pairs{{0.0, 0.01}, {0.3, 0.5}, {0.9, 1.0}};
  EXPECT_EQ(continuity_modulus_probe(catalog::quadratic_half(), pairs), 0.0);

  Certificate c;
  c.L = 1.0;
  c.rho = ScalarFn([](double u) { return u; });
  const Generator tz = catalog::custom("t*z", [](double t, double, double, double z, double) { return t * z; }, 0.0,
                                       false, false, true, c);
  EXPECT_LE(continuity_modulus_probe(tz, pairs), 1.0);

  const Generator sq = catalog::custom("sqrt(t)", [](double t, double, double, double, double) { return std::sqrt(t); },
                                       0.0, false, false, true, c);
  EXPECT_GT(continuity_modulus_probe(sq, {{0.0, 0.01}}), 1.0);

  Certificate none;
  const Generator bare = catalog::custom("z", [](double, double, double, double z, double) { return z; }, 0.0, false,
                                         false, true, none);
  EXPECT_THROW(continuity_modulus_probe(bare, pairs), ValidationError);
}

TEST(Generator, UnboundedReflectedDependenceRejected) {
  Certificate c;
  c.zprime_bound = std::numeric_limits<double>::infinity();
  EXPECT_THROW(catalog::custom("zp", [](double, double, double, double, double zp) { return zp; }, 0.0, false, true,
                               true, c),
               ValidationError);
}

TEST(Generator, QuadraticIncrement) {
  EXPECT_NEAR(quadratic_increment(1.0, 0.5, 0.01, false), 0.5 * 0.25 * 0.01, 1e-16);
  EXPECT_NEAR(quadratic_increment(1.0, 1.0, 0.25, true), std::log(std::cosh(0.5)), 1e-15);
  EXPECT_EQ(quadratic_increment(0.0, 3.0, 0.1, true), 0.0);
  EXPECT_NEAR(log_cosh(800.0), 800.0 - std::log(2.0), 1e-12);
}
