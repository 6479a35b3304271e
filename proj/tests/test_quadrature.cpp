#include <gtest/gtest.h>

#include <cmath>

#include "ipcs/quadrature.hpp"

using namespace ipcs;

namespace {

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

/// Exact integral of x^a y^b over the reference triangle (0,0),(1,0),(0,1).
double monomial_exact(int a, int b) { return factorial(a) * factorial(b) / factorial(a + b + 2); }

double monomial_rule(const QuadratureRule& r, int a, int b) {
  double s = 0.0;
  for (int q = 0; q < r.size(); ++q) s += r.weights[q] * std::pow(r.points[q][1], a) * std::pow(r.points[q][2], b);
  return 0.5 * s;  // reference area
}

}  // namespace

TEST(TriangleQuadrature, ConstantIntegratesToHalf) {
  for (int d = 1; d <= 6; ++d) EXPECT_NEAR(monomial_rule(triangle_quadrature(d), 0, 0), 0.5, 1e-15) << d;
}

TEST(TriangleQuadrature, ExactForStatedDegree) {
  for (int d = 1; d <= 6; ++d) {
    const auto& r = triangle_quadrature(d);
    for (int a = 0; a <= d; ++a)
      for (int b = 0; a + b <= d; ++b)
        EXPECT_NEAR(monomial_rule(r, a, b), monomial_exact(a, b), 1e-15) << "degree " << d << " x^" << a << " y^" << b;
  }
}

TEST(TriangleQuadrature, DegreeFourOnXSquaredYSquared) {
  EXPECT_NEAR(monomial_rule(triangle_quadrature(4), 2, 2), 1.0 / 180.0, 1e-16);
}

TEST(TriangleQuadrature, NotExactBeyondDegree) {
  // sanity: the rules are not accidentally of higher order everywhere
  const auto& r2 = triangle_quadrature(2);
  EXPECT_GT(std::abs(monomial_rule(r2, 4, 0) - monomial_exact(4, 0)), 1e-6);
}

TEST(TriangleQuadrature, PositiveWeightsInsidePoints) {
  for (int d = 1; d <= 6; ++d) {
    const auto& r = triangle_quadrature(d);
    double sum = 0.0;
    for (int q = 0; q < r.size(); ++q) {
      EXPECT_GT(r.weights[q], 0.0);
      sum += r.weights[q];
      double bsum = 0.0;
      for (double l : r.points[q]) {
        EXPECT_GE(l, 0.0);
        bsum += l;
      }
      EXPECT_NEAR(bsum, 1.0, 1e-15);
    }
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
}

TEST(TriangleQuadrature, UnsupportedDegree) {
  EXPECT_THROW(triangle_quadrature(0), std::invalid_argument);
  EXPECT_THROW(triangle_quadrature(7), std::invalid_argument);
}

TEST(GaussLine, ExactForPolynomials) {
  for (int n = 1; n <= 5; ++n) {
    const auto& r = gauss_line(n);
    for (int p = 0; p <= 2 * n - 1; ++p) {
      double s = 0.0;
      for (std::size_t q = 0; q < r.points.size(); ++q) s += r.weights[q] * std::pow(r.points[q], p);
      EXPECT_NEAR(s, 1.0 / (p + 1), 1e-15) << n << " " << p;
    }
  }
  EXPECT_THROW(gauss_line(6), std::invalid_argument);
}
