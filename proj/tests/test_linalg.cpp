#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ipcs/direct.hpp"
#include "ipcs/linalg.hpp"

using namespace ipcs;

namespace {

using Dense = std::vector<std::vector<double>>;

SparseMatrix from_dense(const Dense& a) {
  std::vector<SparseMatrix::Triplet> t;
  for (int i = 0; i < static_cast<int>(a.size()); ++i)
    for (int j = 0; j < static_cast<int>(a[i].size()); ++j)
      if (a[i][j] != 0.0) t.push_back({i, j, a[i][j]});
  return SparseMatrix::from_triplets(static_cast<int>(a.size()), static_cast<int>(a[0].size()), t);
}

/// Gaussian elimination with partial pivoting (oracle).
std::vector<double> dense_solve(Dense a, std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int k = 0; k < n; ++k) {
    int p = k;
    for (int i = k + 1; i < n; ++i)
      if (std::abs(a[i][k]) > std::abs(a[p][k])) p = i;
    std::swap(a[k], a[p]);
    std::swap(b[k], b[p]);
    for (int i = k + 1; i < n; ++i) {
      const double f = a[i][k] / a[k][k];
      for (int j = k; j < n; ++j) a[i][j] -= f * a[k][j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int j = i + 1; j < n; ++j) s -= a[i][j] * x[j];
    x[i] = s / a[i][i];
  }
  return x;
}

Dense random_spd(int n, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Dense b(n, std::vector<double>(n));
  for (auto& r : b)
    for (double& x : r) x = (u(rng) > 0.6) ? u(rng) : 0.0;
  Dense a(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) a[i][j] += b[k][i] * b[k][j];
      if (i == j) a[i][j] += 1.0;
    }
  return a;
}

}  // namespace

TEST(Spmv, Identity) {
  const auto i = SparseMatrix::identity(5);
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_EQ(i * x, x);
}

TEST(Spmv, Diagonal) {
  const auto a = from_dense({{2, 0}, {0, 3}});
  EXPECT_EQ(a * std::vector<double>({1, 1}), (std::vector<double>{2, 3}));
}

TEST(Spmv, TransposeIdentity) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Dense d(50, std::vector<double>(50, 0.0));
  for (auto& r : d)
    for (double& x : r)
      if (u(rng) > 0.7) x = u(rng);
  const auto a = from_dense(d);
  std::vector<double> x(50), y(50);
  for (double& v : x) v = u(rng);
  for (double& v : y) v = u(rng);
  const double lhs = dot(a * x, y);
  const double rhs = dot(x, a.transpose() * y);
  // dense oracle for the product
  std::vector<double> ax(50, 0.0);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) ax[i] += d[i][j] * x[j];
  EXPECT_NEAR(lhs, rhs, 1e-12);
  EXPECT_NEAR(dot(ax, y), lhs, 1e-12);
  EXPECT_NEAR(dot(a.transpose_multiply(y), x), lhs, 1e-12);
}

TEST(Spmv, DimensionMismatch) {
  const auto a = from_dense({{1, 2}, {3, 4}});
  EXPECT_THROW(a * std::vector<double>({1, 2, 3}), std::invalid_argument);
}

TEST(SparseMatrixOps, FromTripletsSumsDuplicates) {
  const auto a = SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {0, 0, 2.0}, {1, 0, 4.0}});
  EXPECT_DOUBLE_EQ(a.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(a.at(1, 0), 4.0);
  EXPECT_EQ(a.nnz(), 2);
}

TEST(SparseMatrixOps, CombineAndBlock) {
  const auto a = from_dense({{1, 0}, {0, 2}});
  const auto b = from_dense({{0, 5}, {0, 1}});
  const auto c = combine(2.0, a, -1.0, b);
  EXPECT_DOUBLE_EQ(c.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(c.at(0, 1), -5.0);
  EXPECT_DOUBLE_EQ(c.at(1, 1), 3.0);
  const auto bl = SparseMatrix::block(&a, &b, nullptr, &a, 2, 2, 2, 2);
  EXPECT_EQ(bl.rows(), 4);
  EXPECT_DOUBLE_EQ(bl.at(0, 3), 5.0);
  EXPECT_DOUBLE_EQ(bl.at(3, 3), 2.0);
  EXPECT_DOUBLE_EQ(bl.at(2, 0), 0.0);
}

TEST(SolveSpd, IdentityOneIteration) {
  const auto i = SparseMatrix::identity(4);
  const std::vector<double> b{1, -2, 3, 0.5};
  const auto r = solve_spd(i, b);
  EXPECT_LE(r.iterations, 1);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(r.x[k], b[k], 1e-14);
}

TEST(SolveSpd, Laplacian1D) {
  const auto a = from_dense({{2, -1, 0, 0}, {-1, 2, -1, 0}, {0, -1, 2, -1}, {0, 0, -1, 2}});
  const auto r = solve_spd(a, {1, 0, 0, 0});
  const std::vector<double> expect{0.8, 0.6, 0.4, 0.2};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(r.x[k], expect[k], 1e-10);
}

TEST(SolveSpd, RandomAgainstDense) {
  std::mt19937 rng(3);
  const auto d = random_spd(40, rng);
  const auto a = from_dense(d);
  std::vector<double> b(40);
  for (int i = 0; i < 40; ++i) b[i] = std::sin(i + 1.0);
  SolverConfig cfg;
  cfg.rel_tol = 1e-12;
  const auto r = solve_spd(a, b, cfg);
  const auto x = dense_solve(d, b);
  for (int i = 0; i < 40; ++i) EXPECT_NEAR(r.x[i], x[i], 1e-9);
  EXPECT_LE(detail::true_residual(a, b, r.x), cfg.rel_tol * norm2(b));
}

TEST(SolveSpd, MaxIterationsRaises) {
  std::mt19937 rng(4);
  const auto a = from_dense(random_spd(30, rng));
  SolverConfig cfg;
  cfg.max_iter = 2;
  std::vector<double> b(30, 1.0);
  try {
    solve_spd(a, b, cfg);
    FAIL() << "expected ConvergenceFailure";
  } catch (const ConvergenceFailure& e) {
    EXPECT_GT(e.residual(), 0.0);
    EXPECT_EQ(e.iterations(), 2);
  }
}

TEST(SolveGeneral, DiagonalExactQuickly) {
  const auto a = from_dense({{2, 0, 0}, {0, -3, 0}, {0, 0, 5}});
  for (auto m : {SolverMethod::BiCGStab, SolverMethod::GMRES}) {
    SolverConfig cfg;
    cfg.method = m;
    const auto r = solve_general(a, {2, 3, 5}, cfg);
    EXPECT_LE(r.iterations, 2);
    EXPECT_NEAR(r.x[0], 1.0, 1e-12);
    EXPECT_NEAR(r.x[1], -1.0, 1e-12);
    EXPECT_NEAR(r.x[2], 1.0, 1e-12);
  }
}

TEST(SolveGeneral, DiagonallyDominantAgainstDenseLU) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Dense d(30, std::vector<double>(30, 0.0));
  for (int i = 0; i < 30; ++i) {
    double row = 0.0;
    for (int j = 0; j < 30; ++j)
      if (i != j && u(rng) > 0.5) {
        d[i][j] = u(rng);
        row += std::abs(d[i][j]);
      }
    d[i][i] = row + 1.0;
  }
  const auto a = from_dense(d);
  std::vector<double> b(30);
  for (double& x : b) x = u(rng);
  const auto x = dense_solve(d, b);
  for (auto m : {SolverMethod::BiCGStab, SolverMethod::GMRES}) {
    SolverConfig cfg;
    cfg.method = m;
    cfg.rel_tol = 1e-12;
    const auto r = solve_general(a, b, cfg);
    for (int i = 0; i < 30; ++i) EXPECT_NEAR(r.x[i], x[i], 1e-8);
  }
}

TEST(SolveGeneral, SingularReportsFailure) {
  const auto a = from_dense({{1, 1}, {1, 1}});
  for (auto m : {SolverMethod::BiCGStab, SolverMethod::GMRES}) {
    SolverConfig cfg;
    cfg.method = m;
    cfg.max_iter = 200;
    EXPECT_THROW(solve_general(a, {1, 0}, cfg), ConvergenceFailure);
  }
}

TEST(SolveGeneral, SaddlePointWithLUPreconditioner) {
  // [[2, 1], [1, 0]] has a zero diagonal entry
  const auto a = from_dense({{2, 1, 0}, {1, 0, 1}, {0, 1, 3}});
  SparseLU lu(a);
  SolverConfig cfg;
  cfg.method = SolverMethod::GMRES;
  const auto r = solve_general(a, {1, 2, 3}, cfg, {}, lu.as_preconditioner());
  EXPECT_LE(r.iterations, 2);
  const auto x = dense_solve({{2, 1, 0}, {1, 0, 1}, {0, 1, 3}}, {1, 2, 3});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.x[i], x[i], 1e-12);
}

TEST(SolverConfigValidation, Rejects) {
  SolverConfig cfg;
  cfg.rel_tol = 0.0;
  EXPECT_THROW(solve_spd(SparseMatrix::identity(2), {1, 1}, cfg), std::invalid_argument);
  cfg = {};
  cfg.max_iter = 0;
  EXPECT_THROW(solve_spd(SparseMatrix::identity(2), {1, 1}, cfg), std::invalid_argument);
}

TEST(WeightedNorm, Cases) {
  EXPECT_DOUBLE_EQ(weighted_norm(SparseMatrix::identity(3), {0, 0, 0}), 0.0);
  EXPECT_NEAR(weighted_norm(SparseMatrix::identity(3), {3, 4, 0}), 5.0, 1e-12);
  EXPECT_NEAR(weighted_norm(from_dense({{1, 0, 0}, {0, 4, 0}, {0, 0, 9}}), {1, 2, 3}), std::sqrt(3.0), 1e-12);
}

TEST(WeightedNorm, MatchesDenseSolve) {
  std::mt19937 rng(9);
  const auto d = random_spd(120, rng);
  std::vector<double> b(120);
  for (int i = 0; i < 120; ++i) b[i] = std::cos(0.3 * i);
  const double w = weighted_norm(from_dense(d), b);
  const auto r = dense_solve(d, b);
  const double expect = std::sqrt(dot(b, r));
  EXPECT_NEAR(w * w, expect * expect, 1e-8 * expect * expect);
}

TEST(ReusedLU, RefactorsOnLargeChange) {
  const auto a = from_dense({{4, 1, 0}, {1, 0, 2}, {0, 2, 5}});
  ReusedLUSolver s(1e-12, 4);
  auto x = s.solve(a, {1, 1, 1});
  EXPECT_EQ(s.factorizations(), 1);
  const auto a2 = from_dense({{4.01, 1, 0}, {1, 0, 2}, {0, 2, 5}});
  x = s.solve(a2, {1, 1, 1});
  const auto ex = dense_solve({{4.01, 1, 0}, {1, 0, 2}, {0, 2, 5}}, {1, 1, 1});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(x[i], ex[i], 1e-10);
}
