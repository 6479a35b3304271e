#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/UmfPackSupport>

#include "ipcs/linalg.hpp"

namespace ipcs {

/// Sparse LU (UMFPACK through Eigen) for the indefinite saddle systems. Used
/// directly or as a preconditioner that survives small matrix changes.
class SparseLU {
 public:
  SparseLU() = default;
  explicit SparseLU(const SparseMatrix& a) { factor(a); }

  /// Factors a. A matrix with the same sparsity pattern as the previous one
  /// reuses the symbolic analysis.
  void factor(const SparseMatrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("SparseLU: matrix must be square");
    if (lu_ && a.rows() == n_ && a.row_ptr() == row_ptr_ && a.col_idx() == col_idx_) {
      double* v = mat_->valuePtr();
      for (std::size_t p = 0; p < to_csc_.size(); ++p) v[to_csc_[p]] = a.values()[p];
      lu_->factorize(*mat_);
    } else {
      n_ = a.rows();
      row_ptr_ = a.row_ptr();
      col_idx_ = a.col_idx();
      // CSR position -> CSC position, then the Eigen matrix in CSC form
      const int nnz = static_cast<int>(a.values().size());
      std::vector<int> cp(n_ + 1, 0);
      for (int c : col_idx_) ++cp[c + 1];
      for (int c = 0; c < n_; ++c) cp[c + 1] += cp[c];
      std::vector<int> next(cp.begin(), cp.end() - 1);
      to_csc_.assign(nnz, 0);
      mat_ = std::make_unique<Eigen::SparseMatrix<double>>(n_, n_);
      mat_->resizeNonZeros(nnz);
      for (int i = 0; i < n_; ++i)
        for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) {
          const int q = next[col_idx_[p]]++;
          to_csc_[p] = q;
          mat_->innerIndexPtr()[q] = i;
          mat_->valuePtr()[q] = a.values()[p];
        }
      for (int c = 0; c <= n_; ++c) mat_->outerIndexPtr()[c] = cp[c];
      lu_ = std::make_unique<Eigen::UmfPackLU<Eigen::SparseMatrix<double>>>();
      lu_->umfpackControl()(UMFPACK_IRSTEP) = 0;  // callers refine (GMRES) if needed
      lu_->compute(*mat_);
    }
    if (lu_->info() != Eigen::Success) throw ConvergenceFailure("SparseLU: factorization failed (singular matrix)", 0.0, 0);
  }

  bool ready() const { return lu_ != nullptr; }
  int size() const { return n_; }

  std::vector<double> solve(const std::vector<double>& b) const {
    if (!lu_) throw std::logic_error("SparseLU: not factored");
    if (static_cast<int>(b.size()) != n_) throw std::invalid_argument("SparseLU: dimension mismatch");
    Eigen::Map<const Eigen::VectorXd> rhs(b.data(), n_);
    Eigen::VectorXd x = lu_->solve(rhs);
    if (lu_->info() != Eigen::Success) throw ConvergenceFailure("SparseLU: solve failed", 0.0, 0);
    return {x.data(), x.data() + n_};
  }

  /// Solve followed by iterative refinement steps against the original matrix.
  std::vector<double> solve_refined(const SparseMatrix& a, const std::vector<double>& b, int steps = 2) const {
    auto x = solve(b);
    for (int s = 0; s < steps; ++s) {
      std::vector<double> r(b);
      a.multiply_add(-1.0, x, r);
      axpy(1.0, solve(r), x);
    }
    return x;
  }

  PreconditionerOp as_preconditioner() const {
    return [this](const std::vector<double>& r, std::vector<double>& z) { z = solve(r); };
  }

 private:
  int n_ = 0;
  std::vector<int> row_ptr_, col_idx_, to_csc_;
  std::unique_ptr<Eigen::SparseMatrix<double>> mat_;
  std::unique_ptr<Eigen::UmfPackLU<Eigen::SparseMatrix<double>>> lu_;
};

/// Sparse LDL^T for fixed SPD matrices that are solved against many times
/// (pressure Poisson and velocity mass in the splitting scheme).
class SparseCholesky {
 public:
  SparseCholesky() = default;
  explicit SparseCholesky(const SparseMatrix& a) { factor(a); }

  void factor(const SparseMatrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("SparseCholesky: matrix must be square");
    n_ = a.rows();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(a.nnz());
    for (int i = 0; i < n_; ++i)
      for (int p = a.row_ptr()[i]; p < a.row_ptr()[i + 1]; ++p) t.emplace_back(i, a.col_idx()[p], a.values()[p]);
    Eigen::SparseMatrix<double> m(n_, n_);
    m.setFromTriplets(t.begin(), t.end());
    ldlt_ = std::make_unique<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(m);
    if (ldlt_->info() != Eigen::Success) throw ConvergenceFailure("SparseCholesky: factorization failed", 0.0, 0);
  }

  bool ready() const { return ldlt_ != nullptr; }

  std::vector<double> solve(const std::vector<double>& b) const {
    if (!ldlt_) throw std::logic_error("SparseCholesky: not factored");
    if (static_cast<int>(b.size()) != n_) throw std::invalid_argument("SparseCholesky: dimension mismatch");
    Eigen::Map<const Eigen::VectorXd> rhs(b.data(), n_);
    Eigen::VectorXd x = ldlt_->solve(rhs);
    return {x.data(), x.data() + n_};
  }

 private:
  int n_ = 0;
  std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> ldlt_;
};

/// GMRES on a sequence of slowly varying systems, preconditioned by the LU
/// of an earlier matrix. Refactors when the iteration count grows or GMRES
/// fails.
class ReusedLUSolver {
 public:
  explicit ReusedLUSolver(double rel_tol = 1e-10, int refactor_after = 12)
      : rel_tol_(rel_tol), refactor_after_(refactor_after) {}

  std::vector<double> solve(const SparseMatrix& a, const std::vector<double>& b, std::vector<double> x0 = {}) {
    if (!lu_.ready() || lu_.size() != a.rows()) refactor(a);
    SolverConfig cfg;
    cfg.method = SolverMethod::GMRES;
    cfg.rel_tol = rel_tol_;
    cfg.abs_tol = 1e-300;
    cfg.restart = 40;
    cfg.max_iter = 80;
    try {
      auto r = solve_general(a, b, cfg, x0, lu_.as_preconditioner());
      last_iterations_ = r.iterations;
      if (r.iterations > refactor_after_) stale_ = true;
      return std::move(r.x);
    } catch (const ConvergenceFailure&) {
      refactor(a);
      auto r = solve_general(a, b, cfg, std::move(x0), lu_.as_preconditioner());
      last_iterations_ = r.iterations;
      return std::move(r.x);
    }
  }

  /// Call before each new matrix; refactors if the previous solve was slow.
  void prepare(const SparseMatrix& a) {
    if (stale_) refactor(a);
  }

  int factorizations() const { return factorizations_; }
  int last_iterations() const { return last_iterations_; }

 private:
  void refactor(const SparseMatrix& a) {
    lu_.factor(a);
    ++factorizations_;
    stale_ = false;
  }

  double rel_tol_;
  int refactor_after_;
  SparseLU lu_;
  bool stale_ = false;
  int factorizations_ = 0;
  int last_iterations_ = 0;
};

}  // namespace ipcs
