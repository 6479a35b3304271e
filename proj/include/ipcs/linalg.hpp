#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipcs/core.hpp"

namespace ipcs {

/// Compressed sparse row matrix with sorted unique column indices per row.
class SparseMatrix {
 public:
  struct Triplet {
    int row;
    int col;
    double value;
  };

  SparseMatrix() = default;

  /// Zero matrix on a given pattern. Column indices of each row must be
  /// sorted and unique.
  SparseMatrix(int rows, int cols, std::vector<int> row_ptr, std::vector<int> col_idx)
      : rows_(rows), cols_(cols), row_ptr_(std::move(row_ptr)), col_idx_(std::move(col_idx)) {
    if (static_cast<int>(row_ptr_.size()) != rows_ + 1) throw std::invalid_argument("SparseMatrix: bad row_ptr");
    values_.assign(col_idx_.size(), 0.0);
  }

  /// Sums duplicates.
  static SparseMatrix from_triplets(int rows, int cols, std::vector<Triplet> t) {
    std::sort(t.begin(), t.end(), [](const Triplet& a, const Triplet& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::vector<int> rp(rows + 1, 0), ci;
    std::vector<double> v;
    ci.reserve(t.size());
    v.reserve(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i].row < 0 || t[i].row >= rows || t[i].col < 0 || t[i].col >= cols)
        throw std::invalid_argument("SparseMatrix: triplet out of range");
      if (!ci.empty() && i > 0 && t[i].row == t[i - 1].row && t[i].col == t[i - 1].col) {
        v.back() += t[i].value;
        continue;
      }
      ci.push_back(t[i].col);
      v.push_back(t[i].value);
      ++rp[t[i].row + 1];
    }
    for (int r = 0; r < rows; ++r) rp[r + 1] += rp[r];
    SparseMatrix m(rows, cols, std::move(rp), std::move(ci));
    m.values_ = std::move(v);
    return m;
  }

  static SparseMatrix identity(int n) {
    std::vector<int> rp(n + 1), ci(n);
    for (int i = 0; i < n; ++i) {
      rp[i + 1] = i + 1;
      ci[i] = i;
    }
    SparseMatrix m(n, n, std::move(rp), std::move(ci));
    std::fill(m.values_.begin(), m.values_.end(), 1.0);
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int nnz() const { return static_cast<int>(values_.size()); }
  const std::vector<int>& row_ptr() const { return row_ptr_; }
  const std::vector<int>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  /// Position of (i, j) in the value array, or -1.
  int find(int i, int j) const {
    const auto b = col_idx_.begin() + row_ptr_[i], e = col_idx_.begin() + row_ptr_[i + 1];
    const auto it = std::lower_bound(b, e, j);
    return (it != e && *it == j) ? static_cast<int>(it - col_idx_.begin()) : -1;
  }

  double at(int i, int j) const {
    const int p = find(i, j);
    return p < 0 ? 0.0 : values_[p];
  }

  void add(int i, int j, double v) {
    const int p = find(i, j);
    if (p < 0) throw std::out_of_range("SparseMatrix::add: entry not in pattern");
    values_[p] += v;
  }

  void set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

  void scale(double s) {
    for (double& v : values_) v *= s;
  }

  bool same_pattern(const SparseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && row_ptr_ == o.row_ptr_ && col_idx_ == o.col_idx_;
  }

  /// y = A x
  void multiply(const std::vector<double>& x, std::vector<double>& y) const {
    if (static_cast<int>(x.size()) != cols_) throw std::invalid_argument("spmv: dimension mismatch");
    y.assign(rows_, 0.0);
    for (int i = 0; i < rows_; ++i) {
      double s = 0.0;
      for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) s += values_[p] * x[col_idx_[p]];
      y[i] = s;
    }
  }

  std::vector<double> operator*(const std::vector<double>& x) const {
    std::vector<double> y;
    multiply(x, y);
    return y;
  }

  /// y += alpha A x
  void multiply_add(double alpha, const std::vector<double>& x, std::vector<double>& y) const {
    if (static_cast<int>(x.size()) != cols_ || static_cast<int>(y.size()) != rows_)
      throw std::invalid_argument("spmv: dimension mismatch");
    for (int i = 0; i < rows_; ++i) {
      double s = 0.0;
      for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) s += values_[p] * x[col_idx_[p]];
      y[i] += alpha * s;
    }
  }

  /// y = A^T x
  std::vector<double> transpose_multiply(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != rows_) throw std::invalid_argument("spmv: dimension mismatch");
    std::vector<double> y(cols_, 0.0);
    for (int i = 0; i < rows_; ++i)
      for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) y[col_idx_[p]] += values_[p] * x[i];
    return y;
  }

  SparseMatrix transpose() const {
    std::vector<int> rp(cols_ + 1, 0);
    for (int c : col_idx_) ++rp[c + 1];
    for (int c = 0; c < cols_; ++c) rp[c + 1] += rp[c];
    std::vector<int> ci(col_idx_.size());
    std::vector<double> v(values_.size());
    std::vector<int> next(rp.begin(), rp.end() - 1);
    for (int i = 0; i < rows_; ++i)
      for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) {
        const int q = next[col_idx_[p]]++;
        ci[q] = i;
        v[q] = values_[p];
      }
    SparseMatrix t(cols_, rows_, std::move(rp), std::move(ci));
    t.values_ = std::move(v);
    return t;
  }

  std::vector<double> diagonal() const {
    std::vector<double> d(std::min(rows_, cols_), 0.0);
    for (int i = 0; i < static_cast<int>(d.size()); ++i) d[i] = at(i, i);
    return d;
  }

  /// Replace row i by the unit row e_i (entry (i, i) must be in the pattern).
  void set_identity_row(int i) {
    for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) values_[p] = (col_idx_[p] == i) ? 1.0 : 0.0;
    if (find(i, i) < 0) throw std::out_of_range("set_identity_row: missing diagonal");
  }

  /// Fill every row with zeros.
  void zero_row(int i) {
    for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) values_[p] = 0.0;
  }

  /// alpha A + beta B with the union pattern.
  friend SparseMatrix combine(double alpha, const SparseMatrix& a, double beta, const SparseMatrix& b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw std::invalid_argument("combine: dimension mismatch");
    if (a.same_pattern(b)) {
      SparseMatrix r = a;
      for (std::size_t p = 0; p < r.values_.size(); ++p) r.values_[p] = alpha * a.values_[p] + beta * b.values_[p];
      return r;
    }
    std::vector<int> rp(a.rows_ + 1, 0), ci;
    std::vector<double> v;
    for (int i = 0; i < a.rows_; ++i) {
      int p = a.row_ptr_[i], q = b.row_ptr_[i];
      const int pe = a.row_ptr_[i + 1], qe = b.row_ptr_[i + 1];
      while (p < pe || q < qe) {
        const int ca = p < pe ? a.col_idx_[p] : std::numeric_limits<int>::max();
        const int cb = q < qe ? b.col_idx_[q] : std::numeric_limits<int>::max();
        if (ca == cb) {
          ci.push_back(ca);
          v.push_back(alpha * a.values_[p++] + beta * b.values_[q++]);
        } else if (ca < cb) {
          ci.push_back(ca);
          v.push_back(alpha * a.values_[p++]);
        } else {
          ci.push_back(cb);
          v.push_back(beta * b.values_[q++]);
        }
      }
      rp[i + 1] = static_cast<int>(ci.size());
    }
    SparseMatrix r(a.rows_, a.cols_, std::move(rp), std::move(ci));
    r.values_ = std::move(v);
    return r;
  }

  /// 2x2 block matrix [[a, b], [c, d]]; null entries are zero blocks.
  static SparseMatrix block(const SparseMatrix* a, const SparseMatrix* b, const SparseMatrix* c,
                            const SparseMatrix* d, int r0, int r1, int c0, int c1) {
    auto check = [](const SparseMatrix* m, int r, int cc) {
      if (m && (m->rows_ != r || m->cols_ != cc)) throw std::invalid_argument("block: dimension mismatch");
    };
    check(a, r0, c0);
    check(b, r0, c1);
    check(c, r1, c0);
    check(d, r1, c1);
    std::vector<int> rp(r0 + r1 + 1, 0), ci;
    std::vector<double> v;
    auto append = [&](const SparseMatrix* m, int i, int offset) {
      if (!m) return;
      for (int p = m->row_ptr_[i]; p < m->row_ptr_[i + 1]; ++p) {
        ci.push_back(m->col_idx_[p] + offset);
        v.push_back(m->values_[p]);
      }
    };
    for (int i = 0; i < r0; ++i) {
      append(a, i, 0);
      append(b, i, c0);
      rp[i + 1] = static_cast<int>(ci.size());
    }
    for (int i = 0; i < r1; ++i) {
      append(c, i, 0);
      append(d, i, c0);
      rp[r0 + i + 1] = static_cast<int>(ci.size());
    }
    SparseMatrix r(r0 + r1, c0 + c1, std::move(rp), std::move(ci));
    r.values_ = std::move(v);
    return r;
  }

  /// Same matrix with explicit zero diagonal entries added where missing.
  SparseMatrix with_diagonal() const {
    std::vector<Triplet> t;
    t.reserve(values_.size() + rows_);
    for (int i = 0; i < rows_; ++i) {
      for (int p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) t.push_back({i, col_idx_[p], values_[p]});
      if (i < cols_) t.push_back({i, i, 0.0});
    }
    return from_triplets(rows_, cols_, std::move(t));
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<int> row_ptr_{0};
  std::vector<int> col_idx_;
  std::vector<double> values_;
};

inline std::vector<double> spmv(const SparseMatrix& a, const std::vector<double>& x) { return a * x; }

enum class SolverMethod { CG, BiCGStab, GMRES };
enum class Preconditioner { None, Jacobi };

struct SolverConfig {
  SolverMethod method = SolverMethod::CG;
  Preconditioner preconditioner = Preconditioner::Jacobi;
  double rel_tol = 1e-10;
  double abs_tol = 1e-14;
  int max_iter = 10000;
  int restart = 30;

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0) || max_iter < 1 || restart < 1)
      throw std::invalid_argument("SolverConfig: tolerances must be positive and max_iter >= 1");
  }
};

/// Applies z = P^{-1} r.
using PreconditionerOp = std::function<void(const std::vector<double>& r, std::vector<double>& z)>;

struct SolveResult {
  std::vector<double> x;
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

inline PreconditionerOp make_preconditioner(const SparseMatrix& a, Preconditioner kind) {
  if (kind == Preconditioner::None) return [](const std::vector<double>& r, std::vector<double>& z) { z = r; };
  std::vector<double> inv = a.diagonal();
  for (double& d : inv) d = (d != 0.0) ? 1.0 / d : 1.0;
  return [inv = std::move(inv)](const std::vector<double>& r, std::vector<double>& z) {
    z.resize(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) z[i] = inv[i] * r[i];
  };
}

inline double true_residual(const SparseMatrix& a, const std::vector<double>& b, const std::vector<double>& x) {
  std::vector<double> r = b;
  a.multiply_add(-1.0, x, r);
  return norm2(r);
}

inline void check_square(const SparseMatrix& a, const std::vector<double>& b) {
  if (a.rows() != a.cols() || static_cast<int>(b.size()) != a.rows())
    throw std::invalid_argument("solve: dimension mismatch");
}

inline SolveResult cg(const SparseMatrix& a, const std::vector<double>& b, const SolverConfig& cfg,
                      const PreconditionerOp& prec, std::vector<double> x) {
  const double target = std::max(cfg.rel_tol * norm2(b), cfg.abs_tol);
  std::vector<double> r = b, z, p, q;
  a.multiply_add(-1.0, x, r);
  double rn = norm2(r);
  if (rn <= target) return {std::move(x), 0, rn};
  prec(r, z);
  p = z;
  double rz = dot(r, z);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    a.multiply(p, q);
    const double pq = dot(p, q);
    if (!(pq > 0.0) || !std::isfinite(pq))
      throw ConvergenceFailure("CG breakdown (matrix not positive definite)", rn, it);
    const double alpha = rz / pq;
    axpy(alpha, p, x);
    axpy(-alpha, q, r);
    rn = norm2(r);
    if (rn <= target) {
      const double tr = true_residual(a, b, x);
      if (tr <= target) return {std::move(x), it, tr};
      r = b;
      a.multiply_add(-1.0, x, r);
      rn = tr;
    }
    prec(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = z[i] + beta * p[i];
  }
  throw ConvergenceFailure("CG did not converge", rn, cfg.max_iter);
}

inline SolveResult bicgstab(const SparseMatrix& a, const std::vector<double>& b, const SolverConfig& cfg,
                            const PreconditionerOp& prec, std::vector<double> x) {
  const std::size_t n = b.size();
  const double target = std::max(cfg.rel_tol * norm2(b), cfg.abs_tol);
  std::vector<double> r = b;
  a.multiply_add(-1.0, x, r);
  double rn = norm2(r);
  if (rn <= target) return {std::move(x), 0, rn};
  const std::vector<double> r0 = r;
  std::vector<double> p(n, 0.0), v(n, 0.0), s(n), t, ph, sh;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const double rho_new = dot(r0, r);
    if (rho_new == 0.0 || !std::isfinite(rho_new)) throw ConvergenceFailure("BiCGStab breakdown (rho)", rn, it);
    const double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    prec(p, ph);
    a.multiply(ph, v);
    const double r0v = dot(r0, v);
    if (r0v == 0.0 || !std::isfinite(r0v)) throw ConvergenceFailure("BiCGStab breakdown (r0.v)", rn, it);
    alpha = rho / r0v;
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    if (norm2(s) <= target) {
      axpy(alpha, ph, x);
      const double tr = true_residual(a, b, x);
      if (tr <= target) return {std::move(x), it, tr};
      r = b;
      a.multiply_add(-1.0, x, r);
      rn = tr;
      continue;
    }
    prec(s, sh);
    a.multiply(sh, t);
    const double tt = dot(t, t);
    if (tt == 0.0 || !std::isfinite(tt)) throw ConvergenceFailure("BiCGStab breakdown (t)", rn, it);
    omega = dot(t, s) / tt;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * ph[i] + omega * sh[i];
      r[i] = s[i] - omega * t[i];
    }
    rn = norm2(r);
    if (!std::isfinite(rn)) throw ConvergenceFailure("BiCGStab diverged", rn, it);
    if (rn <= target) {
      const double tr = true_residual(a, b, x);
      if (tr <= target) return {std::move(x), it, tr};
      r = b;
      a.multiply_add(-1.0, x, r);
      rn = tr;
    }
    if (omega == 0.0) throw ConvergenceFailure("BiCGStab breakdown (omega)", rn, it);
  }
  throw ConvergenceFailure("BiCGStab did not converge", rn, cfg.max_iter);
}

/// Right-preconditioned restarted GMRES with modified Gram-Schmidt.
inline SolveResult gmres(const SparseMatrix& a, const std::vector<double>& b, const SolverConfig& cfg,
                         const PreconditionerOp& prec, std::vector<double> x) {
  const std::size_t n = b.size();
  const int m = cfg.restart;
  const double target = std::max(cfg.rel_tol * norm2(b), cfg.abs_tol);
  std::vector<double> r = b;
  a.multiply_add(-1.0, x, r);
  double rn = norm2(r);
  if (rn <= target) return {std::move(x), 0, rn};
  std::vector<std::vector<double>> v(m + 1, std::vector<double>(n)), zs(m);
  std::vector<std::vector<double>> h(m + 1, std::vector<double>(m, 0.0));
  std::vector<double> cs(m), sn(m), g(m + 1), w;
  int total = 0;
  double last_restart_rn = rn;
  int stalled = 0;
  while (total < cfg.max_iter) {
    for (std::size_t i = 0; i < n; ++i) v[0][i] = r[i] / rn;
    std::fill(g.begin(), g.end(), 0.0);
    g[0] = rn;
    int j = 0;
    for (; j < m && total < cfg.max_iter; ++j, ++total) {
      prec(v[j], zs[j]);
      a.multiply(zs[j], w);
      for (int i = 0; i <= j; ++i) {
        h[i][j] = dot(w, v[i]);
        axpy(-h[i][j], v[i], w);
      }
      h[j + 1][j] = norm2(w);
      if (h[j + 1][j] > 0.0)
        for (std::size_t i = 0; i < n; ++i) v[j + 1][i] = w[i] / h[j + 1][j];
      for (int i = 0; i < j; ++i) {
        const double t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
        h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
        h[i][j] = t;
      }
      const double den = std::hypot(h[j][j], h[j + 1][j]);
      if (den == 0.0) throw ConvergenceFailure("GMRES breakdown (singular Hessenberg)", rn, total);
      cs[j] = h[j][j] / den;
      sn[j] = h[j + 1][j] / den;
      h[j][j] = den;
      h[j + 1][j] = 0.0;
      g[j + 1] = -sn[j] * g[j];
      g[j] = cs[j] * g[j];
      if (std::abs(g[j + 1]) <= target) {
        ++j;
        ++total;
        break;
      }
    }
    std::vector<double> y(j, 0.0);
    for (int i = j - 1; i >= 0; --i) {
      double s = g[i];
      for (int k = i + 1; k < j; ++k) s -= h[i][k] * y[k];
      y[i] = s / h[i][i];
    }
    for (int i = 0; i < j; ++i) axpy(y[i], zs[i], x);
    r = b;
    a.multiply_add(-1.0, x, r);
    rn = norm2(r);
    if (!std::isfinite(rn)) throw ConvergenceFailure("GMRES diverged", rn, total);
    if (rn <= target) return {std::move(x), total, rn};
    if (rn > 0.999 * last_restart_rn) {
      if (++stalled >= 3) throw ConvergenceFailure("GMRES stagnated", rn, total);
    } else {
      stalled = 0;
    }
    last_restart_rn = rn;
  }
  throw ConvergenceFailure("GMRES did not converge", rn, total);
}

}  // namespace detail

/// Conjugate gradients. Throws ConvergenceFailure past max_iter.
inline SolveResult solve_spd(const SparseMatrix& a, const std::vector<double>& b, const SolverConfig& cfg = {},
                             std::vector<double> x0 = {}, const PreconditionerOp& prec = {}) {
  cfg.validate();
  detail::check_square(a, b);
  if (x0.empty()) x0.assign(b.size(), 0.0);
  return detail::cg(a, b, cfg, prec ? prec : detail::make_preconditioner(a, cfg.preconditioner), std::move(x0));
}

/// BiCGStab, falling back to GMRES(restart) on breakdown; or GMRES directly.
inline SolveResult solve_general(const SparseMatrix& a, const std::vector<double>& b, const SolverConfig& cfg = {},
                                 std::vector<double> x0 = {}, const PreconditionerOp& prec = {}) {
  cfg.validate();
  detail::check_square(a, b);
  if (x0.empty()) x0.assign(b.size(), 0.0);
  const PreconditionerOp p = prec ? prec : detail::make_preconditioner(a, cfg.preconditioner);
  if (cfg.method == SolverMethod::GMRES) return detail::gmres(a, b, cfg, p, std::move(x0));
  if (cfg.method == SolverMethod::CG) return detail::cg(a, b, cfg, p, std::move(x0));
  try {
    return detail::bicgstab(a, b, cfg, p, x0);
  } catch (const ConvergenceFailure&) {
    return detail::gmres(a, b, cfg, p, std::move(x0));
  }
}

/// sqrt(b^T M^{-1} b) with M SPD.
inline double weighted_norm(const SparseMatrix& m, const std::vector<double>& b) {
  if (norm2(b) == 0.0) return 0.0;
  SolverConfig cfg;
  cfg.rel_tol = 1e-12;
  cfg.abs_tol = 1e-300;
  cfg.max_iter = 20 * std::max(100, m.rows());
  const auto r = solve_spd(m, b, cfg);
  return std::sqrt(std::max(0.0, dot(b, r.x)));
}

}  // namespace ipcs
