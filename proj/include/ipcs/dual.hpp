#pragma once

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipcs/cases.hpp"
#include "ipcs/direct.hpp"
#include "ipcs/primal.hpp"

namespace ipcs {

/// Dual states on the primal time grid. Node n < M holds the dG(0)
/// constant of interval I_{n+1}; node M holds the terminal value Z(T).
struct DualTrajectory {
  std::shared_ptr<const TaylorHood> th;
  std::vector<double> times;
  std::vector<std::vector<double>> Z;
  std::vector<std::vector<double>> Y;

  int steps() const { return static_cast<int>(times.size()) - 1; }
  /// Constant on interval n (1-based).
  const std::vector<double>& interval_Z(int n) const { return Z.at(n - 1); }
  const std::vector<double>& interval_Y(int n) const { return Y.at(n - 1); }
  /// Value used at node t_n: the interval to the right of it, or the last
  /// interval at t_M.
  int node_interval(int n) const { return n < steps() ? n + 1 : steps(); }
};

/// Blocks of the primal Jacobian at velocity ubar: momentum rows (test v),
/// continuity rows (test q).
struct PrimalJacobian {
  SparseMatrix vv;  // C(ubar) + R(ubar) + K - B_N
  SparseMatrix vp;  // -Bt + N_p
  SparseMatrix pv;  // D
};

inline PrimalJacobian primal_jacobian(const TaylorHood& th, const Problem& p, const std::vector<double>& ubar) {
  PrimalJacobian j;
  j.vv = combine(1.0, th.viscous(p.nu), -1.0, th.neumann_velocity(p.nu, p.neumann_markers));
  if (p.convective) {
    th.add_convection(j.vv, ubar, 1.0);
    th.add_adjoint_convection(j.vv, ubar, 1.0);
  }
  j.vp = combine(-1.0, th.gradient(), 1.0, th.neumann_pressure(p.neumann_markers));
  j.pv = th.divergence();
  return j;
}

struct LinearSystem {
  SparseMatrix A;
  std::vector<double> b;
};

/// Constraints of the dual pair: Z = 0 on velocity Dirichlet dofs, Y = 0 on
/// pressure Dirichlet nodes.
inline Constraints dual_constraints(const TaylorHood& th, const Problem& p) {
  Constraints c;
  for (int d : dirichlet_values(th.velocity_space(), p.velocity_bcs, 0.0).dofs) c.dofs.push_back(d);
  for (int d : dirichlet_values(th.pressure_space(), p.pressure_bcs, 0.0).dofs) c.dofs.push_back(th.nu() + d);
  c.values.assign(c.dofs.size(), 0.0);
  return c;
}

/// Backward Euler step over an interval of length k: (J^T + M/k) (Z, Y) =
/// (M Z_next / k + l, 0), with J the primal Jacobian at ubar.
inline LinearSystem assemble_dual_step(const TaylorHood& th, const Problem& p, const SparseMatrix& M,
                                       const std::vector<double>& ubar, const std::vector<double>& Z_next,
                                       const std::vector<double>& goal_load, double k) {
  const int nu = th.nu(), np = th.np();
  if (static_cast<int>(ubar.size()) != nu || static_cast<int>(Z_next.size()) != nu ||
      static_cast<int>(goal_load.size()) < nu)
    throw std::invalid_argument("assemble_dual_step: primal or dual data missing or of wrong size");
  if (!(k > 0.0)) throw std::invalid_argument("assemble_dual_step: k must be positive");
  const auto j = primal_jacobian(th, p, ubar);
  SparseMatrix vv = j.vv.transpose();
  accumulate(vv, 1.0 / k, M);
  const SparseMatrix vp = j.pv.transpose();
  const SparseMatrix pv = j.vp.transpose();
  LinearSystem s;
  s.A = SparseMatrix::block(&vv, &vp, &pv, nullptr, nu, np, nu, np).with_diagonal();
  s.b.assign(nu + np, 0.0);
  const auto mz = M * Z_next;
  for (int i = 0; i < nu; ++i) s.b[i] = mz[i] / k + goal_load[i];
  apply_dirichlet(s.A, s.b, dual_constraints(th, p), false);
  return s;
}

/// Same system as assemble_dual_step, with everything except the convection
/// terms assembled once. Values are written in place into a fixed block
/// pattern, so consecutive matrices can share the LU symbolic analysis.
class DualStepAssembler {
 public:
  DualStepAssembler(const TaylorHood& th, const Problem& p) : th_(th), pb_(p) {
    const int nu = th.nu(), np = th.np();
    M_ = th.mass();
    const auto j = primal_jacobian(th, p, std::vector<double>(nu, 0.0));
    zero_vv_ = th.vv_pattern();
    std::fill(zero_vv_.values().begin(), zero_vv_.values().end(), 0.0);
    if (!j.vv.same_pattern(zero_vv_) || !M_.same_pattern(zero_vv_))
      throw std::logic_error("DualStepAssembler: velocity operators off the shared pattern");
    // the vv pattern is structurally symmetric: position of (j, i) for each (i, j)
    const auto& rp = zero_vv_.row_ptr();
    const auto& ci = zero_vv_.col_idx();
    tpos_.resize(ci.size());
    for (int i = 0; i < nu; ++i)
      for (int q = rp[i]; q < rp[i + 1]; ++q) {
        const int c = ci[q];
        const auto b = ci.begin() + rp[c], e = ci.begin() + rp[c + 1];
        const auto it = std::lower_bound(b, e, i);
        if (it == e || *it != i) throw std::logic_error("DualStepAssembler: vv pattern not symmetric");
        tpos_[q] = static_cast<int>(it - ci.begin());
      }
    baseT_.resize(ci.size());
    for (std::size_t q = 0; q < ci.size(); ++q) baseT_[q] = j.vv.values()[tpos_[q]];
    const SparseMatrix vp = j.pv.transpose();
    const SparseMatrix pv = j.vp.transpose();
    A_ = SparseMatrix::block(&zero_vv_, &vp, &pv, nullptr, nu, np, nu, np).with_diagonal();
    // vv entries come first in every velocity row of the block matrix
    apos_.resize(ci.size());
    for (int i = 0; i < nu; ++i)
      for (int q = rp[i]; q < rp[i + 1]; ++q) {
        const int a = A_.row_ptr()[i] + (q - rp[i]);
        if (A_.col_idx()[a] != ci[q]) throw std::logic_error("DualStepAssembler: unexpected block layout");
        apos_[q] = a;
      }
    cons_ = dual_constraints(th, p);
  }

  const Constraints& constraints() const { return cons_; }
  const SparseMatrix& mass() const { return M_; }

  LinearSystem step(const std::vector<double>& ubar, const std::vector<double>& Z_next,
                    const std::vector<double>& goal_load, double k) const {
    const int nu = th_.nu(), np = th_.np();
    if (static_cast<int>(ubar.size()) != nu || static_cast<int>(Z_next.size()) != nu ||
        static_cast<int>(goal_load.size()) < nu)
      throw std::invalid_argument("assemble_dual_step: primal or dual data missing or of wrong size");
    if (!(k > 0.0)) throw std::invalid_argument("assemble_dual_step: k must be positive");
    SparseMatrix conv = zero_vv_;
    if (pb_.convective) {
      th_.add_convection(conv, ubar, 1.0);
      th_.add_adjoint_convection(conv, ubar, 1.0);
    }
    LinearSystem s;
    s.A = A_;
    auto& av = s.A.values();
    const auto& cv = conv.values();
    const auto& mv = M_.values();
    for (std::size_t q = 0; q < apos_.size(); ++q) av[apos_[q]] = cv[tpos_[q]] + baseT_[q] + mv[q] / k;
    s.b.assign(nu + np, 0.0);
    const auto mz = M_ * Z_next;
    for (int i = 0; i < nu; ++i) s.b[i] = mz[i] / k + goal_load[i];
    for (int d : cons_.dofs) {
      s.A.set_identity_row(d);
      s.b[d] = 0.0;
    }
    return s;
  }

 private:
  const TaylorHood& th_;
  Problem pb_;
  SparseMatrix M_, zero_vv_, A_;
  std::vector<int> tpos_, apos_;
  std::vector<double> baseT_;
  Constraints cons_;
};

/// Backward sweep from T to 0 on the primal grid.
inline DualTrajectory run_dual(const PrimalTrajectory& primal, const Problem& p, const GoalFunctional& goal) {
  if (!primal.th || primal.times.empty()) throw std::invalid_argument("run_dual: empty primal trajectory");
  const auto& th = *primal.th;
  const int M = primal.steps();
  const int nu = th.nu(), np = th.np();
  DualTrajectory d;
  d.th = primal.th;
  d.times = primal.times;
  d.Z.assign(M + 1, std::vector<double>(nu, 0.0));
  d.Y.assign(M + 1, std::vector<double>(np, 0.0));
  const DualStepAssembler assembler(th, p);
  const SparseMatrix& Mv = assembler.mass();
  const auto& cons = assembler.constraints();
  if (goal.has_terminal()) {
    // Riesz representer of M^T in the velocity mass inner product
    SparseMatrix Mt = Mv;
    auto b = goal.terminal_rhs(th);
    Constraints c = dirichlet_values(th.velocity_space(), p.velocity_bcs, 0.0);
    std::fill(c.values.begin(), c.values.end(), 0.0);
    apply_dirichlet(Mt, b, c, true);
    d.Z[M] = solve_spd(Mt, b, SolverConfig{SolverMethod::CG, Preconditioner::Jacobi, 1e-12}).x;
  }
  const auto l = goal.rhs(th);
  ReusedLUSolver solver(1e-11);
  std::vector<double> ubar(nu);
  for (int n = M; n >= 1; --n) {
    for (int i = 0; i < nu; ++i) ubar[i] = 0.5 * (primal.U[n - 1][i] + primal.U[n][i]);
    const auto sys = assembler.step(ubar, d.Z[n], l, primal.k(n));
    double bmax = 0.0;
    for (double v : sys.b) bmax = std::max(bmax, std::abs(v));
    if (bmax == 0.0) continue;  // zero data keeps the zero state
    try {
      solver.prepare(sys.A);
      std::vector<double> x0(nu + np, 0.0);
      std::copy(d.Z[n].begin(), d.Z[n].end(), x0.begin());
      std::copy(d.Y[n].begin(), d.Y[n].end(), x0.begin() + nu);
      auto x = solver.solve(sys.A, sys.b, x0);
      zero_constrained(x, cons);
      std::copy(x.begin(), x.begin() + nu, d.Z[n - 1].begin());
      std::copy(x.begin() + nu, x.end(), d.Y[n - 1].begin());
    } catch (const ConvergenceFailure& e) {
      throw ConvergenceFailure(std::string(e.what()) + " (dual interval " + std::to_string(n) + ")", e.residual(),
                               e.iterations());
    }
  }
  return d;
}

}  // namespace ipcs
