#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipcs/cases.hpp"
#include "ipcs/direct.hpp"
#include "ipcs/fem.hpp"
#include "ipcs/linalg.hpp"

namespace ipcs {

/// r += s * b for matrices on the same pattern.
inline void accumulate(SparseMatrix& r, double s, const SparseMatrix& b) {
  if (!r.same_pattern(b)) {
    r = combine(1.0, r, s, b);
    return;
  }
  auto& v = r.values();
  const auto& w = b.values();
  for (std::size_t p = 0; p < v.size(); ++p) v[p] += s * w[p];
}

struct PrimalState {
  std::vector<double> U;
  std::vector<double> P;
  double t = 0.0;
};

/// Time nodes and the states at every node; piecewise linear in time.
struct PrimalTrajectory {
  std::shared_ptr<const TaylorHood> th;
  std::vector<double> times;
  std::vector<std::vector<double>> U;
  std::vector<std::vector<double>> P;
  std::vector<double> goal_t;  // M^t at the nodes
  double goal = 0.0;

  int steps() const { return static_cast<int>(times.size()) - 1; }
  double k(int n) const { return times.at(n) - times.at(n - 1); }
  double min_step() const {
    double m = std::numeric_limits<double>::infinity();
    for (int n = 1; n <= steps(); ++n) m = std::min(m, k(n));
    return m;
  }

  /// (U^n - U^{n-1}) / k_n on interval n (1-based).
  std::vector<double> slope(int n) const {
    std::vector<double> s(U[n].size());
    const double kn = k(n);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = (U[n][i] - U[n - 1][i]) / kn;
    return s;
  }

  /// Linear interpolant of the stored states at time t.
  PrimalState at(double t) const {
    if (times.empty()) throw std::logic_error("PrimalTrajectory: empty");
    if (t <= times.front()) return {U.front(), P.front(), times.front()};
    if (t >= times.back()) return {U.back(), P.back(), times.back()};
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const int n = static_cast<int>(it - times.begin());
    const double s = (t - times[n - 1]) / k(n);
    PrimalState st{U[n - 1], P[n - 1], t};
    for (std::size_t i = 0; i < st.U.size(); ++i) st.U[i] += s * (U[n][i] - U[n - 1][i]);
    for (std::size_t i = 0; i < st.P.size(); ++i) st.P[i] += s * (P[n][i] - P[n - 1][i]);
    return st;
  }
};

struct IpcsOptions {
  // pressure and correction matrices do not change in time: factor once and
  // reuse (the iterative configs below are used when this is off)
  bool cached_factorizations = true;
  SolverConfig momentum{SolverMethod::BiCGStab, Preconditioner::Jacobi, 1e-8};
  SolverConfig pressure{SolverMethod::CG, Preconditioner::Jacobi, 1e-10};
  SolverConfig correction{SolverMethod::CG, Preconditioner::Jacobi, 1e-10};
};

/// Initial velocity and pressure with the boundary data at t = 0 imposed.
inline PrimalState initial_state(const TaylorHood& th, const Problem& p) {
  PrimalState s;
  s.U.assign(th.nu(), 0.0);
  s.P.assign(th.np(), 0.0);
  if (p.u0) s.U = interpolate([&](Vec2 x) { return p.u0(x, 0.0); }, th.velocity_space()).values;
  if (p.p0) s.P = interpolate([&](Vec2 x) { return p.p0(x, 0.0); }, th.pressure_space()).values;
  set_constrained(s.U, dirichlet_values(th.velocity_space(), p.velocity_bcs, 0.0));
  set_constrained(s.P, dirichlet_values(th.pressure_space(), p.pressure_bcs, 0.0));
  return s;
}

/// Incremental pressure correction with Crank–Nicolson in the tentative step.
/// Constant operators are assembled once per mesh.
class IpcsSolver {
 public:
  IpcsSolver(std::shared_ptr<const TaylorHood> th, Problem problem, IpcsOptions opt = {})
      : th_(std::move(th)), pb_(std::move(problem)), opt_(opt) {
    if (pb_.pressure_bcs.empty())
      throw std::invalid_argument("IpcsSolver: the pressure step needs at least one pressure Dirichlet boundary");
    pb_.validate(th_->mesh());
    M_ = th_->mass();
    K_ = th_->viscous(pb_.nu);
    BN_ = th_->neumann_velocity(pb_.nu, pb_.neumann_markers);
    Bt_ = th_->gradient();
    Np_ = th_->neumann_pressure(pb_.neumann_markers);
    BtNp_ = combine(1.0, Bt_, -1.0, Np_);
    G_ = th_->pressure_gradient();
    D_ = th_->divergence();
    L_ = th_->pressure_laplacian();
    KB_ = combine(0.5, K_, -0.5, BN_);
    if (opt_.cached_factorizations) {
      // constrained dofs are the same at every time; only the data changes
      const auto cp = dirichlet_values(th_->pressure_space(), pb_.pressure_bcs, 0.0);
      const auto cu = dirichlet_values(th_->velocity_space(), pb_.velocity_bcs, 0.0);
      SparseMatrix Lk = L_, Mk = M_;
      std::vector<double> dp(Lk.rows(), 0.0), du(Mk.rows(), 0.0);
      apply_dirichlet(Lk, dp, cp, true);
      apply_dirichlet(Mk, du, cu, true);
      chol_L_.factor(Lk);
      chol_M_.factor(Mk);
    }
  }

  const TaylorHood& spaces() const { return *th_; }
  const std::shared_ptr<const TaylorHood>& spaces_ptr() const { return th_; }
  const Problem& problem() const { return pb_; }

  PrimalState step(const PrimalState& prev, double k) const {
    if (!(k > 0.0)) throw std::invalid_argument("ipcs_step: time step must be positive");
    const double t = prev.t + k;
    const auto& V = th_->velocity_space();
    const auto& Q = th_->pressure_space();
    try {
      // tentative velocity
      SparseMatrix A = M_;
      A.scale(1.0 / k);
      accumulate(A, 1.0, KB_);
      SparseMatrix rhs_op = M_;
      rhs_op.scale(1.0 / k);
      accumulate(rhs_op, -1.0, KB_);
      if (pb_.convective) {
        const auto C = th_->convection(prev.U);
        accumulate(A, 0.5, C);
        accumulate(rhs_op, -0.5, C);
      }
      std::vector<double> b = rhs_op * prev.U;
      BtNp_.multiply_add(1.0, prev.P, b);
      if (pb_.f) axpy(1.0, th_->load(pb_.f, prev.t + 0.5 * k), b);
      const auto cu = dirichlet_values(V, pb_.velocity_bcs, t);
      apply_dirichlet(A, b, cu, false);
      std::vector<double> x0 = prev.U;
      set_constrained(x0, cu);
      std::vector<double> Us;
      try {
        Us = solve_general(A, b, opt_.momentum, x0).x;
      } catch (const ConvergenceFailure&) {
        // convection-dominated systems at large k can stall both Krylov solvers
        Us = SparseLU(A).solve_refined(A, b);
      }

      // pressure increment
      std::vector<double> bp = D_ * Us;
      for (double& v : bp) v *= -1.0 / k;
      auto cp = dirichlet_values(Q, pb_.pressure_bcs, t);
      for (std::size_t i = 0; i < cp.dofs.size(); ++i) cp.values[i] -= prev.P[cp.dofs[i]];
      std::vector<double> dP;
      if (opt_.cached_factorizations) {
        eliminate_rhs(L_, bp, cp);
        dP = chol_L_.solve(bp);
      } else {
        SparseMatrix Lk = L_;
        apply_dirichlet(Lk, bp, cp, true);
        dP = solve_spd(Lk, bp, opt_.pressure).x;
      }

      // velocity correction
      std::vector<double> bc = M_ * Us;
      G_.multiply_add(-k, dP, bc);
      PrimalState next;
      if (opt_.cached_factorizations) {
        eliminate_rhs(M_, bc, cu);
        next.U = chol_M_.solve(bc);
      } else {
        SparseMatrix Mk = M_;
        apply_dirichlet(Mk, bc, cu, true);
        next.U = solve_spd(Mk, bc, opt_.correction, Us).x;
      }
      set_constrained(next.U, cu);
      next.P = prev.P;
      axpy(1.0, dP, next.P);
      next.t = t;
      return next;
    } catch (const ConvergenceFailure& e) {
      throw ConvergenceFailure(std::string(e.what()) + " (ipcs step ending at t=" + std::to_string(t) + ")", e.residual(),
                               e.iterations());
    }
  }

 private:
  // right-hand side of the symmetrically eliminated system, matrix untouched
  static void eliminate_rhs(const SparseMatrix& a, std::vector<double>& b, const Constraints& c) {
    if (c.empty()) return;
    std::vector<double> g(a.rows(), 0.0);
    for (std::size_t i = 0; i < c.dofs.size(); ++i) g[c.dofs[i]] = c.values[i];
    a.multiply_add(-1.0, g, b);
    for (std::size_t i = 0; i < c.dofs.size(); ++i) b[c.dofs[i]] = c.values[i];
  }

  std::shared_ptr<const TaylorHood> th_;
  Problem pb_;
  IpcsOptions opt_;
  SparseMatrix M_, K_, BN_, Bt_, Np_, BtNp_, G_, D_, L_, KB_;
  SparseCholesky chol_L_, chol_M_;
};

/// Fully coupled Crank–Nicolson Galerkin scheme: solves for the midpoint
/// pair (U^m, P^m) with Picard iteration and sets U^n = 2U^m - U^{n-1}.
/// It satisfies the midpoint weak form exactly, so the splitting estimate
/// vanishes for it.
class CoupledCNSolver {
 public:
  CoupledCNSolver(std::shared_ptr<const TaylorHood> th, Problem problem, double picard_tol = 1e-13, int max_picard = 100)
      : th_(std::move(th)), pb_(std::move(problem)), tol_(picard_tol), max_picard_(max_picard) {
    pb_.validate(th_->mesh());
    M_ = th_->mass();
    KB_ = combine(1.0, th_->viscous(pb_.nu), -1.0, th_->neumann_velocity(pb_.nu, pb_.neumann_markers));
    Avp_ = combine(-1.0, th_->gradient(), 1.0, th_->neumann_pressure(pb_.neumann_markers));
    D_ = th_->divergence();
  }

  const TaylorHood& spaces() const { return *th_; }
  const std::shared_ptr<const TaylorHood>& spaces_ptr() const { return th_; }

  PrimalState step(const PrimalState& prev, double k) const {
    if (!(k > 0.0)) throw std::invalid_argument("coupled_cn_step: time step must be positive");
    const double t = prev.t + k, tm = prev.t + 0.5 * k;
    const int nu = th_->nu(), np = th_->np();
    auto cu0 = dirichlet_values(th_->velocity_space(), pb_.velocity_bcs, prev.t);
    auto cu1 = dirichlet_values(th_->velocity_space(), pb_.velocity_bcs, t);
    auto cp0 = dirichlet_values(th_->pressure_space(), pb_.pressure_bcs, prev.t);
    auto cp1 = dirichlet_values(th_->pressure_space(), pb_.pressure_bcs, t);
    Constraints c;
    for (std::size_t i = 0; i < cu1.dofs.size(); ++i) {
      c.dofs.push_back(cu1.dofs[i]);
      c.values.push_back(0.5 * (cu0.values[i] + cu1.values[i]));
    }
    for (std::size_t i = 0; i < cp1.dofs.size(); ++i) {
      c.dofs.push_back(nu + cp1.dofs[i]);
      c.values.push_back(0.5 * (cp0.values[i] + cp1.values[i]));
    }
    std::vector<double> base(nu + np, 0.0);
    {
      auto mu = M_ * prev.U;
      for (int i = 0; i < nu; ++i) base[i] = 2.0 / k * mu[i];
      if (pb_.f) {
        const auto fl = th_->load(pb_.f, tm);
        for (int i = 0; i < nu; ++i) base[i] += fl[i];
      }
    }
    std::vector<double> W = prev.U;  // Picard transport field
    std::vector<double> x;
    for (int it = 0; it < max_picard_; ++it) {
      SparseMatrix Avv = M_;
      Avv.scale(2.0 / k);
      accumulate(Avv, 1.0, KB_);
      if (pb_.convective) accumulate(Avv, 1.0, th_->convection(W));
      SparseMatrix A = SparseMatrix::block(&Avv, &Avp_, &D_, nullptr, nu, np, nu, np).with_diagonal();
      std::vector<double> b = base;
      apply_dirichlet(A, b, c, false);
      x = SparseLU(A).solve_refined(A, b);
      if (!pb_.convective) break;
      double diff = 0.0, scale = 1.0;
      for (int i = 0; i < nu; ++i) {
        diff = std::max(diff, std::abs(x[i] - W[i]));
        scale = std::max(scale, std::abs(x[i]));
      }
      W.assign(x.begin(), x.begin() + nu);
      if (diff <= tol_ * scale) break;
      if (it + 1 == max_picard_)
        throw ConvergenceFailure("coupled_cn_step: Picard iteration did not converge at t=" + std::to_string(t), diff, it + 1);
    }
    PrimalState next;
    next.t = t;
    next.U.resize(nu);
    next.P.resize(np);
    for (int i = 0; i < nu; ++i) next.U[i] = 2.0 * x[i] - prev.U[i];
    for (int i = 0; i < np; ++i) next.P[i] = 2.0 * x[nu + i] - prev.P[i];
    return next;
  }

 private:
  std::shared_ptr<const TaylorHood> th_;
  Problem pb_;
  double tol_;
  int max_picard_;
  SparseMatrix M_, KB_, Avp_, D_;
};

enum class Scheme { IPCS, CoupledCN };

/// Node times 0, k, 2k, ..., T (the last step absorbs rounding).
inline std::vector<double> uniform_times(double T, double k) {
  if (!(k > 0.0)) throw std::invalid_argument("uniform_times: k must be positive");
  if (T <= 0.0) return {0.0};
  const int m = std::max(1, static_cast<int>(std::ceil(T / k - 1e-9)));
  std::vector<double> t(m + 1);
  for (int n = 0; n < m; ++n) t[n] = n * k;
  t[m] = T;
  return t;
}

/// Called after every completed step; returns the next step size. The
/// runner truncates it so the last node lands on T exactly.
using StepPolicy = std::function<double(const PrimalTrajectory&)>;

inline void append_state(PrimalTrajectory& tr, const PrimalState& s, const std::vector<double>& l) {
  tr.times.push_back(s.t);
  tr.U.push_back(s.U);
  tr.P.push_back(s.P);
  tr.goal_t.push_back(dot(l, s.U));
  const int n = tr.steps();
  if (n >= 1) tr.goal += 0.5 * tr.k(n) * (tr.goal_t[n - 1] + tr.goal_t[n]);
}

template <class Stepper>
PrimalTrajectory run_with_policy(const Stepper& stepper, const Problem& problem, const GoalFunctional& goal,
                                 const StepPolicy& next_k) {
  const auto& th = stepper.spaces();
  PrimalTrajectory tr;
  tr.th = stepper.spaces_ptr();
  const auto l = goal.rhs(th);
  PrimalState s = initial_state(th, problem);
  append_state(tr, s, l);
  const double T = problem.T;
  while (s.t < T) {
    double k = next_k(tr);
    if (!(k > 0.0)) throw std::invalid_argument("run_primal: step policy returned a nonpositive step");
    if (s.t + k >= T - 1e-12 * std::max(1.0, T)) k = T - s.t;
    PrimalState n = stepper.step(s, k);
    if (s.t + k == T || n.t > T) n.t = T;
    s = std::move(n);
    append_state(tr, s, l);
  }
  if (goal.has_terminal()) tr.goal += dot(goal.terminal_rhs(th), tr.U.back());
  return tr;
}

/// M(U) for a completed trajectory: trapezoid in time plus the terminal part.
inline double evaluate_goal(const PrimalTrajectory& tr, const GoalFunctional& goal) {
  const auto l = goal.rhs(*tr.th);
  double s = 0.0;
  for (int n = 1; n <= tr.steps(); ++n) s += 0.5 * tr.k(n) * (dot(l, tr.U[n - 1]) + dot(l, tr.U[n]));
  if (goal.has_terminal()) s += dot(goal.terminal_rhs(*tr.th), tr.U.back());
  return s;
}

/// Runs the primal problem on a prescribed time grid.
inline PrimalTrajectory run_primal(std::shared_ptr<const TaylorHood> th, const Problem& problem, const GoalFunctional& goal,
                                   const std::vector<double>& times, Scheme scheme = Scheme::IPCS) {
  if (times.empty() || times.front() != 0.0) throw std::invalid_argument("run_primal: time grid must start at 0");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("run_primal: time grid must be strictly increasing");
  Problem p = problem;
  p.T = times.back();
  auto policy = [&](const PrimalTrajectory& tr) { return times[tr.steps() + 1] - times[tr.steps()]; };
  PrimalTrajectory tr;
  if (scheme == Scheme::IPCS) {
    IpcsSolver s(th, p);
    tr = run_with_policy(s, p, goal, policy);
  } else {
    CoupledCNSolver s(th, p);
    tr = run_with_policy(s, p, goal, policy);
  }
  tr.times = times;  // exact node values
  tr.goal = evaluate_goal(tr, goal);
  return tr;
}

}  // namespace ipcs
