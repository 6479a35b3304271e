#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipcs/cases.hpp"
#include "ipcs/dual.hpp"
#include "ipcs/estimate.hpp"
#include "ipcs/primal.hpp"
#include "ipcs/refine.hpp"

namespace ipcs {

/// Residual-based step size control with harmonic-mean smoothing.
struct TimeController {
  double tol_k = 1.0;
  double k_min = 0.0;
  double k_max = std::numeric_limits<double>::infinity();
  double k_prev = 0.0;

  /// Default clamps for horizon T: [1e-5 T, T/20]; `cap` > 0 replaces T/20.
  static TimeController for_horizon(double T, double tol_k, double k_start, double cap = 0.0) {
    TimeController c;
    c.tol_k = tol_k;
    c.k_min = 1e-5 * T;
    c.k_max = cap > 0.0 ? cap : T / 20.0;
    c.k_prev = std::clamp(k_start, c.k_min, c.k_max);
    return c;
  }
};

/// k_n from ||R^{n-1}||: harmonic mean of k_{n-1} and tol_k / ||R^{n-1}||,
/// clamped to [k_min, k_max]. Does not modify the controller.
inline double next_timestep(const TimeController& c, double residual_norm) {
  if (!(residual_norm >= 0.0)) throw std::invalid_argument("next_timestep: negative residual norm");
  const double kt = residual_norm > 0.0 ? c.tol_k / residual_norm : c.k_max;
  const double kp = c.k_prev > 0.0 ? c.k_prev : kt;
  const double k = std::isinf(kt) ? 2.0 * kp : 2.0 * kp * kt / (kp + kt);
  return std::clamp(k, c.k_min, c.k_max);
}

inline constexpr double kRetuneMin = 0.2;
inline constexpr double kRetuneMax = 5.0;

inline double retune_factor(double E_k, double TOL_k) {
  if (!(E_k > 0.0)) return kRetuneMax;
  return std::clamp(TOL_k / E_k, kRetuneMin, kRetuneMax);
}

/// tol_k <- tol_k * TOL_k / E_k, change limited to [0.2, 5].
inline TimeController retune_tolk(TimeController c, double E_k, double TOL_k) {
  c.tol_k *= retune_factor(E_k, TOL_k);
  return c;
}

/// Step policy driven by ||R^n|| at the newest node. `history` (if given)
/// receives the residual norm at each node.
inline StepPolicy adaptive_step_policy(std::shared_ptr<TimeController> ctrl, std::shared_ptr<const ResidualAssembler> ra,
                                       std::vector<double>* history = nullptr) {
  return [ctrl, ra, history](const PrimalTrajectory& tr) {
    const int n = tr.steps();
    if (n == 0) return ctrl->k_prev;
    const double r = riesz_residual_norm(tr, n, *ra);
    if (history) history->push_back(r);
    const double k = next_timestep(*ctrl, r);
    ctrl->k_prev = k;
    return k;
  };
}

template <class Stepper>
PrimalTrajectory run_adaptive_primal(const Stepper& stepper, const Problem& problem, const GoalFunctional& goal,
                                     TimeController& ctrl, std::vector<double>* history = nullptr) {
  auto c = std::make_shared<TimeController>(ctrl);
  auto ra = std::make_shared<const ResidualAssembler>(stepper.spaces_ptr(), problem);
  auto tr = run_with_policy(stepper, problem, goal, adaptive_step_policy(c, ra, history));
  ctrl = *c;
  return tr;
}

/// One solve-estimate pass on a fixed mesh.
struct IterationResult {
  PrimalTrajectory primal;
  DualTrajectory dual;
  EstimateBreakdown estimate;
};

/// Residual norms at every node n >= 1 of a computed trajectory.
inline std::vector<double> node_residual_norms(const PrimalTrajectory& tr, const Problem& p) {
  const ResidualAssembler ra(tr.th, p);
  std::vector<double> r(tr.steps());
  for (int n = 1; n <= tr.steps(); ++n) r[n - 1] = riesz_residual_norm(tr, n, ra);
  return r;
}

struct AdaptOptions {
  double TOL = 1e-3;
  RefinementAlgorithm algorithm = RefinementAlgorithm::RegularCut;
  double fraction = 0.3;
  int max_iterations = 10;
  bool adaptive_k = true;
  double k_fixed = 0.0;  // used when adaptive_k is off; 0 means the problem's step cap
  double h0 = 0.0;       // initial cell size; 0 means the case default
  double split_h = 0.7;  // TOL_h share of TOL - E_c
  Scheme scheme = Scheme::IPCS;
  int max_dofs = 0;      // stop (not converged) instead of solving on a larger space; 0: no limit
  // called after every iteration (artifact dumps, logging)
  std::function<void(int, const IterationResult&)> on_iteration;
};

struct AdaptRecord {
  int iteration = 0;
  int cells = 0;
  int dofs = 0;
  int steps = 0;
  double k_min = 0.0;
  EstimateBreakdown breakdown;
  double goal = 0.0;
  double error = std::numeric_limits<double>::quiet_NaN();
  double efficiency = std::numeric_limits<double>::quiet_NaN();
  double TOL_h = 0.0;  // budget derived from this iteration's E_c
  double TOL_k = 0.0;
  double tol_k = 0.0;  // controller value used for this iteration's primal (0: fixed steps)
  double wall_seconds = 0.0;
  std::vector<double> times;  // time grid (for step-history plots)
};

struct AdaptReport {
  std::vector<AdaptRecord> records;
  bool converged = false;
  bool dof_limited = false;  // stopped by max_dofs
  double TOL = 0.0;
  std::shared_ptr<const Mesh> final_mesh;

  const AdaptRecord& last() const { return records.back(); }
};

inline std::pair<double, double> budget_split(double TOL, double E_c, double share_h) {
  const double room = std::max(0.0, TOL - E_c);
  return {share_h * room, (1.0 - share_h) * room};
}

inline IterationResult solve_and_estimate(std::shared_ptr<const TaylorHood> th, const Problem& p, const GoalFunctional& goal,
                                      const std::vector<double>& times, Scheme scheme) {
  IterationResult r;
  r.primal = run_primal(th, p, goal, times, scheme);
  r.dual = run_dual(r.primal, p, goal);
  r.estimate = estimate(r.primal, r.dual, p);
  return r;
}

/// Solve, estimate, mark, refine until E <= TOL or max_iterations.
inline AdaptReport adaptive_loop(const Case& cs, const AdaptOptions& opt) {
  if (!(opt.TOL > 0.0)) throw std::invalid_argument("adaptive_loop: TOL must be positive");
  if (!(opt.fraction > 0.0 && opt.fraction <= 1.0)) throw std::invalid_argument("adaptive_loop: fraction must lie in (0, 1]");
  if (opt.max_iterations < 1) throw std::invalid_argument("adaptive_loop: max_iterations must be at least 1");
  if (opt.max_dofs < 0) throw std::invalid_argument("adaptive_loop: max_dofs must be nonnegative");
  const Problem& p = cs.problem;
  const double T = p.T;
  AdaptReport rep;
  rep.TOL = opt.TOL;
  auto mesh = p.make_mesh(opt.h0 > 0.0 ? opt.h0 : p.default_h);
  p.validate(*mesh);
  std::optional<TimeController> ctrl;
  const double kcap = p.step_cap();
  double k_start = kcap;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    auto th = std::make_shared<const TaylorHood>(mesh);
    IterationResult res;
    AdaptRecord rec;
    if (!opt.adaptive_k || !ctrl) {
      const double k = opt.adaptive_k ? kcap : (opt.k_fixed > 0.0 ? opt.k_fixed : kcap);
      res = solve_and_estimate(th, p, cs.goal, uniform_times(T, k), opt.scheme);
    } else {
      TimeController c = *ctrl;
      c.k_prev = std::clamp(k_start, c.k_min, c.k_max);
      rec.tol_k = c.tol_k;
      if (opt.scheme == Scheme::IPCS) {
        IpcsSolver s(th, p);
        res.primal = run_adaptive_primal(s, p, cs.goal, c);
      } else {
        CoupledCNSolver s(th, p);
        res.primal = run_adaptive_primal(s, p, cs.goal, c);
      }
      res.dual = run_dual(res.primal, p, cs.goal);
      res.estimate = estimate(res.primal, res.dual, p);
      ctrl = c;
    }
    const auto& b = res.estimate;
    rec.iteration = it;
    rec.cells = mesh->num_cells();
    rec.dofs = th->nu() + th->np();
    rec.steps = res.primal.steps();
    rec.k_min = res.primal.min_step();
    rec.breakdown = b;
    rec.goal = res.primal.goal;
    if (cs.reference) {
      rec.error = std::abs(*cs.reference - rec.goal);
      rec.efficiency = efficiency_index(b.total(), rec.goal, *cs.reference);
    }
    std::tie(rec.TOL_h, rec.TOL_k) = budget_split(opt.TOL, b.E_c(), opt.split_h);
    rec.times = res.primal.times;

    // controller for the next mesh
    if (opt.adaptive_k) {
      if (!ctrl) {
        // first pass ran with fixed steps: start from the largest per-step residual
        double m = 0.0;
        const auto rn = node_residual_norms(res.primal, p);
        for (int n = 1; n <= res.primal.steps(); ++n) m = std::max(m, res.primal.k(n) * rn[n - 1]);
        TimeController c = TimeController::for_horizon(T, m > 0.0 ? m : 1.0, kcap, kcap);
        ctrl = retune_tolk(c, b.E_k, rec.TOL_k);
      } else {
        ctrl = retune_tolk(*ctrl, b.E_k, rec.TOL_k);
      }
      k_start = rec.k_min;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.records.push_back(rec);
    if (opt.on_iteration) opt.on_iteration(it, res);
    rep.final_mesh = mesh;
    if (b.total() <= opt.TOL) {
      rep.converged = true;
      break;
    }
    if (it == opt.max_iterations) break;
    if (opt.algorithm == RefinementAlgorithm::Uniform) {
      mesh = std::make_shared<const Mesh>(refine_uniform(*mesh));
    } else {
      const auto marked = mark_fixed_fraction(b.indicators, opt.fraction);
      mesh = std::make_shared<const Mesh>(refine(*mesh, marked, opt.algorithm));
    }
    if (opt.max_dofs > 0) {
      // P2 vector plus P1 scalar
      const int next_dofs = 3 * mesh->num_vertices() + 2 * mesh->num_facets();
      if (next_dofs > opt.max_dofs) {
        rep.dof_limited = true;
        break;
      }
    }
  }
  return rep;
}

}  // namespace ipcs
