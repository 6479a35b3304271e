// Acceptance checks, one pass/fail line per criterion.
//
//   acceptance                 all criteria
//   acceptance --criterion 4   a single one
//
// Every tolerance is a named constant next to the check that uses it.

#include <CLI11.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ipcs/ipcs.hpp"

using namespace ipcs;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmtg(double x, int digits = 4) {
  char b[48];
  std::snprintf(b, sizeof b, "%.*g", digits, x);
  return b;
}

/// Logged to stderr so long runs show progress; stdout keeps the verdicts.
void progress(const std::string& s) {
  std::fprintf(stderr, "  %s\n", s.c_str());
  std::fflush(stderr);
}

std::function<void(int, const IterationResult&)> log_iterations(const std::string& tag) {
  return [tag](int it, const IterationResult& r) {
    progress(tag + " it " + std::to_string(it) + ": dofs " + std::to_string(r.primal.th->nu() + r.primal.th->np()) +
             ", steps " + std::to_string(r.primal.steps()) + ", E " + fmtg(r.estimate.total()) + ", goal " +
             fmtg(r.primal.goal, 8));
  };
}

// ---------------------------------------------------------------------------
// 1. Coupled Crank-Nicolson primal: Galerkin orthogonality makes E_c vanish.

Outcome criterion1() {
  constexpr int kCells = 8;
  constexpr double kStep = 0.05;
  constexpr double kMaxEc = 1e-8;
  const auto c = case_lid_cavity();
  const auto th = std::make_shared<const TaylorHood>(std::make_shared<const Mesh>(unit_square_mesh(kCells)));
  const auto pr = run_primal(th, c.problem, c.goal, uniform_times(c.problem.T, kStep), Scheme::CoupledCN);
  const auto du = run_dual(pr, c.problem, c.goal);
  const auto b = estimate(pr, du, c.problem);
  // the same mesh and grid with IPCS, to show the quantity is not trivially zero
  const auto pi = run_primal(th, c.problem, c.goal, uniform_times(c.problem.T, kStep), Scheme::IPCS);
  const auto bi = estimate(pi, run_dual(pi, c.problem, c.goal), c.problem);
  return {b.E_c() <= kMaxEc, "coupled-CN E_c = " + fmtg(b.E_c()) + " (<= " + fmtg(kMaxEc) + "), IPCS E_c = " +
                                 fmtg(bi.E_c()) + ", 8x8 cavity, k = " + fmtg(kStep)};
}

// ---------------------------------------------------------------------------
// 2. Time-step scaling of E_k and E_c on the channel.

Outcome criterion2() {
  constexpr double kH = 0.1;
  const std::vector<double> ks = {0.01, 0.005, 0.0025, 0.00125};
  constexpr double kSlopeEk = 2.0, kSlopeEcMom = 1.0, kSlopeEcCon = 2.0, kSlack = 0.4;
  const auto c = case_channel_flap();
  const auto th = std::make_shared<const TaylorHood>(c.problem.make_mesh(kH));
  std::vector<double> ek, em, ec;
  for (double k : ks) {
    const auto r = solve_and_estimate(th, c.problem, c.goal, uniform_times(c.problem.T, k), Scheme::IPCS);
    ek.push_back(r.estimate.E_k);
    em.push_back(r.estimate.E_c_mom);
    ec.push_back(r.estimate.E_c_con);
    progress("k = " + fmtg(k) + ": E_k " + fmtg(r.estimate.E_k) + ", E_c_mom " + fmtg(r.estimate.E_c_mom) + ", E_c_con " +
             fmtg(r.estimate.E_c_con));
  }
  const double sk = fit_loglog_slope(ks, ek), sm = fit_loglog_slope(ks, em), sc = fit_loglog_slope(ks, ec);
  const bool ok = std::abs(sk - kSlopeEk) <= kSlack && std::abs(sm - kSlopeEcMom) <= kSlack &&
                  std::abs(sc - kSlopeEcCon) <= kSlack;
  return {ok, "slopes E_k " + fmtg(sk, 3) + " (2), E_c_mom " + fmtg(sm, 3) + " (1), E_c_con " + fmtg(sc, 3) +
                  " (2), each +-" + fmtg(kSlack) + ", channel h = " + fmtg(kH)};
}

// ---------------------------------------------------------------------------
// 3. Error representation for linear Stokes: M(u) - M(U) = r(z).
//
// The dual is manufactured: (zh, yh) solves the stationary adjoint Stokes
// problem with load l0 and z(t) = a(t) zh, y(t) = a(t) yh with a(T) = 0. The
// time-dependent goal load that makes this the exact dual is
// l(t) = a(t) l0 - a'(t) M zh. The semi-discrete primal u is taken from coupled
// Crank-Nicolson on grids 8x and 16x finer than the IPCS grid, combined by
// Richardson extrapolation.

Outcome criterion3() {
  constexpr int kCells = 6;
  constexpr double kT = 1.0, kStep = 0.1, kNu = 0.1;
  constexpr int kFine1 = 8, kFine2 = 16;
  constexpr double kRelTol = 1e-4;

  Problem p = case_lid_cavity().problem;
  p.name = "stokes-box";
  p.convective = false;
  p.nu = kNu;
  p.T = kT;
  const auto zero = [](const Vec2&, double) { return Vec2{}; };
  p.velocity_bcs.clear();
  for (int m : {markers::bottom, markers::right, markers::top, markers::left})
    p.velocity_bcs.push_back(DirichletBC::velocity(m, zero));
  // rotational forcing switched on smoothly: u(0) = 0 is consistent to second order
  p.f = [](const Vec2& x, double t) { return t * t * Vec2{-(x.y - 0.5), x.x - 0.5}; };

  const auto th = std::make_shared<const TaylorHood>(std::make_shared<const Mesh>(unit_square_mesh(kCells)));
  const int nu = th->nu(), np = th->np();
  const auto mass = th->mass();
  const auto KB = combine(1.0, th->viscous(p.nu), -1.0, th->neumann_velocity(p.nu, p.neumann_markers));
  const auto BN = combine(1.0, th->gradient(), -1.0, th->neumann_pressure(p.neumann_markers));
  const auto D = th->divergence();

  // stationary adjoint: [KB^T D^T; BN^T 0] (zh, yh) = (l0, 0), constrained entries 0
  const auto l0 = case_lid_cavity().goal.rhs(*th);
  const auto KBt = KB.transpose(), Dt = D.transpose(), BNt = BN.transpose();
  auto A = SparseMatrix::block(&KBt, &Dt, &BNt, nullptr, nu, np, nu, np).with_diagonal();
  std::vector<double> rhs(nu + np, 0.0);
  std::copy(l0.begin(), l0.end(), rhs.begin());
  apply_dirichlet(A, rhs, dual_constraints(*th, p), false);
  const auto zy = SparseLU(A).solve_refined(A, rhs);
  const std::vector<double> zh(zy.begin(), zy.begin() + nu), yh(zy.begin() + nu, zy.end());
  const auto Mz = mass * zh;

  auto a = [&](double t) { return (kT - t) * (kT - t); };
  auto da = [&](double t) { return -2.0 * (kT - t); };
  auto goal_at = [&](const std::vector<double>& u, double t) { return a(t) * dot(l0, u) - da(t) * dot(Mz, u); };

  const std::array<double, 3> gx = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
  const std::array<double, 3> gw = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  auto integrate_goal = [&](const PrimalTrajectory& tr) {
    double s = 0.0;
    std::vector<double> u(nu);
    for (int n = 1; n <= tr.steps(); ++n) {
      const double t0 = tr.times[n - 1], k = tr.k(n);
      for (int q = 0; q < 3; ++q) {
        const double th_ = 0.5 * (1.0 + gx[q]);
        for (int i = 0; i < nu; ++i) u[i] = (1.0 - th_) * tr.U[n - 1][i] + th_ * tr.U[n][i];
        s += 0.5 * k * gw[q] * goal_at(u, t0 + th_ * k);
      }
    }
    return s;
  };

  GoalFunctional none;
  none.kind = GoalFunctional::Kind::WeightedVolume;
  none.weight = [](const Vec2&) { return Vec2{}; };
  const auto U = run_primal(th, p, none, uniform_times(kT, kStep), Scheme::IPCS);
  const double mU = integrate_goal(U);
  const double m1 = integrate_goal(run_primal(th, p, none, uniform_times(kT, kStep / kFine1), Scheme::CoupledCN));
  const double m2 = integrate_goal(run_primal(th, p, none, uniform_times(kT, kStep / kFine2), Scheme::CoupledCN));
  const double ratio = static_cast<double>(kFine2) / kFine1;
  const double mu = (ratio * ratio * m2 - m1) / (ratio * ratio - 1.0);
  const double err = mu - mU;

  const ResidualAssembler ra(th, p);
  double rz = 0.0;
  std::vector<double> u(nu), pp(np), ud(nu);
  for (int n = 1; n <= U.steps(); ++n) {
    const double t0 = U.times[n - 1], k = U.k(n);
    for (int i = 0; i < nu; ++i) ud[i] = (U.U[n][i] - U.U[n - 1][i]) / k;
    for (int q = 0; q < 3; ++q) {
      const double s = 0.5 * (1.0 + gx[q]);
      for (int i = 0; i < nu; ++i) u[i] = (1.0 - s) * U.U[n - 1][i] + s * U.U[n][i];
      for (int i = 0; i < np; ++i) pp[i] = (1.0 - s) * U.P[n - 1][i] + s * U.P[n][i];
      const double t = t0 + s * k;
      const auto r = ra(u, pp, ud, t);
      rz += 0.5 * k * gw[q] * a(t) * (dot(r.mom, zh) + dot(r.con, yh));
    }
  }
  const double gap = std::abs(err - rz);
  return {gap <= kRelTol * std::abs(err), "M(e) = " + fmtg(err, 10) + ", r(z) = " + fmtg(rz, 10) + ", |gap|/|M(e)| = " +
                                              fmtg(gap / std::abs(err), 3) + " (<= " + fmtg(kRelTol) +
                                              "), reference extrapolated from " + std::to_string(kFine1) + "x/" +
                                              std::to_string(kFine2) + "x grids (difference " + fmtg(m2 - m1, 3) + ")"};
}

// ---------------------------------------------------------------------------
// 4-6, 10: adaptive runs.

// The published cavity value has five significant digits and our converged
// value sits about 2e-5 away from it, so the loop tolerance is kept an order
// of magnitude above that.
constexpr double kCavityTOL = 2e-4;
constexpr int kCavityMaxIter = 12;

AdaptReport cavity_loop(const std::string& tag) {
  AdaptOptions o;
  o.TOL = kCavityTOL;
  o.algorithm = RefinementAlgorithm::RegularCut;
  o.fraction = 0.3;
  o.max_iterations = kCavityMaxIter;
  o.adaptive_k = true;
  o.on_iteration = log_iterations(tag);
  return adaptive_loop(case_lid_cavity(), o);
}

constexpr double kChannelTOL = 1e-3;
constexpr int kChannelMaxIter = 8;
// ~2.2 GB at 228k dofs; the next refinement does not fit in this machine's memory
constexpr int kChannelMaxDofs = 250000;

AdaptReport channel_loop(int max_dofs) {
  AdaptOptions o;
  o.TOL = kChannelTOL;
  o.algorithm = RefinementAlgorithm::RegularCut;
  o.fraction = 0.3;
  o.max_iterations = kChannelMaxIter;
  o.adaptive_k = true;
  o.max_dofs = max_dofs;
  o.on_iteration = log_iterations("channel");
  return adaptive_loop(case_channel_flap(), o);
}

std::string error_list(const AdaptReport& rep) {
  std::string s;
  for (const auto& r : rep.records) s += (s.empty() ? "" : " ") + fmtg(r.error, 3);
  return s;
}

Outcome criterion4() {
  constexpr double kTarget = 0.002;
  const auto rep = cavity_loop("cavity");
  int first = -1;
  for (const auto& r : rep.records)
    if (first < 0 && r.error <= kTarget) first = r.iteration;
  const auto& l = rep.last();
  return {first > 0 && first <= kCavityMaxIter,
          "first |M2 + 0.039389| <= " + fmtg(kTarget) + " at iteration " + std::to_string(first) + " (<= " +
              std::to_string(kCavityMaxIter) + "); errors [" + error_list(rep) + "], final goal " + fmtg(l.goal, 8)};
}

// dofs of the first record whose error is <= level and stays there
int dofs_reaching(const AdaptReport& rep, double level) {
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    bool stays = true;
    for (std::size_t j = i; j < rep.records.size(); ++j) stays = stays && rep.records[j].error <= level;
    if (stays) return rep.records[i].dofs;
  }
  return -1;
}

// Spatial refinement compared on a shared fixed time grid. The error is taken
// against a 128x128 solution on the same grid, so the time error cancels and
// the comparison is not limited by the digits of the published value.
Outcome criterion5() {
  constexpr double kStep = 0.005;
  constexpr int kReferenceCells = 128;
  constexpr double kLevel = 1e-5;
  constexpr double kMinRatio = 4.0;
  Case c = case_lid_cavity();
  const auto times = uniform_times(c.problem.T, kStep);
  {
    const auto th = std::make_shared<const TaylorHood>(std::make_shared<const Mesh>(unit_square_mesh(kReferenceCells)));
    c.reference = run_primal(th, c.problem, c.goal, times).goal;
    progress("fine-mesh goal " + fmtg(*c.reference, 10));
  }
  auto run = [&](RefinementAlgorithm algo, int iterations, const std::string& tag) {
    AdaptOptions o;
    o.TOL = 1e-12;  // run every iteration
    o.algorithm = algo;
    o.fraction = 0.3;
    o.max_iterations = iterations;
    o.adaptive_k = false;
    o.k_fixed = kStep;
    o.on_iteration = log_iterations(tag);
    return adaptive_loop(c, o);
  };
  const auto rc = run(RefinementAlgorithm::RegularCut, 6, "regular cut");
  const auto bi = run(RefinementAlgorithm::Bisection, 8, "bisection");
  const auto un = run(RefinementAlgorithm::Uniform, 4, "uniform");
  const int drc = dofs_reaching(rc, kLevel), dbi = dofs_reaching(bi, kLevel), dun = dofs_reaching(un, kLevel);
  auto ratio = [&](int d) { return d > 0 && dun > 0 ? static_cast<double>(dun) / d : 0.0; };
  const bool ok = ratio(drc) >= kMinRatio && ratio(dbi) >= kMinRatio;
  return {ok, "error level " + fmtg(kLevel) + ": uniform " + std::to_string(dun) + " dofs, regular cut " +
                  std::to_string(drc) + " (ratio " + fmtg(ratio(drc), 3) + "), bisection " + std::to_string(dbi) +
                  " (ratio " + fmtg(ratio(dbi), 3) + "), required >= " + fmtg(kMinRatio) + "; errors uniform [" +
                  error_list(un) + "], regular cut [" + error_list(rc) + "], bisection [" + error_list(bi) + "]"};
}

// Channel indices use the published 0.0200; the goal on our geometry is still
// moving in the third digit at the finest affordable mesh.
Outcome criterion6() {
  constexpr double kLo = 1.0, kHi = 10.0, kChannelLo = 2.0, kChannelHi = 6.0;
  constexpr int kChannelDofs = 60000;  // first five iterations
  bool ok = true;
  std::string ch, cv;
  for (const auto& r : channel_loop(kChannelDofs).records) {
    ok = ok && r.efficiency >= kChannelLo && r.efficiency <= kChannelHi;
    ch += (ch.empty() ? "" : " ") + fmtg(r.efficiency, 3);
  }
  for (const auto& r : cavity_loop("cavity").records) {
    ok = ok && r.efficiency >= kLo && r.efficiency <= kHi;
    cv += (cv.empty() ? "" : " ") + fmtg(r.efficiency, 3);
  }
  return {ok, "channel [" + ch + "] in [" + fmtg(kChannelLo) + ", " + fmtg(kChannelHi) + "], cavity [" + cv + "] in [" +
                  fmtg(kLo) + ", " + fmtg(kHi) + "]"};
}

Outcome criterion10() {
  const auto rep = channel_loop(kChannelMaxDofs);
  const auto& l = rep.last();
  std::string E;
  for (const auto& r : rep.records) E += (E.empty() ? "" : " ") + fmtg(r.breakdown.total(), 3);
  const std::string why = rep.converged ? "converged" : rep.dof_limited ? "not converged, next mesh over the dof limit"
                                                                        : "not converged";
  return {rep.converged && static_cast<int>(rep.records.size()) <= kChannelMaxIter,
          why + " after " + std::to_string(rep.records.size()) + " iterations (<= " + std::to_string(kChannelMaxIter) +
              "), E [" + E + "] vs TOL " + fmtg(kChannelTOL) + ", final goal " + fmtg(l.goal, 6) + ", " +
              std::to_string(l.dofs) + " dofs"};
}

// ---------------------------------------------------------------------------
// 7. Taylor-Green: spatial order of the velocity L2 error at a tiny step.

Outcome criterion7() {
  constexpr double kStep = 1e-4, kT = 0.01, kMinOrder = 2.5;
  const std::vector<int> ns = {4, 8, 16};
  const auto c = case_taylor_green();
  Problem p = c.problem;
  p.T = kT;
  std::vector<double> hs, errs;
  for (int n : ns) {
    const auto th = std::make_shared<const TaylorHood>(std::make_shared<const Mesh>(unit_square_mesh(n)));
    const auto tr = run_primal(th, p, c.goal, uniform_times(kT, kStep));
    hs.push_back(1.0 / n);
    errs.push_back(l2_velocity_error(*th, tr.U.back(), p.exact_u, kT));
    progress("n = " + std::to_string(n) + ": L2 error " + fmtg(errs.back()));
  }
  const double order = fit_loglog_slope(hs, errs);
  std::string e;
  for (double x : errs) e += (e.empty() ? "" : " ") + fmtg(x, 3);
  return {order >= kMinOrder, "order " + fmtg(order, 3) + " (>= " + fmtg(kMinOrder) + "), errors [" + e + "], k = " +
                                  fmtg(kStep)};
}

// ---------------------------------------------------------------------------
// 8. Randomised refinement rounds.

bool point_in(const Mesh& m, int c, const Vec2& x) {
  const Cell& t = m.cell(c);
  const Vec2 a = m.vertex(t[0]), b = m.vertex(t[1]), d = m.vertex(t[2]);
  const double s = m.signed_area(c);
  const double l0 = 0.5 * cross(b - x, d - x) / s, l1 = 0.5 * cross(d - x, a - x) / s, l2 = 0.5 * cross(a - x, b - x) / s;
  return l0 > -1e-12 && l1 > -1e-12 && l2 > -1e-12;
}

Outcome criterion8() {
  constexpr int kSequences = 25, kRounds = 20;  // x 2 algorithms = 1000 rounds
  constexpr double kMinAngleFactor = 0.4;
  constexpr double kAreaRelTol = 1e-12;
  constexpr int kMaxMarked = 6;
  std::mt19937 rng(20240601u);
  int rounds = 0, nonconforming = 0, angle_violations = 0, area_violations = 0, red_checked = 0;
  double worst_angle_ratio = 10.0;
  for (int algo = 0; algo < 2; ++algo) {
    for (int s = 0; s < kSequences; ++s) {
      Mesh m = s % 2 ? channel_flap_mesh(0.2) : unit_square_mesh(2 + s % 3);
      const double angle0 = m.min_angle();
      for (int r = 0; r < kRounds; ++r) {
        std::uniform_int_distribution<int> count(1, kMaxMarked);
        std::uniform_int_distribution<int> pick(0, m.num_cells() - 1);
        std::vector<int> marked;
        for (int i = count(rng); i > 0; --i) marked.push_back(pick(rng));
        std::sort(marked.begin(), marked.end());
        marked.erase(std::unique(marked.begin(), marked.end()), marked.end());
        const MarkedSet ms{marked, static_cast<double>(marked.size()) / m.num_cells()};
        Mesh next = algo == 0 ? refine_rivara(m, ms) : refine_regular_cut(m, ms);
        ++rounds;
        if (!next.is_conforming()) ++nonconforming;
        if (std::abs(next.area() - m.area()) > 1e-12 * m.area()) ++nonconforming;
        if (algo == 0) {
          worst_angle_ratio = std::min(worst_angle_ratio, next.min_angle() / angle0);
          if (next.min_angle() < kMinAngleFactor * angle0) ++angle_violations;
        } else {
          // red children of marked non-green parents: four non-green cells inside the parent
          for (int c : marked) {
            if (m.green()[c] >= 0) continue;
            std::vector<int> kids;
            for (int k = 0; k < next.num_cells(); ++k) {
              const Cell& t = next.cell(k);
              const Vec2 g = (1.0 / 3.0) * (next.vertex(t[0]) + next.vertex(t[1]) + next.vertex(t[2]));
              if (point_in(m, c, g)) kids.push_back(k);
            }
            if (kids.size() != 4) {
              ++area_violations;
              continue;
            }
            for (int k : kids) {
              ++red_checked;
              if (next.green()[k] >= 0 || std::abs(next.cell_area(k) - 0.25 * m.cell_area(c)) > kAreaRelTol * m.cell_area(c))
                ++area_violations;
            }
          }
        }
        m = std::move(next);
      }
    }
  }
  const bool ok = rounds == 1000 && nonconforming == 0 && angle_violations == 0 && area_violations == 0 && red_checked > 0;
  return {ok, std::to_string(rounds) + " rounds: " + std::to_string(nonconforming) + " nonconforming, Rivara min-angle ratio " +
                  fmtg(worst_angle_ratio, 3) + " (>= " + fmtg(kMinAngleFactor) + "), " + std::to_string(red_checked) +
                  " red children checked, " + std::to_string(area_violations) + " area violations"};
}

// ---------------------------------------------------------------------------
// 9. Controller properties.

Outcome criterion9() {
  constexpr double kMaxRatio = 2.5;
  constexpr int kBurnIn = 10;
  constexpr double kSumTol = 1e-14;  // relative; the last node equals T bit for bit
  // sum of steps on a real adaptive run
  auto c = case_lid_cavity();
  c.problem.T = 0.37;
  const auto th = std::make_shared<const TaylorHood>(std::make_shared<const Mesh>(unit_square_mesh(4)));
  auto tc = TimeController::for_horizon(c.problem.T, 2e-3, 0.003);
  const auto tr = run_adaptive_primal(IpcsSolver(th, c.problem), c.problem, c.goal, tc);
  double sum = 0.0;
  bool bounded = true;
  for (int n = 1; n <= tr.steps(); ++n) {
    sum += tr.k(n);
    if (n < tr.steps()) bounded = bounded && tr.k(n) >= tc.k_min && tr.k(n) <= tc.k_max;
  }
  const bool sum_ok = tr.times.back() == c.problem.T && std::abs(sum - c.problem.T) <= kSumTol * c.problem.T;

  // alternating residuals, 10x apart
  TimeController alt;
  alt.tol_k = 0.01;
  alt.k_min = 1e-8;
  alt.k_max = 1.0;
  alt.k_prev = 0.01;
  double worst = 1.0, naive = 1.0;
  for (int n = 0; n < 200; ++n) {
    const double r = n % 2 ? 10.0 : 1.0;
    const double k = next_timestep(alt, r);
    if (n >= kBurnIn) worst = std::max(worst, std::max(k / alt.k_prev, alt.k_prev / k));
    alt.k_prev = k;
  }
  naive = (alt.tol_k / 1.0) / (alt.tol_k / 10.0);

  // retune clamps
  TimeController base = alt;
  base.tol_k = 1.0;
  const bool clamps = retune_tolk(base, 1e-12, 1.0).tol_k == 5.0 && retune_tolk(base, 0.0, 1.0).tol_k == 5.0 &&
                      retune_tolk(base, 1e12, 1.0).tol_k == 0.2 && retune_tolk(base, 2.0, 1.0).tol_k == 0.5 &&
                      retune_tolk(base, 1.0, 1.0).tol_k == 1.0;
  const bool ok = sum_ok && bounded && worst < kMaxRatio && naive >= 10.0 - 1e-12 && clamps;
  return {ok, "sum k = T: " + std::string(sum_ok ? "yes" : "no") + " (" + std::to_string(tr.steps()) + " steps), clamps " +
                  (bounded ? "held" : "violated") + ", harmonic step ratio " + fmtg(worst, 3) + " (< " + fmtg(kMaxRatio) +
                  ") vs naive " + fmtg(naive, 3) + ", retune clamps " + (clamps ? "ok" : "wrong")};
}

const std::array<std::function<Outcome()>, 10> kCriteria = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                                            criterion6, criterion7, criterion8, criterion9, criterion10};

const std::array<const char*, 10> kNames = {
    "Galerkin orthogonality zero test", "k-scaling of E_k and E_c",      "error representation (linear Stokes)",
    "lid-cavity reference value",       "adaptive vs uniform dofs",      "efficiency indices",
    "Taylor-Green spatial order",       "refinement property suite",     "time-step controller properties",
    "channel global loop"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  bool all_pass = true;
  for (int i = 1; i <= 10; ++i) {
    if (only && i != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = kCriteria[i - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d [%s] %s: %s (%.1f s)\n", i, o.pass ? "PASS" : "FAIL", kNames[i - 1], o.detail.c_str(), secs);
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
