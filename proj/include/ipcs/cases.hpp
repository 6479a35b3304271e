#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipcs/fem.hpp"
#include "ipcs/mesh.hpp"
#include "ipcs/quadrature.hpp"

namespace ipcs {

using VectorField = std::function<Vec2(const Vec2&, double)>;
using ScalarField = std::function<double(const Vec2&, double)>;

/// Everything the solvers need to know about one flow problem.
struct Problem {
  std::string name;
  std::function<Mesh(double)> mesh_factory;  // argument: cell size target
  double default_h = 0.1;
  double nu = 1.0;
  double T = 1.0;
  double max_step = 0.0;                  // step cap for the controller; 0 means T/20
  VectorField f;                         // empty means zero
  std::vector<DirichletBC> velocity_bcs;  // applied in order, last wins
  std::vector<DirichletBC> pressure_bcs;
  std::vector<int> neumann_markers;       // do-nothing boundary Gamma_N
  VectorField u0;                         // empty means zero
  ScalarField p0;                         // initial pressure guess, empty means zero
  bool convective = true;                 // false: Stokes
  VectorField exact_u;                    // only for manufactured cases
  ScalarField exact_p;

  double step_cap() const { return max_step > 0.0 ? max_step : T / 20.0; }

  /// Checks the parameters and that every BC marker exists on the mesh.
  void validate(const Mesh& mesh) const {
    if (!(nu > 0.0)) throw std::invalid_argument("Problem: nu must be positive");
    if (!(T >= 0.0)) throw std::invalid_argument("Problem: T must be nonnegative");
    std::set<int> present;
    for (const auto& f : mesh.facets())
      if (f.marker != 0) present.insert(f.marker);
    auto check = [&](int m) {
      if (!present.count(m)) throw std::invalid_argument("Problem: marker " + std::to_string(m) + " not on mesh");
    };
    for (const auto& bc : velocity_bcs) check(bc.marker);
    for (const auto& bc : pressure_bcs) check(bc.marker);
    for (int m : neumann_markers) check(m);
  }

  std::shared_ptr<const Mesh> make_mesh(double h) const { return std::make_shared<const Mesh>(mesh_factory(h)); }

  std::vector<int> velocity_dirichlet_markers() const {
    std::set<int> s;
    for (const auto& bc : velocity_bcs) s.insert(bc.marker);
    return {s.begin(), s.end()};
  }
};

/// Linear goal functional M(u) = int_0^T M^t(u(t)) dt + M^T(u(T)). The
/// built-in goals act on the velocity only.
struct GoalFunctional {
  enum class Kind { BoundaryShear, WeightedVolume };

  Kind kind = Kind::WeightedVolume;
  std::string name;
  // boundary shear: nu (du1/dx2 + du2/dx1) on the listed facets
  std::vector<int> markers;
  double shear_nu = 0.0;
  // weighted volume: <u, weight>
  std::function<Vec2(const Vec2&)> weight;
  int quadrature_degree = 6;
  std::function<Vec2(const Vec2&)> terminal;  // psi^T, empty means zero
  double scale = 1.0;

  /// Load vector l with M^t(U) = l . U for every velocity coefficient vector U.
  std::vector<double> rhs(const TaylorHood& th) const {
    std::vector<double> l(th.nu(), 0.0);
    if (kind == Kind::BoundaryShear) {
      bool any = false;
      const auto& line = gauss_line(3);
      th.for_each_marked_facet(markers, [&](int c, int lf, const Vec2&, double len) {
        any = true;
        const auto d = th.velocity_dofs(c);
        const auto& gl = th.mesh().grad_lambda(c);
        for (std::size_t q = 0; q < line.points.size(); ++q) {
          const auto g = p2_gradients(gl, facet_point(lf, line.points[q]));
          const double w = scale * shear_nu * line.weights[q] * len;
          for (int a = 0; a < 6; ++a) {
            l[d[2 * a]] += w * g[a].y;
            l[d[2 * a + 1]] += w * g[a].x;
          }
        }
      });
      if (!any) throw std::invalid_argument("GoalFunctional: goal boundary not resolved by mesh facets");
    } else {
      if (!weight) throw std::invalid_argument("GoalFunctional: missing weight");
      auto f = [this](const Vec2& x, double) { return weight(x); };
      l = th.load(f, 0.0, quadrature_degree);
      for (double& v : l) v *= scale;
    }
    return l;
  }

  /// Load vector of the terminal part (zero for the built-in goals).
  std::vector<double> terminal_rhs(const TaylorHood& th) const {
    if (!terminal) return std::vector<double>(th.nu(), 0.0);
    auto f = [this](const Vec2& x, double) { return terminal(x); };
    auto l = th.load(f, 0.0, quadrature_degree);
    for (double& v : l) v *= scale;
    return l;
  }

  bool has_terminal() const { return static_cast<bool>(terminal); }

  GoalFunctional scaled(double a) const {
    GoalFunctional g = *this;
    g.scale *= a;
    return g;
  }
};

/// Dual right-hand side for the pair space: velocity block from the goal,
/// pressure block zero.
inline std::vector<double> dual_rhs(const GoalFunctional& goal, const TaylorHood& th) {
  auto l = goal.rhs(th);
  l.resize(th.nu() + th.np(), 0.0);
  return l;
}

struct Case {
  Problem problem;
  GoalFunctional goal;
  std::optional<double> reference;
};

namespace cavity {
inline constexpr double gauss_r = 0.15;
inline constexpr Vec2 gauss_center{0.75, 0.75};
/// Printed normalisation constant; it does not make the weight integrate to
/// one for any of the usual exponent conventions, so it is not used.
inline constexpr double printed_c = 27.571034;

/// c with int_{[0,1]^2} c exp(-|x - xbar|^2 / (2 r^2)) dx = 1 (about 7.8014).
inline double gauss_c() {
  const double s = gauss_r * std::sqrt(2.0);
  auto axis = [&](double m) { return 0.5 * std::sqrt(std::numbers::pi) * s * (std::erf((1.0 - m) / s) + std::erf(m / s)); };
  static const double c = 1.0 / (axis(gauss_center.x) * axis(gauss_center.y));
  return c;
}
}  // namespace cavity

inline double cavity_weight(const Vec2& x) {
  const Vec2 d = x - cavity::gauss_center;
  return cavity::gauss_c() * std::exp(-dot(d, d) / (2.0 * cavity::gauss_r * cavity::gauss_r));
}

inline Case case_channel_flap() {
  Case c;
  auto& p = c.problem;
  p.name = "channel-flap";
  p.mesh_factory = [](double h) { return channel_flap_mesh(h); };
  p.default_h = 0.1;
  p.nu = 0.002;
  p.T = 2.5;
  // IPCS at h = 0.05 diverges with k = 0.1 and T/20 = 0.125 is unstable even at h = 0.1
  p.max_step = 0.025;
  const auto zero = [](const Vec2&, double) { return Vec2{}; };
  p.velocity_bcs = {DirichletBC::velocity(markers::wall, zero), DirichletBC::velocity(markers::flap_top, zero)};
  p.pressure_bcs = {DirichletBC::pressure(markers::inflow, [](const Vec2&, double) { return 1.0; }),
                    DirichletBC::pressure(markers::outflow, [](const Vec2&, double) { return 0.0; })};
  p.neumann_markers = {markers::inflow, markers::outflow};
  c.goal.kind = GoalFunctional::Kind::BoundaryShear;
  c.goal.name = "M1";
  c.goal.markers = {markers::flap_top};
  c.goal.shear_nu = p.nu;
  c.reference = 0.0200;
  return c;
}

inline Case case_lid_cavity() {
  Case c;
  auto& p = c.problem;
  p.name = "lid-cavity";
  p.mesh_factory = [](double h) { return unit_square_mesh(std::max(1, static_cast<int>(std::ceil(1.0 / h - 1e-9)))); };
  p.default_h = 1.0 / 8.0;
  p.nu = 1.0;
  p.T = 1.0;
  const auto zero = [](const Vec2&, double) { return Vec2{}; };
  p.velocity_bcs = {DirichletBC::velocity(markers::bottom, zero), DirichletBC::velocity(markers::left, zero),
                    DirichletBC::velocity(markers::right, zero),
                    DirichletBC::velocity(markers::top, [](const Vec2& x, double) { return Vec2{x.x * (1.0 - x.x), 0.0}; })};
  p.pressure_bcs = {DirichletBC::pressure(markers::bottom, [](const Vec2&, double) { return 0.0; })};
  c.goal.kind = GoalFunctional::Kind::WeightedVolume;
  c.goal.name = "M2";
  c.goal.weight = [](const Vec2& x) { return Vec2{0.0, cavity_weight(x)}; };
  c.reference = -0.039389;
  return c;
}

namespace taylor_green {
inline constexpr double nu = 0.01;
inline Vec2 velocity(const Vec2& x, double t) {
  constexpr double pi = std::numbers::pi;
  const double F = std::exp(-2.0 * pi * pi * nu * t);
  return {-std::cos(pi * x.x) * std::sin(pi * x.y) * F, std::sin(pi * x.x) * std::cos(pi * x.y) * F};
}
inline double pressure(const Vec2& x, double t) {
  constexpr double pi = std::numbers::pi;
  const double F = std::exp(-2.0 * pi * pi * nu * t);
  return -0.25 * (std::cos(2.0 * pi * x.x) + std::cos(2.0 * pi * x.y)) * F * F;
}
}  // namespace taylor_green

/// Decaying vortex on the unit square with the exact solution imposed as
/// Dirichlet data for both velocity and pressure.
inline Case case_taylor_green() {
  Case c;
  auto& p = c.problem;
  p.name = "taylor-green";
  p.mesh_factory = [](double h) { return unit_square_mesh(std::max(1, static_cast<int>(std::ceil(1.0 / h - 1e-9)))); };
  p.default_h = 1.0 / 8.0;
  p.nu = taylor_green::nu;
  p.T = 0.1;
  for (int m : {markers::bottom, markers::right, markers::top, markers::left}) {
    p.velocity_bcs.push_back(DirichletBC::velocity(m, taylor_green::velocity));
    p.pressure_bcs.push_back(DirichletBC::pressure(m, taylor_green::pressure));
  }
  p.u0 = [](const Vec2& x, double) { return taylor_green::velocity(x, 0.0); };
  p.p0 = [](const Vec2& x, double) { return taylor_green::pressure(x, 0.0); };
  p.exact_u = taylor_green::velocity;
  p.exact_p = taylor_green::pressure;
  c.goal.kind = GoalFunctional::Kind::WeightedVolume;
  c.goal.name = "mean-u1";
  c.goal.weight = [](const Vec2& x) { return Vec2{x.y, 0.0}; };
  return c;
}

inline Case case_by_name(const std::string& name) {
  if (name == "channel-flap") return case_channel_flap();
  if (name == "lid-cavity") return case_lid_cavity();
  if (name == "taylor-green") return case_taylor_green();
  throw std::invalid_argument("unknown case: " + name);
}

/// L2 norm of U - u_exact(., t), degree-6 quadrature.
inline double l2_velocity_error(const TaylorHood& th, const std::vector<double>& U, const VectorField& exact, double t) {
  const auto& rule = triangle_quadrature(6);
  double s = 0.0;
  for (int c = 0; c < th.mesh().num_cells(); ++c) {
    const double a = th.mesh().cell_area(c);
    for (int q = 0; q < rule.size(); ++q) {
      const auto& l = rule.points[q];
      const Vec2 e = sample_velocity(th, U, c, l).u - exact(to_physical(th.mesh(), c, l), t);
      s += rule.weights[q] * a * dot(e, e);
    }
  }
  return std::sqrt(s);
}

}  // namespace ipcs
