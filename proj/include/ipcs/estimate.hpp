#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <set>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ipcs/cases.hpp"
#include "ipcs/dual.hpp"
#include "ipcs/fem.hpp"
#include "ipcs/primal.hpp"
#include "ipcs/quadrature.hpp"

namespace ipcs {

// ---------------------------------------------------------------------------
// weak residual

/// c_i = <phi_i, (W . grad) U>, exact for P2 data (degree 5).
inline std::vector<double> convection_vector(const TaylorHood& th, const std::vector<double>& W,
                                             const std::vector<double>& U) {
  std::vector<double> out(th.nu(), 0.0);
  const auto& rule = triangle_quadrature(5);
  const auto& mesh = th.mesh();
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const auto d = th.velocity_dofs(c);
    const double area = mesh.cell_area(c);
    for (int q = 0; q < rule.size(); ++q) {
      const auto& l = rule.points[q];
      const auto w = sample_velocity(th, W, c, l).u;
      const auto g = sample_velocity(th, U, c, l).grad;
      const Vec2 cv = g * w;
      const auto phi = p2_values(l);
      const double s = rule.weights[q] * area;
      for (int a = 0; a < 6; ++a) {
        out[d[2 * a]] += s * phi[a] * cv.x;
        out[d[2 * a + 1]] += s * phi[a] * cv.y;
      }
    }
  }
  return out;
}

/// r^t tested with every basis function: momentum rows (velocity basis) and
/// continuity rows (pressure basis).
struct ResidualVectors {
  std::vector<double> mom;
  std::vector<double> con;
};

struct ResidualSample {
  double momentum = 0.0;
  double continuity = 0.0;
  double value() const { return momentum + continuity; }
};

/// Assembles r^t(phi) = <phi, f> - a(U; phi) - <phi, Udot> for all basis
/// functions, with the constant operators cached per mesh.
class ResidualAssembler {
 public:
  ResidualAssembler(std::shared_ptr<const TaylorHood> th, const Problem& p) : th_(std::move(th)), pb_(p) {
    M_ = th_->mass();
    KB_ = combine(1.0, th_->viscous(p.nu), -1.0, th_->neumann_velocity(p.nu, p.neumann_markers));
    BtNp_ = combine(1.0, th_->gradient(), -1.0, th_->neumann_pressure(p.neumann_markers));
    D_ = th_->divergence();
    const auto cv = dirichlet_values(th_->velocity_space(), p.velocity_bcs, 0.0);
    const auto cp = dirichlet_values(th_->pressure_space(), p.pressure_bcs, 0.0);
    vdofs_ = cv.dofs;
    pdofs_ = cp.dofs;
  }

  const TaylorHood& spaces() const { return *th_; }
  const Problem& problem() const { return pb_; }
  const std::vector<int>& velocity_constrained() const { return vdofs_; }
  const std::vector<int>& pressure_constrained() const { return pdofs_; }

  /// Residual at data (U, P, Udot, t).
  ResidualVectors operator()(const std::vector<double>& U, const std::vector<double>& P, const std::vector<double>& Udot,
                             double t) const {
    ResidualVectors r;
    r.mom = pb_.f ? th_->load(pb_.f, t) : std::vector<double>(th_->nu(), 0.0);
    M_.multiply_add(-1.0, Udot, r.mom);
    KB_.multiply_add(-1.0, U, r.mom);
    BtNp_.multiply_add(1.0, P, r.mom);
    if (pb_.convective) axpy(-1.0, convection_vector(*th_, U, U), r.mom);
    r.con = D_ * U;
    for (double& v : r.con) v = -v;
    return r;
  }

  ResidualSample sample(const ResidualVectors& r, const std::vector<double>& v, const std::vector<double>& q) const {
    return {dot(r.mom, v), dot(r.con, q)};
  }

  /// sqrt(b^T M^{-1} b) in the pair mass inner product, restricted to test
  /// functions vanishing on the Dirichlet boundaries.
  double riesz_norm(const ResidualVectors& r) const {
    if (!mass_ready_) build_block_mass();
    std::vector<double> b(r.mom);
    b.insert(b.end(), r.con.begin(), r.con.end());
    for (int d : vdofs_) b[d] = 0.0;
    for (int d : pdofs_) b[th_->nu() + d] = 0.0;
    return weighted_norm(block_mass_, b);
  }

 private:
  void build_block_mass() const {
    const auto mp = th_->pressure_mass();
    block_mass_ = SparseMatrix::block(&M_, nullptr, nullptr, &mp, th_->nu(), th_->np(), th_->nu(), th_->np());
    Constraints c;
    c.dofs = vdofs_;
    for (int d : pdofs_) c.dofs.push_back(th_->nu() + d);
    c.values.assign(c.dofs.size(), 0.0);
    std::vector<double> dummy(block_mass_.rows(), 0.0);
    apply_dirichlet(block_mass_, dummy, c, true);
    mass_ready_ = true;
  }

  std::shared_ptr<const TaylorHood> th_;
  Problem pb_;
  SparseMatrix M_, KB_, BtNp_, D_;
  std::vector<int> vdofs_, pdofs_;
  mutable SparseMatrix block_mass_;
  mutable bool mass_ready_ = false;
};

/// Value of r^t against one test pair (v, q).
inline ResidualSample weak_residual(const ResidualAssembler& ra, const std::vector<double>& U, const std::vector<double>& P,
                                    const std::vector<double>& Udot, double t, const std::vector<double>& v,
                                    const std::vector<double>& q) {
  return ra.sample(ra(U, P, Udot, t), v, q);
}

// ---------------------------------------------------------------------------
// patch extrapolation

namespace detail {

inline int monomial_count(int degree) { return (degree + 1) * (degree + 2) / 2; }

inline void monomials(int degree, double x, double y, double* out) {
  int k = 0;
  for (int d = 0; d <= degree; ++d)
    for (int j = 0; j <= d; ++j) out[k++] = std::pow(x, d - j) * std::pow(y, j);
}

struct PatchFit {
  std::vector<int> nodes;  // sample nodes
  Eigen::MatrixXd pinv;    // coefficients = pinv * values
  Vec2 center;
  double scale = 1.0;
  bool ok = false;
  bool two_ring = false;
};

}  // namespace detail

/// Lifts the dual to one polynomial degree higher by least-squares fits on
/// vertex patches: P2 velocity to continuous P3, P1 pressure to continuous
/// P2. Each operator is a sparse matrix, so lifting costs one matvec.
class Extrapolator {
  using Triplet = SparseMatrix::Triplet;

 public:
  /// Nodes on facets carrying one of the zero markers are set to zero
  /// (velocity and pressure separately), keeping the lifted dual in the
  /// test space.
  Extrapolator(std::shared_ptr<const TaylorHood> th, std::vector<int> velocity_zero_markers = {},
               std::vector<int> pressure_zero_markers = {})
      : th_(std::move(th)) {
    const auto& mesh = th_->mesh();
    nv_ = mesh.num_vertices();
    nf_ = mesh.num_facets();
    nc_ = mesh.num_cells();
    vc_ = mesh.vertex_cells();
    build_p3_numbering();
    build_velocity(velocity_zero_markers);
    build_pressure(pressure_zero_markers);
  }

  /// A lift that returns the field unchanged (E Z = Z), so every weight vanishes.
  static Extrapolator identity(std::shared_ptr<const TaylorHood> th) {
    Extrapolator e(std::move(th));
    e.ev_ = e.iv_;
    e.ep_ = e.ip_;
    return e;
  }

  int num_p3_nodes() const { return nv_ + 2 * nf_ + nc_; }
  const std::array<int, 10>& cell_p3_nodes(int c) const { return p3_cell_[c]; }
  int fallbacks() const { return fallback_; }
  int two_ring_patches() const { return two_ring_; }
  const SparseMatrix& velocity_operator() const { return ev_; }
  const SparseMatrix& pressure_operator() const { return ep_; }

  /// Extrapolated velocity at the P3 nodes (component interleaved).
  std::vector<double> extrapolate_velocity(const std::vector<double>& Z) const { return apply_vec(ev_, Z); }
  /// The P2 field itself sampled at the P3 nodes.
  std::vector<double> velocity_at_p3(const std::vector<double>& Z) const { return apply_vec(iv_, Z); }
  /// Extrapolated pressure at the P2 nodes.
  std::vector<double> extrapolate_pressure(const std::vector<double>& Y) const { return ep_ * Y; }
  std::vector<double> pressure_at_p2(const std::vector<double>& Y) const { return ip_ * Y; }

  /// Nodal P3 values of E Z - Z and P2 values of E Y - Y.
  std::pair<std::vector<double>, std::vector<double>> weights(const std::vector<double>& Z,
                                                              const std::vector<double>& Y) const {
    auto w = extrapolate_velocity(Z);
    axpy(-1.0, velocity_at_p3(Z), w);
    auto y = extrapolate_pressure(Y);
    axpy(-1.0, pressure_at_p2(Y), y);
    return {std::move(w), std::move(y)};
  }

  /// Evaluate a P3 vector nodal field (interleaved) in cell c at l.
  Vec2 eval_p3(const std::vector<double>& w, int c, const std::array<double, 3>& l) const {
    const auto phi = p3_values(l);
    const auto& n = p3_cell_[c];
    Vec2 v;
    for (int a = 0; a < 10; ++a) v += phi[a] * Vec2{w[2 * n[a]], w[2 * n[a] + 1]};
    return v;
  }
  Mat2 grad_p3(const std::vector<double>& w, int c, const std::array<double, 3>& l) const {
    const auto g = p3_gradients(th_->mesh().grad_lambda(c), l);
    const auto& n = p3_cell_[c];
    Mat2 m;
    for (int a = 0; a < 10; ++a) m += outer(Vec2{w[2 * n[a]], w[2 * n[a] + 1]}, g[a]);
    return m;
  }
  /// Evaluate a P2 scalar nodal field in cell c at l.
  double eval_p2(const std::vector<double>& y, int c, const std::array<double, 3>& l) const {
    const auto phi = p2_values(l);
    const auto n = th_->velocity_space().cell_nodes(c);
    double s = 0.0;
    for (int a = 0; a < 6; ++a) s += phi[a] * y[n[a]];
    return s;
  }

 private:
  static std::vector<double> apply_vec(const SparseMatrix& op, const std::vector<double>& Z) {
    const int n = op.cols();
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = Z[2 * i];
      y[i] = Z[2 * i + 1];
    }
    const auto ex = op * x, ey = op * y;
    std::vector<double> out(2 * op.rows());
    for (int i = 0; i < op.rows(); ++i) {
      out[2 * i] = ex[i];
      out[2 * i + 1] = ey[i];
    }
    return out;
  }

  void build_p3_numbering() {
    const auto& mesh = th_->mesh();
    p3_cell_.resize(nc_);
    for (int c = 0; c < nc_; ++c) {
      const auto& t = mesh.cell(c);
      auto& n = p3_cell_[c];
      for (int i = 0; i < 3; ++i) n[i] = t[i];
      for (int i = 0; i < 3; ++i) {
        const int f = mesh.cell_facets(c)[i];
        const auto& fv = mesh.facets()[f].vertices;
        const int j = t[facet_vertices[i][0]], k = t[facet_vertices[i][1]];
        n[3 + 2 * i] = nv_ + 2 * f + (j == fv[0] ? 0 : 1);
        n[4 + 2 * i] = nv_ + 2 * f + (k == fv[0] ? 0 : 1);
      }
      n[9] = nv_ + 2 * nf_ + c;
    }
  }

  /// Least-squares fit of the given degree on the patch of vertex v, with
  /// sample nodes taken from nodes_of(cell).
  template <class NodesOf, class CoordOf>
  detail::PatchFit fit_patch(int v, int degree, NodesOf nodes_of, CoordOf coord_of) const {
    const auto& mesh = th_->mesh();
    const int nb = detail::monomial_count(degree);
    auto try_cells = [&](const std::vector<int>& cells, bool ring2) {
      detail::PatchFit fit;
      std::set<int> s;
      for (int c : cells)
        for (int n : nodes_of(c)) s.insert(n);
      fit.nodes.assign(s.begin(), s.end());
      fit.center = mesh.vertex(v);
      fit.two_ring = ring2;
      double h = 0.0;
      for (int n : fit.nodes) h = std::max(h, norm(coord_of(n) - fit.center));
      fit.scale = h > 0 ? h : 1.0;
      const int m = static_cast<int>(fit.nodes.size());
      if (m < nb) return fit;
      Eigen::MatrixXd A(m, nb);
      std::vector<double> row(nb);
      for (int r = 0; r < m; ++r) {
        const Vec2 x = (1.0 / fit.scale) * (coord_of(fit.nodes[r]) - fit.center);
        detail::monomials(degree, x.x, x.y, row.data());
        for (int j = 0; j < nb; ++j) A(r, j) = row[j];
      }
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
      qr.setThreshold(1e-10);
      if (qr.rank() < nb) return fit;
      fit.pinv = qr.solve(Eigen::MatrixXd::Identity(m, m));
      fit.ok = true;
      return fit;
    };
    auto fit = try_cells(vc_[v], false);
    if (fit.ok) return fit;
    std::set<int> ring;
    for (int c : vc_[v])
      for (int u : mesh.cell(c))
        for (int c2 : vc_[u]) ring.insert(c2);
    return try_cells(std::vector<int>(ring.begin(), ring.end()), true);
  }

  /// Adds weight * (patch polynomial of v evaluated at x) into the row.
  /// Fallback patches use the unlifted field: fallback(cell, x) terms.
  template <class Fallback>
  void add_patch_eval(std::vector<Triplet>& t, int row, double weight, const detail::PatchFit& fit, int degree,
                      const Vec2& x, Fallback fallback) const {
    if (!fit.ok) {
      fallback(t, row, weight);
      return;
    }
    const int nb = detail::monomial_count(degree);
    std::vector<double> mono(nb);
    const Vec2 xs = (1.0 / fit.scale) * (x - fit.center);
    detail::monomials(degree, xs.x, xs.y, mono.data());
    for (std::size_t s = 0; s < fit.nodes.size(); ++s) {
      double w = 0.0;
      for (int j = 0; j < nb; ++j) w += mono[j] * fit.pinv(j, static_cast<int>(s));
      if (w != 0.0) t.push_back({row, fit.nodes[s], weight * w});
    }
  }

  std::vector<char> zero_vertices_and_facets(const std::vector<int>& markers, std::vector<char>& facet_zero) const {
    const auto& mesh = th_->mesh();
    std::vector<char> vz(nv_, 0);
    facet_zero.assign(nf_, 0);
    for (int f = 0; f < nf_; ++f) {
      const auto& fc = mesh.facets()[f];
      if (!fc.is_boundary() || std::find(markers.begin(), markers.end(), fc.marker) == markers.end()) continue;
      facet_zero[f] = 1;
      vz[fc.vertices[0]] = vz[fc.vertices[1]] = 1;
    }
    return vz;
  }

  void build_velocity(const std::vector<int>& zero_markers) {
    const auto& mesh = th_->mesh();
    const auto& V = th_->velocity_space();
    std::vector<detail::PatchFit> fits(nv_);
    auto nodes_of = [&](int c) { return V.cell_nodes(c); };
    auto coord_of = [&](int n) { return V.node_coordinate(n); };
    for (int v = 0; v < nv_; ++v) {
      fits[v] = fit_patch(v, 3, nodes_of, coord_of);
      if (!fits[v].ok) ++fallback_;
      else if (fits[v].two_ring) ++two_ring_;
    }
    std::vector<char> fz;
    const auto vz = zero_vertices_and_facets(zero_markers, fz);
    std::vector<Triplet> te, ti;
    // P2 interpolation at a barycentric point of cell c
    auto p2_at = [&](std::vector<Triplet>& t, int row, double weight, int c, const std::array<double, 3>& l) {
      const auto phi = p2_values(l);
      const auto n = V.cell_nodes(c);
      for (int a = 0; a < 6; ++a)
        if (phi[a] != 0.0) t.push_back({row, n[a], weight * phi[a]});
    };
    const auto& nodes = p3_nodes();
    std::vector<char> done(num_p3_nodes(), 0);
    for (int c = 0; c < nc_; ++c) {
      const auto& t = mesh.cell(c);
      const auto& gn = p3_cell_[c];
      for (int a = 0; a < 10; ++a) {
        const int row = gn[a];
        if (done[row]) continue;
        done[row] = 1;
        const auto& l = nodes[a];
        const Vec2 x = to_physical(mesh, c, l);
        p2_at(ti, row, 1.0, c, l);
        std::vector<int> patches;
        bool zero = false;
        if (a < 3) {
          patches = {t[a]};
          zero = vz[t[a]];
        } else if (a < 9) {
          const int i = (a - 3) / 2;
          patches = {t[facet_vertices[i][0]], t[facet_vertices[i][1]]};
          zero = fz[mesh.cell_facets(c)[i]];
        } else {
          patches = {t[0], t[1], t[2]};
        }
        if (zero) continue;
        const double w = 1.0 / static_cast<double>(patches.size());
        for (int v : patches)
          add_patch_eval(te, row, w, fits[v], 3, x,
                         [&](std::vector<Triplet>& tt, int r, double ww) { p2_at(tt, r, ww, c, l); });
      }
    }
    ev_ = SparseMatrix::from_triplets(num_p3_nodes(), V.num_nodes(), std::move(te));
    iv_ = SparseMatrix::from_triplets(num_p3_nodes(), V.num_nodes(), std::move(ti));
  }

  void build_pressure(const std::vector<int>& zero_markers) {
    const auto& mesh = th_->mesh();
    const auto& V = th_->velocity_space();  // P2 node numbering
    std::vector<detail::PatchFit> fits(nv_);
    auto nodes_of = [&](int c) {
      const auto& t = mesh.cell(c);
      return std::array<int, 3>{t[0], t[1], t[2]};
    };
    auto coord_of = [&](int n) { return mesh.vertex(n); };
    for (int v = 0; v < nv_; ++v) {
      fits[v] = fit_patch(v, 2, nodes_of, coord_of);
      if (!fits[v].ok) ++fallback_;
      else if (fits[v].two_ring) ++two_ring_;
    }
    std::vector<char> fz;
    const auto vz = zero_vertices_and_facets(zero_markers, fz);
    std::vector<Triplet> te, ti;
    auto p1_at = [&](std::vector<Triplet>& t, int row, double weight, int c, const std::array<double, 3>& l) {
      const auto& cv = mesh.cell(c);
      for (int a = 0; a < 3; ++a)
        if (l[a] != 0.0) t.push_back({row, cv[a], weight * l[a]});
    };
    std::vector<char> done(V.num_nodes(), 0);
    for (int c = 0; c < nc_; ++c) {
      const auto& t = mesh.cell(c);
      const auto n = V.cell_nodes(c);
      for (int a = 0; a < 6; ++a) {
        const int row = n[a];
        if (done[row]) continue;
        done[row] = 1;
        std::array<double, 3> l{0, 0, 0};
        std::vector<int> patches;
        bool zero = false;
        if (a < 3) {
          l[a] = 1.0;
          patches = {t[a]};
          zero = vz[t[a]];
        } else {
          const int i = a - 3;
          l[facet_vertices[i][0]] = l[facet_vertices[i][1]] = 0.5;
          patches = {t[facet_vertices[i][0]], t[facet_vertices[i][1]]};
          zero = fz[mesh.cell_facets(c)[i]];
        }
        p1_at(ti, row, 1.0, c, l);
        if (zero) continue;
        const Vec2 x = to_physical(mesh, c, l);
        const double w = 1.0 / static_cast<double>(patches.size());
        for (int v : patches)
          add_patch_eval(te, row, w, fits[v], 2, x,
                         [&](std::vector<Triplet>& tt, int r, double ww) { p1_at(tt, r, ww, c, l); });
      }
    }
    ep_ = SparseMatrix::from_triplets(V.num_nodes(), nv_, std::move(te));
    ip_ = SparseMatrix::from_triplets(V.num_nodes(), nv_, std::move(ti));
  }

  std::shared_ptr<const TaylorHood> th_;
  int nv_ = 0, nf_ = 0, nc_ = 0;
  std::vector<std::vector<int>> vc_;
  std::vector<std::array<int, 10>> p3_cell_;
  SparseMatrix ev_, iv_, ep_, ip_;
  int fallback_ = 0;
  int two_ring_ = 0;
};

// ---------------------------------------------------------------------------
// cellwise residual terms

/// Signed cell contributions at one time slice, tested with a lifted
/// weight (w, wy):
///   [0] <w, Udot + (U.grad)U - div sigma - f>_K
///   [1] 1/2 <w, [sigma n]>_{dK interior}
///   [2] <w, nu grad U n>_{dK on Gamma_N}
///   [3] <wy, div U>_K
/// Their negated total equals r^t(w, wy).
inline std::vector<std::array<double, 4>> signed_cell_terms(const TaylorHood& th, const Problem& p,
                                                            const Extrapolator& ex, const std::vector<double>& U,
                                                            const std::vector<double>& P, const std::vector<double>& Udot,
                                                            double t, const std::vector<double>& w,
                                                            const std::vector<double>& wy) {
  const auto& mesh = th.mesh();
  const int nc = mesh.num_cells();
  std::vector<std::array<double, 4>> out(nc, {0.0, 0.0, 0.0, 0.0});
  const auto& rule = triangle_quadrature(6);
  const double nu = p.nu;
  parallel_for(nc, [&](int c) {
    const double area = mesh.cell_area(c);
    const auto [lap, graddiv] = velocity_second_derivatives(th, U, c);
    const Vec2 gp = pressure_gradient_in_cell(th, P, c);
    double s1 = 0.0, s4 = 0.0;
    for (int q = 0; q < rule.size(); ++q) {
      const auto& l = rule.points[q];
      const auto su = sample_velocity(th, U, c, l);
      const Vec2 ud = sample_velocity(th, Udot, c, l).u;
      Vec2 strong = ud - nu * lap - nu * graddiv + gp;
      if (p.convective) strong += su.grad * su.u;
      if (p.f) strong -= p.f(to_physical(mesh, c, l), t);
      const double wq = rule.weights[q] * area;
      s1 += wq * dot(ex.eval_p3(w, c, l), strong);
      s4 += wq * ex.eval_p2(wy, c, l) * su.grad.trace();
    }
    out[c][0] = s1;
    out[c][3] = s4;
  });
  const auto& line = gauss_line(3);
  auto sigma = [&](int c, const std::array<double, 3>& l) {
    const auto su = sample_velocity(th, U, c, l);
    const double pr = sample_pressure(th, P, c, l);
    Mat2 s = nu * (su.grad + su.grad.transposed());
    s.a00 -= pr;
    s.a11 -= pr;
    return s;
  };
  for (const auto& f : mesh.facets()) {
    const int cp = f.cells[0];
    const auto gp = mesh.cell_geometry(cp);
    const int lf = f.local[0];
    const Vec2 n = gp.normals[lf];
    const double len = gp.lengths[lf];
    if (!f.is_boundary()) {
      const int cm = f.cells[1];
      double j = 0.0;
      for (std::size_t q = 0; q < line.points.size(); ++q) {
        const auto lp = facet_point(lf, line.points[q]);
        const Vec2 x = to_physical(mesh, cp, lp);
        const auto lm = barycentric(mesh, cm, x);
        const Mat2 ds = sigma(cp, lp) + (-1.0) * sigma(cm, lm);
        j += line.weights[q] * len * dot(ex.eval_p3(w, cp, lp), ds * n);
      }
      out[cp][1] += 0.5 * j;
      out[cm][1] += 0.5 * j;
    } else if (std::find(p.neumann_markers.begin(), p.neumann_markers.end(), f.marker) != p.neumann_markers.end()) {
      double b = 0.0;
      for (std::size_t q = 0; q < line.points.size(); ++q) {
        const auto lp = facet_point(lf, line.points[q]);
        const auto su = sample_velocity(th, U, cp, lp);
        b += line.weights[q] * len * dot(ex.eval_p3(w, cp, lp), nu * (su.grad * n));
      }
      out[cp][2] += b;
    }
  }
  return out;
}

/// r^t(w, wy) evaluated directly from the weak form with a lifted test pair
/// (independent of the cellwise split).
inline double weak_residual_lifted(const TaylorHood& th, const Problem& p, const Extrapolator& ex,
                                   const std::vector<double>& U, const std::vector<double>& P,
                                   const std::vector<double>& Udot, double t, const std::vector<double>& w,
                                   const std::vector<double>& wy) {
  const auto& mesh = th.mesh();
  const auto& rule = triangle_quadrature(6);
  double r = 0.0;
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const double area = mesh.cell_area(c);
    for (int q = 0; q < rule.size(); ++q) {
      const auto& l = rule.points[q];
      const auto su = sample_velocity(th, U, c, l);
      const Vec2 ud = sample_velocity(th, Udot, c, l).u;
      const double pr = sample_pressure(th, P, c, l);
      const Vec2 wv = ex.eval_p3(w, c, l);
      const Mat2 gw = ex.grad_p3(w, c, l);
      Vec2 src = -1.0 * ud;
      if (p.convective) src -= su.grad * su.u;
      if (p.f) src += p.f(to_physical(mesh, c, l), t);
      const Mat2 eu = 0.5 * (su.grad + su.grad.transposed());
      const Mat2 ew = 0.5 * (gw + gw.transposed());
      double v = dot(wv, src) - 2.0 * p.nu * contract(eu, ew) + pr * gw.trace();
      v -= ex.eval_p2(wy, c, l) * su.grad.trace();
      r += rule.weights[q] * area * v;
    }
  }
  const auto& line = gauss_line(3);
  th.for_each_marked_facet(p.neumann_markers, [&](int c, int lf, const Vec2& n, double len) {
    for (std::size_t q = 0; q < line.points.size(); ++q) {
      const auto l = facet_point(lf, line.points[q]);
      const auto su = sample_velocity(th, U, c, l);
      const double pr = sample_pressure(th, P, c, l);
      const Vec2 g = p.nu * (su.grad.transposed() * n) - pr * n;
      r += line.weights[q] * len * dot(ex.eval_p3(w, c, l), g);
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// estimates

struct EstimateBreakdown {
  double E_h = 0.0;
  double E_k = 0.0;
  double E_c_mom = 0.0;
  double E_c_con = 0.0;
  std::vector<double> indicators;  // eta_K
  int extrapolation_fallbacks = 0;

  double E_c() const { return E_c_mom + E_c_con; }
  double total() const { return E_h + E_k + E_c_mom + E_c_con; }
};

/// Primal data at the midpoint of interval n: (U^m, P^m, slope, t_m).
struct SliceData {
  std::vector<double> U, P, Udot;
  double t = 0.0;
};

inline SliceData midpoint_slice(const PrimalTrajectory& tr, int n) {
  SliceData s;
  s.U = tr.U[n - 1];
  s.P = tr.P[n - 1];
  for (std::size_t i = 0; i < s.U.size(); ++i) s.U[i] = 0.5 * (s.U[i] + tr.U[n][i]);
  for (std::size_t i = 0; i < s.P.size(); ++i) s.P[i] = 0.5 * (s.P[i] + tr.P[n][i]);
  s.Udot = tr.slope(n);
  s.t = 0.5 * (tr.times[n - 1] + tr.times[n]);
  return s;
}

/// Primal data at node n with the slope of the interval ending there (the
/// first interval for n = 0).
inline SliceData node_slice(const PrimalTrajectory& tr, int n) {
  SliceData s;
  s.U = tr.U[n];
  s.P = tr.P[n];
  s.Udot = tr.steps() >= 1 ? tr.slope(std::max(n, 1)) : std::vector<double>(s.U.size(), 0.0);
  s.t = tr.times[n];
  return s;
}

inline void check_aligned(const PrimalTrajectory& pr, const DualTrajectory& du) {
  if (!pr.th || pr.th != du.th || pr.times != du.times)
    throw std::invalid_argument("estimate: primal and dual trajectories are not on the same mesh and time grid");
}

/// Cell indicators and E_h (midpoint rule in time).
inline std::pair<std::vector<double>, double> eta_h(const PrimalTrajectory& pr, const DualTrajectory& du, const Problem& p,
                                                    const Extrapolator& ex) {
  check_aligned(pr, du);
  const auto& th = *pr.th;
  std::vector<double> eta(th.mesh().num_cells(), 0.0);
  for (int n = 1; n <= pr.steps(); ++n) {
    const auto s = midpoint_slice(pr, n);
    const auto [w, wy] = ex.weights(du.interval_Z(n), du.interval_Y(n));
    const auto terms = signed_cell_terms(th, p, ex, s.U, s.P, s.Udot, s.t, w, wy);
    const double kn = pr.k(n);
    for (std::size_t c = 0; c < eta.size(); ++c)
      eta[c] += kn * (std::abs(terms[c][0]) + std::abs(terms[c][1]) + std::abs(terms[c][2]) + std::abs(terms[c][3]));
  }
  double e = 0.0;
  for (double v : eta) e += v;
  return {std::move(eta), e};
}

inline std::pair<std::vector<double>, double> eta_h(const PrimalTrajectory& pr, const DualTrajectory& du,
                                                    const Problem& p) {
  const Extrapolator ex(pr.th, p.velocity_dirichlet_markers(), [&] {
    std::vector<int> m;
    for (const auto& bc : p.pressure_bcs) m.push_back(bc.marker);
    return m;
  }());
  return eta_h(pr, du, p, ex);
}

/// E_k = 1/2 sum_n k_n |r^t_n(Z(t_n)) - r^t_{n-1}(Z(t_{n-1}))|.
inline double eta_k(const PrimalTrajectory& pr, const DualTrajectory& du, const ResidualAssembler& ra) {
  check_aligned(pr, du);
  const int M = pr.steps();
  if (M < 1) return 0.0;
  std::vector<double> r(M + 1);
  parallel_for(M + 1, [&](int n) {
    const auto s = node_slice(pr, n);
    const int i = du.node_interval(n);
    r[n] = ra.sample(ra(s.U, s.P, s.Udot, s.t), du.interval_Z(i), du.interval_Y(i)).value();
  });
  double e = 0.0;
  for (int n = 1; n <= M; ++n) e += 0.5 * pr.k(n) * std::abs(r[n] - r[n - 1]);
  return e;
}

/// (E_c_mom, E_c_con): midpoint residual against the dual constant of each
/// interval, absolute values summed over intervals.
inline std::pair<double, double> eta_c(const PrimalTrajectory& pr, const DualTrajectory& du, const ResidualAssembler& ra) {
  check_aligned(pr, du);
  const int M = pr.steps();
  std::vector<ResidualSample> rs(M + 1);
  parallel_for(M, [&](int i) {
    const int n = i + 1;
    const auto s = midpoint_slice(pr, n);
    rs[n] = ra.sample(ra(s.U, s.P, s.Udot, s.t), du.interval_Z(n), du.interval_Y(n));
  });
  double mom = 0.0, con = 0.0;
  for (int n = 1; n <= M; ++n) {
    mom += pr.k(n) * std::abs(rs[n].momentum);
    con += pr.k(n) * std::abs(rs[n].continuity);
  }
  return {mom, con};
}

/// ||R^n|| at node n (slope from the interval ending at t_n).
inline double riesz_residual_norm(const PrimalTrajectory& pr, int n, const ResidualAssembler& ra) {
  const auto s = node_slice(pr, n);
  return ra.riesz_norm(ra(s.U, s.P, s.Udot, s.t));
}

/// All parts of the estimate for one primal/dual pair.
inline EstimateBreakdown estimate(const PrimalTrajectory& pr, const DualTrajectory& du, const Problem& p) {
  check_aligned(pr, du);
  std::vector<int> pm;
  for (const auto& bc : p.pressure_bcs) pm.push_back(bc.marker);
  const Extrapolator ex(pr.th, p.velocity_dirichlet_markers(), pm);
  const ResidualAssembler ra(pr.th, p);
  EstimateBreakdown b;
  std::tie(b.indicators, b.E_h) = eta_h(pr, du, p, ex);
  b.E_k = eta_k(pr, du, ra);
  std::tie(b.E_c_mom, b.E_c_con) = eta_c(pr, du, ra);
  b.extrapolation_fallbacks = ex.fallbacks();
  return b;
}

/// E / |reference - computed|; infinity when the error vanishes.
inline double efficiency_index(double E, double goal, double reference) {
  const double err = std::abs(reference - goal);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return E / err;
}

}  // namespace ipcs
