#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "ipcs/core.hpp"
#include "ipcs/linalg.hpp"
#include "ipcs/mesh.hpp"
#include "ipcs/quadrature.hpp"

namespace ipcs {

enum class SpaceKind { P2Vector, P1Scalar };

// ---------------------------------------------------------------------------
// Reference basis functions in barycentric coordinates.
//
// P2 local order: vertices 0..2, then the midpoint of local facet i (the edge
// opposite vertex i) at index 3 + i.

inline constexpr std::array<std::array<int, 2>, 3> facet_vertices{{{1, 2}, {2, 0}, {0, 1}}};

inline std::array<double, 6> p2_values(const std::array<double, 3>& l) {
  std::array<double, 6> v{};
  for (int i = 0; i < 3; ++i) {
    v[i] = l[i] * (2.0 * l[i] - 1.0);
    v[3 + i] = 4.0 * l[facet_vertices[i][0]] * l[facet_vertices[i][1]];
  }
  return v;
}

inline std::array<Vec2, 6> p2_gradients(const std::array<Vec2, 3>& gl, const std::array<double, 3>& l) {
  std::array<Vec2, 6> g{};
  for (int i = 0; i < 3; ++i) {
    g[i] = (4.0 * l[i] - 1.0) * gl[i];
    const int j = facet_vertices[i][0], k = facet_vertices[i][1];
    g[3 + i] = 4.0 * (l[j] * gl[k] + l[k] * gl[j]);
  }
  return g;
}

/// Second derivatives of the P2 basis (constant on a cell).
inline std::array<Mat2, 6> p2_hessians(const std::array<Vec2, 3>& gl) {
  std::array<Mat2, 6> h{};
  for (int i = 0; i < 3; ++i) {
    h[i] = 4.0 * outer(gl[i], gl[i]);
    const int j = facet_vertices[i][0], k = facet_vertices[i][1];
    h[3 + i] = 4.0 * (outer(gl[j], gl[k]) + outer(gl[k], gl[j]));
  }
  return h;
}

/// P3 Lagrange basis. Local order: vertices 0..2; on local facet i (vertices
/// j, k) the points nearer j then nearer k at 3 + 2i, 4 + 2i; centroid at 9.
inline std::array<double, 10> p3_values(const std::array<double, 3>& l) {
  std::array<double, 10> v{};
  for (int i = 0; i < 3; ++i) v[i] = 0.5 * l[i] * (3.0 * l[i] - 1.0) * (3.0 * l[i] - 2.0);
  for (int i = 0; i < 3; ++i) {
    const int j = facet_vertices[i][0], k = facet_vertices[i][1];
    v[3 + 2 * i] = 4.5 * l[j] * l[k] * (3.0 * l[j] - 1.0);
    v[4 + 2 * i] = 4.5 * l[j] * l[k] * (3.0 * l[k] - 1.0);
  }
  v[9] = 27.0 * l[0] * l[1] * l[2];
  return v;
}

inline std::array<Vec2, 10> p3_gradients(const std::array<Vec2, 3>& gl, const std::array<double, 3>& l) {
  std::array<Vec2, 10> g{};
  for (int i = 0; i < 3; ++i) g[i] = 0.5 * (27.0 * l[i] * l[i] - 18.0 * l[i] + 2.0) * gl[i];
  for (int i = 0; i < 3; ++i) {
    const int j = facet_vertices[i][0], k = facet_vertices[i][1];
    // d/dl_j [l_j l_k (3 l_j - 1)] = l_k (6 l_j - 1); d/dl_k = l_j (3 l_j - 1)
    g[3 + 2 * i] = 4.5 * (l[k] * (6.0 * l[j] - 1.0) * gl[j] + l[j] * (3.0 * l[j] - 1.0) * gl[k]);
    g[4 + 2 * i] = 4.5 * (l[j] * (6.0 * l[k] - 1.0) * gl[k] + l[k] * (3.0 * l[k] - 1.0) * gl[j]);
  }
  g[9] = 27.0 * (l[1] * l[2] * gl[0] + l[0] * l[2] * gl[1] + l[0] * l[1] * gl[2]);
  return g;
}

/// Barycentric coordinates of the P3 local nodes.
inline const std::array<std::array<double, 3>, 10>& p3_nodes() {
  static const auto nodes = [] {
    std::array<std::array<double, 3>, 10> n{};
    for (int i = 0; i < 3; ++i) {
      n[i] = {0, 0, 0};
      n[i][i] = 1.0;
      const int j = facet_vertices[i][0], k = facet_vertices[i][1];
      n[3 + 2 * i] = {0, 0, 0};
      n[3 + 2 * i][j] = 2.0 / 3.0;
      n[3 + 2 * i][k] = 1.0 / 3.0;
      n[4 + 2 * i] = {0, 0, 0};
      n[4 + 2 * i][j] = 1.0 / 3.0;
      n[4 + 2 * i][k] = 2.0 / 3.0;
    }
    n[9] = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    return n;
  }();
  return nodes;
}

/// Barycentric point on local facet f at parameter s in [0, 1], running from
/// facet vertex j to k.
inline std::array<double, 3> facet_point(int f, double s) {
  std::array<double, 3> l{0.0, 0.0, 0.0};
  l[facet_vertices[f][0]] = 1.0 - s;
  l[facet_vertices[f][1]] = s;
  return l;
}

// ---------------------------------------------------------------------------

/// Scalar P1 or vector P2 Lagrange space. Node numbering: vertices first,
/// then one node per facet (P2). Vector dofs interleave components:
/// dof = 2 node + component.
class Space {
 public:
  Space() = default;
  Space(std::shared_ptr<const Mesh> mesh, SpaceKind kind) : mesh_(std::move(mesh)), kind_(kind) {
    if (!mesh_) throw std::invalid_argument("Space: null mesh");
  }

  const Mesh& mesh() const { return *mesh_; }
  const std::shared_ptr<const Mesh>& mesh_ptr() const { return mesh_; }
  SpaceKind kind() const { return kind_; }
  bool is_vector() const { return kind_ == SpaceKind::P2Vector; }
  int components() const { return is_vector() ? 2 : 1; }

  int num_nodes() const { return is_vector() ? mesh_->num_vertices() + mesh_->num_facets() : mesh_->num_vertices(); }
  int num_dofs() const { return components() * num_nodes(); }
  int nodes_per_cell() const { return is_vector() ? 6 : 3; }
  int dofs_per_cell() const { return is_vector() ? 12 : 3; }

  std::array<int, 6> cell_nodes(int c) const {
    const auto& t = mesh_->cell(c);
    const auto& f = mesh_->cell_facets(c);
    const int nv = mesh_->num_vertices();
    return {t[0], t[1], t[2], nv + f[0], nv + f[1], nv + f[2]};
  }

  /// Global dofs of cell c in local order (local vector dof = 2 a + comp).
  std::vector<int> cell_dofs(int c) const {
    std::vector<int> d;
    if (is_vector()) {
      d.resize(12);
      const auto n = cell_nodes(c);
      for (int a = 0; a < 6; ++a) {
        d[2 * a] = 2 * n[a];
        d[2 * a + 1] = 2 * n[a] + 1;
      }
    } else {
      const auto& t = mesh_->cell(c);
      d = {t[0], t[1], t[2]};
    }
    return d;
  }

  Vec2 node_coordinate(int n) const {
    const int nv = mesh_->num_vertices();
    if (n < nv) return mesh_->vertex(n);
    const auto& f = mesh_->facets()[n - nv];
    return 0.5 * (mesh_->vertex(f.vertices[0]) + mesh_->vertex(f.vertices[1]));
  }

  Vec2 dof_coordinate(int dof) const { return node_coordinate(is_vector() ? dof / 2 : dof); }

  /// Nodes lying on boundary facets with the given marker.
  std::vector<int> boundary_nodes(int marker) const {
    std::vector<int> out;
    const int nv = mesh_->num_vertices();
    for (int f = 0; f < mesh_->num_facets(); ++f) {
      const auto& fc = mesh_->facets()[f];
      if (!fc.is_boundary() || fc.marker != marker) continue;
      out.push_back(fc.vertices[0]);
      out.push_back(fc.vertices[1]);
      if (is_vector()) out.push_back(nv + f);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  bool same_mesh(const Space& o) const { return mesh_ == o.mesh_; }

 private:
  std::shared_ptr<const Mesh> mesh_;
  SpaceKind kind_ = SpaceKind::P1Scalar;
};

inline Space build_space(std::shared_ptr<const Mesh> mesh, SpaceKind kind) { return Space(std::move(mesh), kind); }

/// Coefficient vector over a space.
struct Function {
  Space space;
  std::vector<double> values;

  Function() = default;
  explicit Function(Space s) : space(std::move(s)), values(space.num_dofs(), 0.0) {}
  Function(Space s, std::vector<double> v) : space(std::move(s)), values(std::move(v)) {
    if (static_cast<int>(values.size()) != space.num_dofs())
      throw std::invalid_argument("Function: coefficient length does not match the space");
  }
};

// ---------------------------------------------------------------------------
// Point location and evaluation

inline std::array<double, 3> barycentric(const Mesh& mesh, int c, const Vec2& x) {
  const auto& t = mesh.cell(c);
  const auto& gl = mesh.grad_lambda(c);
  const Vec2 centroid = (1.0 / 3.0) * (mesh.vertex(t[0]) + mesh.vertex(t[1]) + mesh.vertex(t[2]));
  const Vec2 d = x - centroid;
  return {1.0 / 3.0 + dot(gl[0], d), 1.0 / 3.0 + dot(gl[1], d), 1.0 / 3.0 + dot(gl[2], d)};
}

inline Vec2 to_physical(const Mesh& mesh, int c, const std::array<double, 3>& l) {
  const auto& t = mesh.cell(c);
  return l[0] * mesh.vertex(t[0]) + l[1] * mesh.vertex(t[1]) + l[2] * mesh.vertex(t[2]);
}

/// Bucket grid over cell bounding boxes.
class PointLocator {
 public:
  explicit PointLocator(const Mesh& mesh) : mesh_(&mesh) {
    lo_ = {1e300, 1e300};
    Vec2 hi{-1e300, -1e300};
    for (const auto& p : mesh.vertices()) {
      lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    n_ = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(mesh.num_cells()) / 2.0)));
    dx_ = (hi.x - lo_.x) / n_ + 1e-14;
    dy_ = (hi.y - lo_.y) / n_ + 1e-14;
    buckets_.assign(static_cast<std::size_t>(n_) * n_, {});
    for (int c = 0; c < mesh.num_cells(); ++c) {
      const auto& t = mesh.cell(c);
      double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
      for (int v : t) {
        x0 = std::min(x0, mesh.vertex(v).x); x1 = std::max(x1, mesh.vertex(v).x);
        y0 = std::min(y0, mesh.vertex(v).y); y1 = std::max(y1, mesh.vertex(v).y);
      }
      for (int j = index(y0, lo_.y, dy_); j <= index(y1, lo_.y, dy_); ++j)
        for (int i = index(x0, lo_.x, dx_); i <= index(x1, lo_.x, dx_); ++i) buckets_[j * n_ + i].push_back(c);
    }
  }

  /// Cell containing x (tolerance 1e-12 in barycentric coordinates).
  int locate(const Vec2& x) const {
    const double tol = 1e-12;
    if (x.x < lo_.x - 1e-12 || x.y < lo_.y - 1e-12) throw NotFound("point outside the mesh");
    const int i = index(x.x, lo_.x, dx_), j = index(x.y, lo_.y, dy_);
    int best = -1;
    double best_min = -1e300;
    for (int c : buckets_[j * n_ + i]) {
      const auto l = barycentric(*mesh_, c, x);
      const double m = std::min({l[0], l[1], l[2]});
      if (m > best_min) {
        best_min = m;
        best = c;
      }
    }
    if (best < 0 || best_min < -tol) throw NotFound("point outside the mesh");
    return best;
  }

 private:
  int index(double v, double lo, double d) const { return std::clamp(static_cast<int>((v - lo) / d), 0, n_ - 1); }

  const Mesh* mesh_;
  Vec2 lo_;
  int n_ = 1;
  double dx_ = 1.0, dy_ = 1.0;
  std::vector<std::vector<int>> buckets_;
};

/// Field value of fn in cell c at barycentric point l (1 or 2 components).
inline std::array<double, 2> evaluate_in_cell(const Function& fn, int c, const std::array<double, 3>& l) {
  const auto dofs = fn.space.cell_dofs(c);
  if (fn.space.is_vector()) {
    const auto phi = p2_values(l);
    std::array<double, 2> v{0.0, 0.0};
    for (int a = 0; a < 6; ++a) {
      v[0] += phi[a] * fn.values[dofs[2 * a]];
      v[1] += phi[a] * fn.values[dofs[2 * a + 1]];
    }
    return v;
  }
  return {l[0] * fn.values[dofs[0]] + l[1] * fn.values[dofs[1]] + l[2] * fn.values[dofs[2]], 0.0};
}

/// Exact finite element evaluation; throws NotFound outside the domain.
inline std::vector<double> evaluate(const Function& fn, const Vec2& x, const PointLocator& locator) {
  const int c = locator.locate(x);
  const auto v = evaluate_in_cell(fn, c, barycentric(fn.space.mesh(), c, x));
  if (fn.space.is_vector()) return {v[0], v[1]};
  return {v[0]};
}

inline std::vector<double> evaluate(const Function& fn, const Vec2& x) {
  return evaluate(fn, x, PointLocator(fn.space.mesh()));
}

/// Nodal interpolation of a closed-form field. Vector spaces take callables
/// returning Vec2, scalar spaces callables returning double.
template <class F>
Function interpolate(const F& expr, const Space& space) {
  Function fn(space);
  for (int n = 0; n < space.num_nodes(); ++n) {
    const Vec2 x = space.node_coordinate(n);
    if constexpr (std::is_convertible_v<std::invoke_result_t<const F&, Vec2>, Vec2>) {
      if (!space.is_vector()) throw std::invalid_argument("interpolate: vector field into scalar space");
      const Vec2 v = expr(x);
      fn.values[2 * n] = v.x;
      fn.values[2 * n + 1] = v.y;
    } else {
      if (space.is_vector()) throw std::invalid_argument("interpolate: scalar field into vector space");
      fn.values[n] = expr(x);
    }
  }
  return fn;
}

// ---------------------------------------------------------------------------
// Boundary conditions

/// Dirichlet data on the facets of one marker. Scalar targets read value().x.
struct DirichletBC {
  int marker = 0;
  SpaceKind space = SpaceKind::P2Vector;
  std::function<Vec2(const Vec2&, double)> value;

  static DirichletBC velocity(int marker, std::function<Vec2(const Vec2&, double)> g) {
    return {marker, SpaceKind::P2Vector, std::move(g)};
  }
  static DirichletBC pressure(int marker, std::function<double(const Vec2&, double)> g) {
    return {marker, SpaceKind::P1Scalar, [g = std::move(g)](const Vec2& x, double t) { return Vec2{g(x, t), 0.0}; }};
  }
};

/// Constrained dofs in ascending order with their values.
struct Constraints {
  std::vector<int> dofs;
  std::vector<double> values;

  bool empty() const { return dofs.empty(); }
  std::size_t size() const { return dofs.size(); }
};

/// Evaluates the BCs targeting this space at time t. Later BCs overwrite
/// earlier ones on shared dofs (corners).
inline Constraints dirichlet_values(const Space& space, const std::vector<DirichletBC>& bcs, double t) {
  std::map<int, double> vals;
  const auto present = space.mesh().boundary_markers();
  for (const auto& bc : bcs) {
    if (bc.space != space.kind()) continue;
    bool found = false;
    for (const auto& [key, m] : present)
      if (m == bc.marker) {
        found = true;
        break;
      }
    if (!found) throw std::invalid_argument("DirichletBC: marker " + std::to_string(bc.marker) + " not on mesh");
    for (int n : space.boundary_nodes(bc.marker)) {
      const Vec2 g = bc.value(space.node_coordinate(n), t);
      if (space.is_vector()) {
        vals[2 * n] = g.x;
        vals[2 * n + 1] = g.y;
      } else {
        vals[n] = g.x;
      }
    }
  }
  Constraints c;
  for (const auto& [d, v] : vals) {
    c.dofs.push_back(d);
    c.values.push_back(v);
  }
  return c;
}

inline std::vector<char> constrained_mask(int n, const Constraints& c) {
  std::vector<char> mask(n, 0);
  for (int d : c.dofs) mask[d] = 1;
  return mask;
}

/// Imposes constraints on A x = b. Rows become identity rows with the data
/// on the right-hand side; with `symmetric` the constrained columns are also
/// eliminated into b.
inline void apply_dirichlet(SparseMatrix& a, std::vector<double>& b, const Constraints& c, bool symmetric) {
  if (c.empty()) return;
  const int n = a.rows();
  std::vector<double> g(n, 0.0);
  const auto mask = constrained_mask(n, c);
  for (std::size_t i = 0; i < c.dofs.size(); ++i) g[c.dofs[i]] = c.values[i];
  auto& vals = a.values();
  const auto& rp = a.row_ptr();
  const auto& ci = a.col_idx();
  if (symmetric) {
    for (int i = 0; i < n; ++i) {
      if (mask[i]) continue;
      for (int p = rp[i]; p < rp[i + 1]; ++p)
        if (mask[ci[p]]) {
          b[i] -= vals[p] * g[ci[p]];
          vals[p] = 0.0;
        }
    }
  }
  for (int d : c.dofs) {
    a.set_identity_row(d);
    b[d] = g[d];
  }
}

/// Sets constrained entries of x to the data.
inline void set_constrained(std::vector<double>& x, const Constraints& c) {
  for (std::size_t i = 0; i < c.dofs.size(); ++i) x[c.dofs[i]] = c.values[i];
}

inline void zero_constrained(std::vector<double>& x, const Constraints& c) {
  for (int d : c.dofs) x[d] = 0.0;
}

// ---------------------------------------------------------------------------
// Assembly

enum class OperatorKind {
  VelocityMass,       // <v, u>
  PressureMass,       // <q, p>
  Viscous,            // 2 nu <eps(v), eps(u)>
  Convection,         // <v, (w . grad) u>
  AdjointConvection,  // <v, (u . grad) w>
  Divergence,         // <q, div u>
  Gradient,           // <div v, p>
  PressureGradient,   // <v, grad p>
  PressureLaplacian,  // <grad q, grad p>
  NeumannVelocity,    // <v, nu (grad u)^T n> on the Neumann facets
  NeumannPressure,    // <v, p n> on the Neumann facets
};

/// Taylor–Hood pair on one mesh with cached sparsity patterns and per-cell
/// scatter positions so repeated assembly skips all index searches.
class TaylorHood {
 public:
  explicit TaylorHood(std::shared_ptr<const Mesh> mesh)
      : mesh_(std::move(mesh)), V_(mesh_, SpaceKind::P2Vector), Q_(mesh_, SpaceKind::P1Scalar) {
    build_patterns();
  }

  const Mesh& mesh() const { return *mesh_; }
  const std::shared_ptr<const Mesh>& mesh_ptr() const { return mesh_; }
  const Space& velocity_space() const { return V_; }
  const Space& pressure_space() const { return Q_; }
  int nu() const { return V_.num_dofs(); }
  int np() const { return Q_.num_dofs(); }

  const SparseMatrix& vv_pattern() const { return vv_; }
  const SparseMatrix& pv_pattern() const { return pv_; }
  const SparseMatrix& vp_pattern() const { return vp_; }
  const SparseMatrix& pp_pattern() const { return pp_; }

  std::array<int, 12> velocity_dofs(int c) const {
    std::array<int, 12> d{};
    const auto n = V_.cell_nodes(c);
    for (int a = 0; a < 6; ++a) {
      d[2 * a] = 2 * n[a];
      d[2 * a + 1] = 2 * n[a] + 1;
    }
    return d;
  }
  const Cell& pressure_dofs(int c) const { return mesh_->cell(c); }

  // -- constant operators ---------------------------------------------------

  SparseMatrix mass() const {
    SparseMatrix m = vv_;
    const auto& rule = triangle_quadrature(4);
    for (int c = 0; c < mesh_->num_cells(); ++c) {
      std::array<double, 36> loc{};
      for (int q = 0; q < rule.size(); ++q) {
        const auto phi = p2_values(rule.points[q]);
        const double w = rule.weights[q] * mesh_->cell_area(c);
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < 6; ++b) loc[6 * a + b] += w * phi[a] * phi[b];
      }
      scatter_vv_scalar(m, c, loc);
    }
    return m;
  }

  SparseMatrix pressure_mass() const {
    SparseMatrix m = pp_;
    for (int c = 0; c < mesh_->num_cells(); ++c) {
      const double a = mesh_->cell_area(c);
      const int* pos = &pp_pos_[9 * c];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m.values()[pos[3 * i + j]] += a * (i == j ? 1.0 / 6.0 : 1.0 / 12.0);
    }
    return m;
  }

  SparseMatrix viscous(double nu) const {
    SparseMatrix m = vv_;
    const auto& rule = triangle_quadrature(2);
    for (int c = 0; c < mesh_->num_cells(); ++c) {
      const auto& gl = mesh_->grad_lambda(c);
      std::array<double, 144> loc{};
      for (int q = 0; q < rule.size(); ++q) {
        const auto g = p2_gradients(gl, rule.points[q]);
        const double w = nu * rule.weights[q] * mesh_->cell_area(c);
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < 6; ++b) {
            const double gg = dot(g[a], g[b]);
            const double ga[2] = {g[a].x, g[a].y}, gb[2] = {g[b].x, g[b].y};
            for (int i = 0; i < 2; ++i)
              for (int j = 0; j < 2; ++j)
                loc[12 * (2 * a + i) + 2 * b + j] += w * ((i == j ? gg : 0.0) + ga[j] * gb[i]);
          }
      }
      scatter_vv(m, c, loc);
    }
    return m;
  }

  SparseMatrix divergence() const {
    SparseMatrix m = pv_;
    const auto& rule = triangle_quadrature(2);
    for (int c = 0; c < mesh_->num_cells(); ++c) {
      const auto& gl = mesh_->grad_lambda(c);
      std::array<double, 36> loc{};
      for (int q = 0; q < rule.size(); ++q) {
        const auto& l = rule.points[q];
        const auto g = p2_gradients(gl, l);
        const double w = rule.weights[q] * mesh_->cell_area(c);
        for (int i = 0; i < 3; ++i)
          for (int b = 0; b < 6; ++b) {
            loc[12 * i + 2 * b] += w * l[i] * g[b].x;
            loc[12 * i + 2 * b + 1] += w * l[i] * g[b].y;
          }
      }
      const int* pos = &pv_pos_[36 * c];
      for (int k = 0; k < 36; ++k) m.values()[pos[k]] += loc[k];
    }
    return m;
  }

  /// <div v, p>; the transpose of divergence().
  SparseMatrix gradient() const { return transpose_to_vp(divergence()); }

  SparseMatrix pressure_gradient() const {
    SparseMatrix m = vp_;
    const auto& rule = triangle_quadrature(2);
    for (int c = 0; c < mesh_->num_cells(); ++c) {
      const auto& gl = mesh_->grad_lambda(c);
      std::array<double, 36> loc{};
      for (int q = 0; q < rule.size(); ++q) {
        const auto phi = p2_values(rule.points[q]);
        const double w = rule.weights[q] * mesh_->cell_area(c);
        for (int a = 0; a < 6; ++a)
          for (int j = 0; j < 3; ++j) {
            loc[3 * (2 * a) + j] += w * phi[a] * gl[j].x;
            loc[3 * (2 * a + 1) + j] += w * phi[a] * gl[j].y;
          }
      }
      const int* pos = &vp_pos_[36 * c];
      for (int k = 0; k < 36; ++k) m.values()[pos[k]] += loc[k];
    }
    return m;
  }

  SparseMatrix pressure_laplacian() const {
    SparseMatrix m = pp_;
    for (int c = 0; c < mesh_->num_cells(); ++c) {
      const auto& gl = mesh_->grad_lambda(c);
      const double a = mesh_->cell_area(c);
      const int* pos = &pp_pos_[9 * c];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m.values()[pos[3 * i + j]] += a * dot(gl[i], gl[j]);
    }
    return m;
  }

  // -- coefficient-dependent operators ----------------------------------------

  /// <v, (w . grad) u> for a P2 transport field w.
  SparseMatrix convection(const std::vector<double>& w) const {
    SparseMatrix m = vv_;
    add_convection(m, w, 1.0);
    return m;
  }

  /// m += s <v, (w . grad) u>
  void add_convection(SparseMatrix& m, const std::vector<double>& w, double s) const {
    check_velocity(w);
    const auto& rule = triangle_quadrature(5);
    for (int c = 0; c < mesh_->num_cells(); ++c) {
      const auto& gl = mesh_->grad_lambda(c);
      const auto d = velocity_dofs(c);
      std::array<double, 36> loc{};
      for (int q = 0; q < rule.size(); ++q) {
        const auto& l = rule.points[q];
        const auto phi = p2_values(l);
        const auto g = p2_gradients(gl, l);
        Vec2 wq;
        for (int a = 0; a < 6; ++a) wq += phi[a] * Vec2{w[d[2 * a]], w[d[2 * a + 1]]};
        const double wt = s * rule.weights[q] * mesh_->cell_area(c);
        for (int b = 0; b < 6; ++b) {
          const double wg = wt * dot(wq, g[b]);
          for (int a = 0; a < 6; ++a) loc[6 * a + b] += phi[a] * wg;
        }
      }
      scatter_vv_scalar(m, c, loc);
    }
  }

  /// <v, (u . grad) w> for a P2 field w.
  SparseMatrix adjoint_convection(const std::vector<double>& w) const {
    SparseMatrix m = vv_;
    add_adjoint_convection(m, w, 1.0);
    return m;
  }

  void add_adjoint_convection(SparseMatrix& m, const std::vector<double>& w, double s) const {
    check_velocity(w);
    const auto& rule = triangle_quadrature(5);
    for (int c = 0; c < mesh_->num_cells(); ++c) {
      const auto& gl = mesh_->grad_lambda(c);
      const auto d = velocity_dofs(c);
      std::array<double, 144> loc{};
      for (int q = 0; q < rule.size(); ++q) {
        const auto& l = rule.points[q];
        const auto phi = p2_values(l);
        const auto g = p2_gradients(gl, l);
        Mat2 gw;  // (i, j) = d w_i / d x_j
        for (int a = 0; a < 6; ++a) gw += outer(Vec2{w[d[2 * a]], w[d[2 * a + 1]]}, g[a]);
        const double gwa[2][2] = {{gw.a00, gw.a01}, {gw.a10, gw.a11}};
        const double wt = s * rule.weights[q] * mesh_->cell_area(c);
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < 6; ++b) {
            const double pp = wt * phi[a] * phi[b];
            for (int i = 0; i < 2; ++i)
              for (int j = 0; j < 2; ++j) loc[12 * (2 * a + i) + 2 * b + j] += pp * gwa[i][j];
          }
      }
      scatter_vv(m, c, loc);
    }
  }

  // -- Neumann boundary terms ----------------------------------------------------

  /// <v, nu (grad u)^T n> over facets with the given markers.
  SparseMatrix neumann_velocity(double nu, const std::vector<int>& neumann) const {
    SparseMatrix m = vv_;
    const auto& rule = gauss_line(3);
    for_each_marked_facet(neumann, [&](int c, int lf, const Vec2& n, double len) {
      const auto& gl = mesh_->grad_lambda(c);
      std::array<double, 144> loc{};
      const double nn[2] = {n.x, n.y};
      for (int q = 0; q < static_cast<int>(rule.points.size()); ++q) {
        const auto l = facet_point(lf, rule.points[q]);
        const auto phi = p2_values(l);
        const auto g = p2_gradients(gl, l);
        const double w = nu * rule.weights[q] * len;
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < 6; ++b) {
            const double gb[2] = {g[b].x, g[b].y};
            for (int i = 0; i < 2; ++i)
              for (int j = 0; j < 2; ++j) loc[12 * (2 * a + i) + 2 * b + j] += w * phi[a] * gb[i] * nn[j];
          }
      }
      scatter_vv(m, c, loc);
    });
    return m;
  }

  /// <v, p n> over facets with the given markers.
  SparseMatrix neumann_pressure(const std::vector<int>& neumann) const {
    SparseMatrix m = vp_;
    const auto& rule = gauss_line(3);
    for_each_marked_facet(neumann, [&](int c, int lf, const Vec2& n, double len) {
      std::array<double, 36> loc{};
      for (int q = 0; q < static_cast<int>(rule.points.size()); ++q) {
        const auto l = facet_point(lf, rule.points[q]);
        const auto phi = p2_values(l);
        const double w = rule.weights[q] * len;
        for (int a = 0; a < 6; ++a)
          for (int j = 0; j < 3; ++j) {
            loc[3 * (2 * a) + j] += w * phi[a] * l[j] * n.x;
            loc[3 * (2 * a + 1) + j] += w * phi[a] * l[j] * n.y;
          }
      }
      const int* pos = &vp_pos_[36 * c];
      for (int k = 0; k < 36; ++k) m.values()[pos[k]] += loc[k];
    });
    return m;
  }

  // -- functionals ----------------------------------------------------------------

  /// <v, f(., t)> for every velocity basis function.
  std::vector<double> load(const std::function<Vec2(const Vec2&, double)>& f, double t, int degree = 4) const {
    std::vector<double> b(nu(), 0.0);
    if (!f) return b;
    const auto& rule = triangle_quadrature(degree);
    for (int c = 0; c < mesh_->num_cells(); ++c) {
      const auto d = velocity_dofs(c);
      for (int q = 0; q < rule.size(); ++q) {
        const auto& l = rule.points[q];
        const auto phi = p2_values(l);
        const Vec2 fx = f(to_physical(*mesh_, c, l), t);
        const double w = rule.weights[q] * mesh_->cell_area(c);
        for (int a = 0; a < 6; ++a) {
          b[d[2 * a]] += w * phi[a] * fx.x;
          b[d[2 * a + 1]] += w * phi[a] * fx.y;
        }
      }
    }
    return b;
  }

  /// Calls body(cell, local facet, outward normal, length) for each boundary
  /// facet whose marker is listed.
  template <class F>
  void for_each_marked_facet(const std::vector<int>& markers, F&& body) const {
    for (const auto& f : mesh_->facets()) {
      if (!f.is_boundary() || std::find(markers.begin(), markers.end(), f.marker) == markers.end()) continue;
      const auto g = mesh_->cell_geometry(f.cells[0]);
      body(f.cells[0], f.local[0], g.normals[f.local[0]], g.lengths[f.local[0]]);
    }
  }

  /// Generic entry point keyed by operator kind.
  SparseMatrix assemble(OperatorKind kind, double nu = 1.0, const std::vector<double>* w = nullptr,
                        const std::vector<int>& neumann = {}) const {
    switch (kind) {
      case OperatorKind::VelocityMass: return mass();
      case OperatorKind::PressureMass: return pressure_mass();
      case OperatorKind::Viscous: return viscous(nu);
      case OperatorKind::Convection:
        if (!w) throw std::invalid_argument("assemble: convection needs a transport field");
        return convection(*w);
      case OperatorKind::AdjointConvection:
        if (!w) throw std::invalid_argument("assemble: adjoint convection needs a field");
        return adjoint_convection(*w);
      case OperatorKind::Divergence: return divergence();
      case OperatorKind::Gradient: return gradient();
      case OperatorKind::PressureGradient: return pressure_gradient();
      case OperatorKind::PressureLaplacian: return pressure_laplacian();
      case OperatorKind::NeumannVelocity: return neumann_velocity(nu, neumann);
      case OperatorKind::NeumannPressure: return neumann_pressure(neumann);
    }
    throw std::invalid_argument("assemble: unknown operator");
  }

  /// Same as assemble() but checks that the coefficient lives on this mesh.
  SparseMatrix assemble(OperatorKind kind, const Function& w, double nu = 1.0) const {
    if (!w.space.same_mesh(V_) || !w.space.is_vector())
      throw std::invalid_argument("assemble: coefficient field lives on a different mesh or space");
    return assemble(kind, nu, &w.values);
  }

 private:
  void check_velocity(const std::vector<double>& w) const {
    if (static_cast<int>(w.size()) != nu()) throw std::invalid_argument("TaylorHood: velocity field size mismatch");
  }

  void scatter_vv(SparseMatrix& m, int c, const std::array<double, 144>& loc) const {
    const int* pos = &vv_pos_[144 * static_cast<std::size_t>(c)];
    auto& v = m.values();
    for (int k = 0; k < 144; ++k) v[pos[k]] += loc[k];
  }

  /// Scalar 6x6 block applied to both components.
  void scatter_vv_scalar(SparseMatrix& m, int c, const std::array<double, 36>& loc) const {
    const int* pos = &vv_pos_[144 * static_cast<std::size_t>(c)];
    auto& v = m.values();
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b) {
        v[pos[12 * (2 * a) + 2 * b]] += loc[6 * a + b];
        v[pos[12 * (2 * a + 1) + 2 * b + 1]] += loc[6 * a + b];
      }
  }

  SparseMatrix transpose_to_vp(const SparseMatrix& d) const {
    SparseMatrix g = vp_;
    const auto& rp = d.row_ptr();
    const auto& ci = d.col_idx();
    for (int i = 0; i < d.rows(); ++i)
      for (int p = rp[i]; p < rp[i + 1]; ++p) g.add(ci[p], i, d.values()[p]);
    return g;
  }

  static SparseMatrix pattern_from_rows(int rows, int cols, std::vector<std::vector<int>>& adj) {
    std::vector<int> rp(rows + 1, 0), ci;
    for (int i = 0; i < rows; ++i) {
      auto& r = adj[i];
      std::sort(r.begin(), r.end());
      r.erase(std::unique(r.begin(), r.end()), r.end());
      ci.insert(ci.end(), r.begin(), r.end());
      rp[i + 1] = static_cast<int>(ci.size());
      std::vector<int>().swap(r);
    }
    return SparseMatrix(rows, cols, std::move(rp), std::move(ci));
  }

  void build_patterns() {
    const int nc = mesh_->num_cells();
    const int nn = V_.num_nodes();
    const int nv = mesh_->num_vertices();
    std::vector<std::vector<int>> node_adj(nn), vert_adj(nv), node_vert(nn), vert_node(nv);
    for (int c = 0; c < nc; ++c) {
      const auto n = V_.cell_nodes(c);
      const auto& t = mesh_->cell(c);
      for (int a = 0; a < 6; ++a) {
        for (int b = 0; b < 6; ++b) node_adj[n[a]].push_back(n[b]);
        for (int j = 0; j < 3; ++j) node_vert[n[a]].push_back(t[j]);
      }
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) vert_adj[t[i]].push_back(t[j]);
        for (int b = 0; b < 6; ++b) vert_node[t[i]].push_back(n[b]);
      }
    }
    auto expand_nodes = [](std::vector<int>& r) {
      std::sort(r.begin(), r.end());
      r.erase(std::unique(r.begin(), r.end()), r.end());
      std::vector<int> out;
      out.reserve(2 * r.size());
      for (int x : r) {
        out.push_back(2 * x);
        out.push_back(2 * x + 1);
      }
      r.swap(out);
    };
    std::vector<std::vector<int>> vv_rows(2 * nn), vp_rows(2 * nn), pv_rows(nv);
    for (int k = 0; k < nn; ++k) {
      expand_nodes(node_adj[k]);
      vv_rows[2 * k] = node_adj[k];
      vv_rows[2 * k + 1] = std::move(node_adj[k]);
      vp_rows[2 * k] = node_vert[k];
      vp_rows[2 * k + 1] = std::move(node_vert[k]);
    }
    for (int v = 0; v < nv; ++v) {
      expand_nodes(vert_node[v]);
      pv_rows[v] = std::move(vert_node[v]);
    }
    vv_ = pattern_from_rows(2 * nn, 2 * nn, vv_rows);
    vp_ = pattern_from_rows(2 * nn, nv, vp_rows);
    pv_ = pattern_from_rows(nv, 2 * nn, pv_rows);
    pp_ = pattern_from_rows(nv, nv, vert_adj);

    vv_pos_.resize(144 * static_cast<std::size_t>(nc));
    vp_pos_.resize(36 * static_cast<std::size_t>(nc));
    pv_pos_.resize(36 * static_cast<std::size_t>(nc));
    pp_pos_.resize(9 * static_cast<std::size_t>(nc));
    for (int c = 0; c < nc; ++c) {
      const auto d = velocity_dofs(c);
      const auto& t = mesh_->cell(c);
      for (int a = 0; a < 12; ++a) {
        for (int b = 0; b < 12; ++b) vv_pos_[144 * static_cast<std::size_t>(c) + 12 * a + b] = vv_.find(d[a], d[b]);
        for (int j = 0; j < 3; ++j) {
          vp_pos_[36 * static_cast<std::size_t>(c) + 3 * a + j] = vp_.find(d[a], t[j]);
          pv_pos_[36 * static_cast<std::size_t>(c) + 12 * j + a] = pv_.find(t[j], d[a]);
        }
      }
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) pp_pos_[9 * static_cast<std::size_t>(c) + 3 * i + j] = pp_.find(t[i], t[j]);
    }
  }

  std::shared_ptr<const Mesh> mesh_;
  Space V_;
  Space Q_;
  SparseMatrix vv_, vp_, pv_, pp_;
  std::vector<int> vv_pos_, vp_pos_, pv_pos_, pp_pos_;
};

/// Free-function form of TaylorHood::assemble for callers holding only the
/// discretization.
inline SparseMatrix assemble_operator(const TaylorHood& th, OperatorKind kind, double nu = 1.0,
                                      const std::vector<double>* w = nullptr, const std::vector<int>& neumann = {}) {
  return th.assemble(kind, nu, w, neumann);
}

/// <v, f> load vector.
inline std::vector<double> assemble_functional(const TaylorHood& th, const std::function<Vec2(const Vec2&, double)>& f,
                                               double t) {
  return th.load(f, t);
}

/// Velocity value and gradient of U in cell c at barycentric point l.
struct VelocitySample {
  Vec2 u;
  Mat2 grad;  // (i, j) = d u_i / d x_j
};

inline VelocitySample sample_velocity(const TaylorHood& th, const std::vector<double>& U, int c,
                                      const std::array<double, 3>& l) {
  const auto d = th.velocity_dofs(c);
  const auto phi = p2_values(l);
  const auto g = p2_gradients(th.mesh().grad_lambda(c), l);
  VelocitySample s;
  for (int a = 0; a < 6; ++a) {
    const Vec2 ua{U[d[2 * a]], U[d[2 * a + 1]]};
    s.u += phi[a] * ua;
    s.grad += outer(ua, g[a]);
  }
  return s;
}

inline double sample_pressure(const TaylorHood& th, const std::vector<double>& P, int c, const std::array<double, 3>& l) {
  const auto& t = th.mesh().cell(c);
  return l[0] * P[t[0]] + l[1] * P[t[1]] + l[2] * P[t[2]];
}

inline Vec2 pressure_gradient_in_cell(const TaylorHood& th, const std::vector<double>& P, int c) {
  const auto& t = th.mesh().cell(c);
  const auto& gl = th.mesh().grad_lambda(c);
  return P[t[0]] * gl[0] + P[t[1]] * gl[1] + P[t[2]] * gl[2];
}

/// Laplacian and gradient of the divergence of U on cell c (constant).
inline std::pair<Vec2, Vec2> velocity_second_derivatives(const TaylorHood& th, const std::vector<double>& U, int c) {
  const auto d = th.velocity_dofs(c);
  const auto h = p2_hessians(th.mesh().grad_lambda(c));
  Vec2 lap, graddiv;
  for (int a = 0; a < 6; ++a) {
    const double ux = U[d[2 * a]], uy = U[d[2 * a + 1]];
    const double tr = h[a].trace();
    lap += Vec2{ux * tr, uy * tr};
    // grad(div u) = (u1_xx + u2_xy, u1_xy + u2_yy)
    graddiv += Vec2{ux * h[a].a00 + uy * h[a].a01, ux * h[a].a01 + uy * h[a].a11};
  }
  return {lap, graddiv};
}

}  // namespace ipcs
