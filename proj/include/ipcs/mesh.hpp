#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ipcs/core.hpp"

namespace ipcs {

using Cell = std::array<int, 3>;

/// Edge of the triangulation. cells[0] is the plus side and always holds the
/// smaller cell index; cells[1] is -1 on the boundary.
struct Facet {
  std::array<int, 2> vertices{-1, -1};  // sorted ascending
  std::array<int, 2> cells{-1, -1};
  std::array<int, 2> local{-1, -1};  // local facet index within each cell
  int marker = 0;                    // 0 for interior facets

  bool is_boundary() const { return cells[1] < 0; }
};

struct CellGeometry {
  double area = 0.0;
  double diameter = 0.0;            // longest edge
  std::array<Vec2, 3> normals{};    // outward unit normal of local facet i (opposite vertex i)
  std::array<double, 3> lengths{};  // length of local facet i
};

struct InteriorFacetPair {
  int facet = -1;
  int plus = -1;
  int minus = -1;
  Vec2 normal;  // outward from the plus cell
};

/// A cell produced by green (closure) bisection keeps its parent triangle so
/// that a later regular cut can replace the pair by a red refinement.
struct GreenParent {
  Cell vertices{};
};

inline std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

/// Boundary marker assignment by edge key.
using EdgeMarkers = std::unordered_map<std::uint64_t, int>;

namespace markers {
// unit square
inline constexpr int bottom = 1;
inline constexpr int right = 2;
inline constexpr int top = 3;
inline constexpr int left = 4;
// channel with flap
inline constexpr int inflow = 1;
inline constexpr int outflow = 2;
inline constexpr int wall = 3;
inline constexpr int flap_top = 4;
}  // namespace markers

/// Conforming triangle mesh. Immutable after construction; refinement returns
/// a new mesh.
class Mesh {
 public:
  Mesh() = default;

  /// `green[c]` indexes into `green_parents` or is -1.
  Mesh(std::vector<Vec2> vertices, std::vector<Cell> cells, const EdgeMarkers& boundary_markers,
       int generation = 0, std::vector<int> green = {}, std::vector<GreenParent> green_parents = {})
      : vertices_(std::move(vertices)),
        cells_(std::move(cells)),
        generation_(generation),
        green_(std::move(green)),
        green_parents_(std::move(green_parents)) {
    if (green_.empty()) green_.assign(cells_.size(), -1);
    if (green_.size() != cells_.size()) throw std::invalid_argument("Mesh: green ancestry size mismatch");
    build(boundary_markers);
  }

  /// Builds the marker map from a classifier of boundary edges.
  static Mesh from_classifier(std::vector<Vec2> vertices, std::vector<Cell> cells,
                              const std::function<int(const Vec2&, const Vec2&)>& classify) {
    std::unordered_map<std::uint64_t, int> counts;
    for (const auto& c : cells)
      for (int i = 0; i < 3; ++i) ++counts[edge_key(c[(i + 1) % 3], c[(i + 2) % 3])];
    EdgeMarkers m;
    for (const auto& c : cells) {
      for (int i = 0; i < 3; ++i) {
        const int a = c[(i + 1) % 3], b = c[(i + 2) % 3];
        const auto key = edge_key(a, b);
        if (counts[key] == 1) m[key] = classify(vertices[a], vertices[b]);
      }
    }
    return Mesh(std::move(vertices), std::move(cells), m);
  }

  const std::vector<Vec2>& vertices() const { return vertices_; }
  const std::vector<Cell>& cells() const { return cells_; }
  const std::vector<Facet>& facets() const { return facets_; }
  const Vec2& vertex(int v) const { return vertices_[v]; }
  const Cell& cell(int c) const { return cells_[c]; }
  const std::array<int, 3>& cell_facets(int c) const { return cell_facets_[c]; }
  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_cells() const { return static_cast<int>(cells_.size()); }
  int num_facets() const { return static_cast<int>(facets_.size()); }
  int generation() const { return generation_; }
  const std::vector<int>& green() const { return green_; }
  const std::vector<GreenParent>& green_parents() const { return green_parents_; }

  /// Facet index for the edge (a, b), or -1.
  int find_facet(int a, int b) const {
    const auto it = facet_index_.find(edge_key(a, b));
    return it == facet_index_.end() ? -1 : it->second;
  }

  /// Boundary marker of edge (a, b); 0 if interior or absent.
  int edge_marker(int a, int b) const {
    const int f = find_facet(a, b);
    return f < 0 ? 0 : facets_[f].marker;
  }

  EdgeMarkers boundary_markers() const {
    EdgeMarkers m;
    for (const auto& f : facets_)
      if (f.is_boundary()) m[edge_key(f.vertices[0], f.vertices[1])] = f.marker;
    return m;
  }

  /// Gradients of the barycentric coordinates (constant per cell).
  const std::array<Vec2, 3>& grad_lambda(int c) const { return grad_lambda_[c]; }

  double cell_area(int c) const { return area_[c]; }

  double signed_area(int c) const {
    const auto& t = cells_[c];
    return 0.5 * cross(vertices_[t[1]] - vertices_[t[0]], vertices_[t[2]] - vertices_[t[0]]);
  }

  CellGeometry cell_geometry(int c) const {
    if (c < 0 || c >= num_cells()) throw std::invalid_argument("cell_geometry: cell id out of range");
    CellGeometry g;
    g.area = area_[c];
    const auto& t = cells_[c];
    for (int i = 0; i < 3; ++i) {
      const Vec2 a = vertices_[t[(i + 1) % 3]];
      const Vec2 b = vertices_[t[(i + 2) % 3]];
      const Vec2 e = b - a;
      const double len = norm(e);
      g.lengths[i] = len;
      g.diameter = std::max(g.diameter, len);
      // counterclockwise cells: outward normal is the edge rotated clockwise
      g.normals[i] = Vec2{e.y / len, -e.x / len};
    }
    return g;
  }

  double diameter(int c) const {
    const auto& t = cells_[c];
    double h = 0.0;
    for (int i = 0; i < 3; ++i) h = std::max(h, norm(vertices_[t[(i + 1) % 3]] - vertices_[t[i]]));
    return h;
  }

  double max_diameter() const {
    double h = 0.0;
    for (int c = 0; c < num_cells(); ++c) h = std::max(h, diameter(c));
    return h;
  }

  double area() const {
    double a = 0.0;
    for (double x : area_) a += x;
    return a;
  }

  /// Smallest interior angle over all cells (radians).
  double min_angle() const {
    double m = 4.0;
    for (const auto& t : cells_) {
      for (int i = 0; i < 3; ++i) {
        const Vec2 a = vertices_[t[(i + 1) % 3]] - vertices_[t[i]];
        const Vec2 b = vertices_[t[(i + 2) % 3]] - vertices_[t[i]];
        m = std::min(m, std::atan2(std::abs(cross(a, b)), dot(a, b)));
      }
    }
    return m;
  }

  std::vector<InteriorFacetPair> facet_jump_pairs() const {
    std::vector<InteriorFacetPair> out;
    for (int f = 0; f < num_facets(); ++f) {
      const auto& fc = facets_[f];
      if (fc.is_boundary()) continue;
      const auto g = cell_geometry(fc.cells[0]);
      out.push_back({f, fc.cells[0], fc.cells[1], g.normals[fc.local[0]]});
    }
    return out;
  }

  /// Cells containing each vertex.
  std::vector<std::vector<int>> vertex_cells() const {
    std::vector<std::vector<int>> vc(vertices_.size());
    for (int c = 0; c < num_cells(); ++c)
      for (int v : cells_[c]) vc[v].push_back(c);
    return vc;
  }

  /// Conformity audit: positive areas, no facet shared by more than two
  /// cells, marked boundary, and no vertex in the open interior of a facet
  /// seen from one side only (the signature of a hanging node).
  bool is_conforming(std::string* why = nullptr) const {
    auto fail = [&](const std::string& msg) {
      if (why) *why = msg;
      return false;
    };
    for (int c = 0; c < num_cells(); ++c)
      if (!(signed_area(c) > 0.0)) return fail("non-positive cell area at cell " + std::to_string(c));
    for (const auto& f : facets_) {
      if (f.cells[0] < 0) return fail("facet without cells");
      if (f.is_boundary() && f.marker == 0) return fail("unmarked boundary facet");
    }
    std::vector<std::vector<int>> grid_cells;
    double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300;
    for (const auto& p : vertices_) {
      xmin = std::min(xmin, p.x); xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y); ymax = std::max(ymax, p.y);
    }
    const int nb = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(vertices_.size())) / 2));
    const double dx = (xmax - xmin) / nb + 1e-300, dy = (ymax - ymin) / nb + 1e-300;
    grid_cells.assign(static_cast<std::size_t>(nb) * nb, {});
    auto bucket = [&](const Vec2& p) {
      const int i = std::clamp(static_cast<int>((p.x - xmin) / dx), 0, nb - 1);
      const int j = std::clamp(static_cast<int>((p.y - ymin) / dy), 0, nb - 1);
      return j * nb + i;
    };
    for (int v = 0; v < num_vertices(); ++v) grid_cells[bucket(vertices_[v])].push_back(v);
    for (const auto& f : facets_) {
      if (!f.is_boundary()) continue;
      const Vec2 a = vertices_[f.vertices[0]], b = vertices_[f.vertices[1]];
      const double len = norm(b - a);
      const int i0 = std::clamp(static_cast<int>((std::min(a.x, b.x) - xmin) / dx), 0, nb - 1);
      const int i1 = std::clamp(static_cast<int>((std::max(a.x, b.x) - xmin) / dx), 0, nb - 1);
      const int j0 = std::clamp(static_cast<int>((std::min(a.y, b.y) - ymin) / dy), 0, nb - 1);
      const int j1 = std::clamp(static_cast<int>((std::max(a.y, b.y) - ymin) / dy), 0, nb - 1);
      for (int j = j0; j <= j1; ++j)
        for (int i = i0; i <= i1; ++i)
          for (int v : grid_cells[j * nb + i]) {
            if (v == f.vertices[0] || v == f.vertices[1]) continue;
            const Vec2 p = vertices_[v];
            const double s = dot(p - a, b - a) / (len * len);
            if (s <= 1e-12 || s >= 1.0 - 1e-12) continue;
            const double dist = std::abs(cross(b - a, p - a)) / len;
            if (dist <= 1e-12 * len) return fail("hanging node " + std::to_string(v));
          }
    }
    return true;
  }

 private:
  void build(const EdgeMarkers& boundary_markers) {
    const int nc = num_cells();
    cell_facets_.assign(nc, {-1, -1, -1});
    facets_.clear();
    facet_index_.clear();
    facet_index_.reserve(static_cast<std::size_t>(nc) * 2);
    for (int c = 0; c < nc; ++c) {
      const auto& t = cells_[c];
      for (int v : t)
        if (v < 0 || v >= num_vertices()) throw std::invalid_argument("Mesh: vertex index out of range");
      for (int i = 0; i < 3; ++i) {
        int a = t[(i + 1) % 3], b = t[(i + 2) % 3];
        const auto key = edge_key(a, b);
        auto it = facet_index_.find(key);
        if (it == facet_index_.end()) {
          Facet f;
          f.vertices = {std::min(a, b), std::max(a, b)};
          f.cells = {c, -1};
          f.local = {i, -1};
          facet_index_.emplace(key, static_cast<int>(facets_.size()));
          cell_facets_[c][i] = static_cast<int>(facets_.size());
          facets_.push_back(f);
        } else {
          Facet& f = facets_[it->second];
          if (f.cells[1] >= 0) throw std::invalid_argument("Mesh: edge shared by more than two cells");
          f.cells[1] = c;
          f.local[1] = i;
          cell_facets_[c][i] = it->second;
        }
      }
    }
    for (auto& f : facets_) {
      if (!f.is_boundary()) continue;
      const auto it = boundary_markers.find(edge_key(f.vertices[0], f.vertices[1]));
      if (it == boundary_markers.end() || it->second == 0)
        throw std::invalid_argument("Mesh: boundary facet without marker");
      f.marker = it->second;
    }
    grad_lambda_.resize(nc);
    area_.resize(nc);
    for (int c = 0; c < nc; ++c) {
      const auto& t = cells_[c];
      const Vec2 p0 = vertices_[t[0]], p1 = vertices_[t[1]], p2 = vertices_[t[2]];
      const double twice = cross(p1 - p0, p2 - p0);
      if (!(twice > 0.0)) throw std::invalid_argument("Mesh: cell " + std::to_string(c) + " is not counterclockwise");
      area_[c] = 0.5 * twice;
      // grad lambda_i = rot(edge opposite i) / (2 area)
      const std::array<Vec2, 3> p{p0, p1, p2};
      for (int i = 0; i < 3; ++i) {
        const Vec2 e = p[(i + 2) % 3] - p[(i + 1) % 3];
        grad_lambda_[c][i] = Vec2{-e.y / twice, e.x / twice};
      }
    }
  }

  std::vector<Vec2> vertices_;
  std::vector<Cell> cells_;
  std::vector<Facet> facets_;
  std::vector<std::array<int, 3>> cell_facets_;
  std::unordered_map<std::uint64_t, int> facet_index_;
  std::vector<std::array<Vec2, 3>> grad_lambda_;
  std::vector<double> area_;
  int generation_ = 0;
  std::vector<int> green_;
  std::vector<GreenParent> green_parents_;
};

/// Structured mesh of [0,1]^2 with 2n^2 triangles, diagonals from lower left
/// to upper right.
inline Mesh unit_square_mesh(int n) {
  if (n < 1) throw std::invalid_argument("unit_square_mesh: n must be >= 1");
  std::vector<Vec2> v;
  v.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) v.emplace_back(static_cast<double>(i) / n, static_cast<double>(j) / n);
  std::vector<Cell> cells;
  cells.reserve(2 * static_cast<std::size_t>(n) * n);
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      cells.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      cells.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  return Mesh::from_classifier(std::move(v), std::move(cells), [](const Vec2& a, const Vec2& b) {
    const Vec2 m = 0.5 * (a + b);
    if (m.y < 1e-12) return markers::bottom;
    if (m.y > 1.0 - 1e-12) return markers::top;
    if (m.x < 1e-12) return markers::left;
    return markers::right;
  });
}

namespace channel {
inline constexpr double length = 4.0;
inline constexpr double height = 1.0;
inline constexpr double flap_x0 = 1.4;
inline constexpr double flap_x1 = 1.8;
inline constexpr double flap_height = 0.6;
}  // namespace channel

/// Channel [0,4]x[0,1] minus the flap [1.4,1.8]x[0,0.6]. Grid spacing is
/// 0.2/m with m = ceil(0.2/resolution) so the flap corners are vertices.
inline Mesh channel_flap_mesh(double resolution) {
  if (!(resolution > 0.0)) throw std::invalid_argument("channel_flap_mesh: resolution must be positive");
  if (resolution > 0.2 * (1.0 + 1e-12))
    throw std::invalid_argument("channel_flap_mesh: resolution too coarse to resolve the flap");
  const int m = std::max(1, static_cast<int>(std::ceil(0.2 / resolution - 1e-9)));
  const int nx = 20 * m, ny = 5 * m;
  const int fx0 = 7 * m, fx1 = 9 * m, fy = 3 * m;
  const double s = 0.2 / m;
  auto in_flap = [&](int i, int j) { return i >= fx0 && i < fx1 && j < fy; };
  std::vector<int> id(static_cast<std::size_t>(nx + 1) * (ny + 1), -1);
  std::vector<Vec2> v;
  std::vector<Cell> cells;
  auto vid = [&](int i, int j) {
    int& slot = id[static_cast<std::size_t>(j) * (nx + 1) + i];
    if (slot < 0) {
      slot = static_cast<int>(v.size());
      v.emplace_back(i * s, j * s);
    }
    return slot;
  };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      if (in_flap(i, j)) continue;
      const int a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
      cells.push_back({a, b, c});
      cells.push_back({a, c, d});
    }
  // snap the coordinates that must be exact
  for (auto& p : v) {
    for (double x : {channel::flap_x0, channel::flap_x1, channel::length, 0.0})
      if (std::abs(p.x - x) < 1e-9) p.x = x;
    for (double y : {channel::flap_height, channel::height, 0.0})
      if (std::abs(p.y - y) < 1e-9) p.y = y;
  }
  return Mesh::from_classifier(std::move(v), std::move(cells), [](const Vec2& a, const Vec2& b) {
    const Vec2 m = 0.5 * (a + b);
    if (m.x < 1e-12) return markers::inflow;
    if (m.x > channel::length - 1e-12) return markers::outflow;
    if (std::abs(a.y - channel::flap_height) < 1e-12 && std::abs(b.y - channel::flap_height) < 1e-12 &&
        m.x > channel::flap_x0 && m.x < channel::flap_x1)
      return markers::flap_top;
    return markers::wall;
  });
}

}  // namespace ipcs
