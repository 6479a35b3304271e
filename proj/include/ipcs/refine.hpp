#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "ipcs/mesh.hpp"

namespace ipcs {

struct MarkedSet {
  std::vector<int> cells;  // ascending
  double fraction = 1.0;
};

/// Marks the ceil(fraction * N) cells with the largest indicators; ties go to
/// the smaller cell id.
inline MarkedSet mark_fixed_fraction(const std::vector<double>& indicators, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("mark_fixed_fraction: fraction must lie in (0, 1]");
  for (double v : indicators)
    if (v < 0.0 || std::isnan(v)) throw std::invalid_argument("mark_fixed_fraction: negative indicator");
  const int n = static_cast<int>(indicators.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return indicators[a] > indicators[b]; });
  // guard against 0.3 * 10 = 3.0000000000000004
  const int count = std::min(n, static_cast<int>(std::ceil(fraction * n - 1e-9)));
  MarkedSet m;
  m.fraction = fraction;
  m.cells.assign(order.begin(), order.begin() + count);
  std::sort(m.cells.begin(), m.cells.end());
  return m;
}

namespace detail {

/// Mutable triangulation used while refining.
class RefineBuilder {
 public:
  /// Without `keep_green` the closure ancestry of the input is dropped.
  explicit RefineBuilder(const Mesh& mesh, bool keep_green = true)
      : verts_(mesh.vertices()), markers_(mesh.boundary_markers()) {
    if (keep_green) parents_ = mesh.green_parents();
    tris_.reserve(mesh.num_cells() * 3);
    for (int c = 0; c < mesh.num_cells(); ++c) add(mesh.cell(c), keep_green ? mesh.green()[c] : -1);
  }

  int num_tris() const { return static_cast<int>(tris_.size()); }
  const Vec2& vertex(int v) const { return verts_[v]; }
  bool alive(int t) const { return alive_[t]; }
  const Cell& tri(int t) const { return tris_[t]; }
  int green(int t) const { return green_[t]; }

  /// Other live triangle across edge (a, b), or -1.
  int neighbor(int t, int a, int b) const {
    const auto it = edge_tris_.find(edge_key(a, b));
    if (it == edge_tris_.end()) return -1;
    for (int s : it->second)
      if (s >= 0 && s != t) return s;
    return -1;
  }

  int midpoint(int a, int b) {
    const auto key = edge_key(a, b);
    if (const auto it = mids_.find(key); it != mids_.end()) return it->second;
    const int m = static_cast<int>(verts_.size());
    verts_.push_back(0.5 * (verts_[a] + verts_[b]));
    mids_.emplace(key, m);
    if (const auto it = markers_.find(key); it != markers_.end()) {
      const int marker = it->second;
      markers_[edge_key(a, m)] = marker;
      markers_[edge_key(m, b)] = marker;
    }
    return m;
  }

  bool has_midpoint(int a, int b) const { return mids_.count(edge_key(a, b)) != 0; }

  int add(const Cell& c, int green = -1) {
    const int t = static_cast<int>(tris_.size());
    tris_.push_back(c);
    alive_.push_back(true);
    green_.push_back(green);
    for (int i = 0; i < 3; ++i) {
      auto& slot = edge_tris_.try_emplace(edge_key(c[(i + 1) % 3], c[(i + 2) % 3]), std::array<int, 2>{-1, -1}).first->second;
      if (slot[0] < 0) slot[0] = t;
      else if (slot[1] < 0) slot[1] = t;
      else throw std::logic_error("refine: edge shared by more than two triangles");
    }
    return t;
  }

  void remove(int t) {
    alive_[t] = false;
    const auto& c = tris_[t];
    for (int i = 0; i < 3; ++i) {
      auto it = edge_tris_.find(edge_key(c[(i + 1) % 3], c[(i + 2) % 3]));
      if (it == edge_tris_.end()) continue;
      for (int& s : it->second)
        if (s == t) s = -1;
      if (it->second[0] < 0 && it->second[1] < 0) edge_tris_.erase(it);
    }
  }

  /// Splits t along its local edge i (opposite vertex i).
  std::array<int, 2> bisect(int t, int i, int green = -1) {
    const Cell c = tris_[t];
    const int p = c[i], q = c[(i + 1) % 3], r = c[(i + 2) % 3];
    const int m = midpoint(q, r);
    remove(t);
    const int a = add({p, q, m}, green);
    const int b = add({p, m, r}, green);
    return {a, b};
  }

  void red(int t) {
    const Cell c = tris_[t];
    const int m0 = midpoint(c[1], c[2]);
    const int m1 = midpoint(c[2], c[0]);
    const int m2 = midpoint(c[0], c[1]);
    remove(t);
    add({c[0], m2, m1});
    add({m2, c[1], m0});
    add({m1, m0, c[2]});
    add({m0, m1, m2});
  }

  int add_green_parent(const Cell& c) {
    parents_.push_back({c});
    return static_cast<int>(parents_.size()) - 1;
  }

  /// Replaces a green pair by its parent triangle. Returns the parent id.
  int ungreen(int t) {
    const int g = green_[t];
    const Cell parent = parents_[g].vertices;
    std::vector<int> siblings{t};
    for (int i = 0; i < 3; ++i) {
      const Cell& c = tris_[t];
      const int s = neighbor(t, c[(i + 1) % 3], c[(i + 2) % 3]);
      if (s >= 0 && green_[s] == g) siblings.push_back(s);
    }
    // the split vertex is the one vertex of t not in the parent
    for (int v : tris_[t]) {
      if (std::find(parent.begin(), parent.end(), v) != parent.end()) continue;
      for (int i = 0; i < 3; ++i) {
        const int a = parent[(i + 1) % 3], b = parent[(i + 2) % 3];
        const Vec2 mid = 0.5 * (verts_[a] + verts_[b]);
        if (mid == verts_[v]) mids_[edge_key(a, b)] = v;
      }
    }
    for (int s : siblings) remove(s);
    return add(parent);
  }

  Mesh finish(int generation) const {
    std::vector<Cell> cells;
    std::vector<int> green;
    std::vector<int> remap(parents_.size(), -1);
    std::vector<GreenParent> parents;
    for (int t = 0; t < num_tris(); ++t) {
      if (!alive_[t]) continue;
      cells.push_back(tris_[t]);
      int g = green_[t];
      if (g >= 0) {
        if (remap[g] < 0) {
          remap[g] = static_cast<int>(parents.size());
          parents.push_back(parents_[g]);
        }
        g = remap[g];
      }
      green.push_back(g);
    }
    return Mesh(verts_, std::move(cells), markers_, generation, std::move(green), std::move(parents));
  }

 private:
  std::vector<Vec2> verts_;
  std::vector<Cell> tris_;
  std::vector<bool> alive_;
  std::vector<int> green_;
  std::unordered_map<std::uint64_t, std::array<int, 2>> edge_tris_;
  std::unordered_map<std::uint64_t, int> mids_;
  EdgeMarkers markers_;
  std::vector<GreenParent> parents_;
};

}  // namespace detail

/// Longest-edge recursive bisection. Edge ties are broken by a global total
/// order (length, then edge key) so neighbouring cells agree.
inline Mesh refine_rivara(const Mesh& mesh, const MarkedSet& marked) {
  detail::RefineBuilder b(mesh, false);
  auto longest = [&b](int t) {
    const Cell& c = b.tri(t);
    int best = 0;
    double best_len = -1.0;
    std::uint64_t best_key = 0;
    for (int i = 0; i < 3; ++i) {
      int p = c[(i + 1) % 3], q = c[(i + 2) % 3];
      if (p > q) std::swap(p, q);
      const Vec2 e = b.vertex(q) - b.vertex(p);
      const double len = e.x * e.x + e.y * e.y;
      const auto key = edge_key(p, q);
      if (len > best_len || (len == best_len && key > best_key)) {
        best = i;
        best_len = len;
        best_key = key;
      }
    }
    return best;
  };
  for (int target : marked.cells) {
    if (target < 0 || target >= mesh.num_cells()) throw std::invalid_argument("refine_rivara: marked cell out of range");
    // walk the longest-edge propagation path and split its terminal edge
    // until the target itself has been bisected
    while (b.alive(target)) {
      int cur = target;
      for (;;) {
        const int i = longest(cur);
        const Cell c = b.tri(cur);
        const int p = c[(i + 1) % 3], q = c[(i + 2) % 3];
        const int nb = b.neighbor(cur, p, q);
        int j = -1;
        bool terminal = nb < 0;
        if (!terminal) {
          j = longest(nb);
          const Cell& cn = b.tri(nb);
          terminal = edge_key(cn[(j + 1) % 3], cn[(j + 2) % 3]) == edge_key(p, q);
        }
        if (terminal) {
          b.bisect(cur, i);
          if (nb >= 0) b.bisect(nb, j);
          break;
        }
        cur = nb;
      }
    }
  }
  return b.finish(mesh.generation() + 1);
}

/// Red refinement of marked cells with green (bisection) closure. Marked green
/// cells and green cells needing refinement are replaced by the red
/// refinement of their parent. Red splits are applied immediately so the
/// closure sweep sees the children; it repeats until no cell has more than
/// one split edge.
inline Mesh refine_regular_cut(const Mesh& mesh, const MarkedSet& marked) {
  detail::RefineBuilder b(mesh);
  for (int t : marked.cells) {
    if (t < 0 || t >= mesh.num_cells()) throw std::invalid_argument("refine_regular_cut: marked cell out of range");
    if (!b.alive(t)) continue;  // sibling of an already un-greened cell
    b.red(b.green(t) >= 0 ? b.ungreen(t) : t);
  }
  auto split_edge = [&](int t) {
    const Cell& c = b.tri(t);
    int n = 0, last = -1;
    for (int i = 0; i < 3; ++i)
      if (b.has_midpoint(c[(i + 1) % 3], c[(i + 2) % 3])) {
        ++n;
        last = i;
      }
    return std::pair<int, int>{n, last};
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (int t = 0; t < b.num_tris(); ++t) {
      if (!b.alive(t)) continue;
      const auto [n, edge] = split_edge(t);
      if (n == 0) continue;
      if (b.green(t) >= 0) {
        b.red(b.ungreen(t));
        changed = true;
      } else if (n >= 2) {
        b.red(t);
        changed = true;
      }
    }
  }
  const int n_final = b.num_tris();
  for (int t = 0; t < n_final; ++t) {
    if (!b.alive(t)) continue;
    const auto [n, edge] = split_edge(t);
    if (n != 1) continue;
    const int g = b.add_green_parent(b.tri(t));
    b.bisect(t, edge, g);
  }
  return b.finish(mesh.generation() + 1);
}

/// Red refinement of every cell; green ancestry is dropped.
inline Mesh refine_uniform(const Mesh& mesh) {
  detail::RefineBuilder b(mesh, false);
  for (int t = 0; t < mesh.num_cells(); ++t) b.red(t);
  return b.finish(mesh.generation() + 1);
}

enum class RefinementAlgorithm { Bisection, RegularCut, Uniform };

inline Mesh refine(const Mesh& mesh, const MarkedSet& marked, RefinementAlgorithm algo) {
  switch (algo) {
    case RefinementAlgorithm::Bisection: return refine_rivara(mesh, marked);
    case RefinementAlgorithm::RegularCut: return refine_regular_cut(mesh, marked);
    case RefinementAlgorithm::Uniform: return refine_uniform(mesh);
  }
  return mesh;
}

}  // namespace ipcs
