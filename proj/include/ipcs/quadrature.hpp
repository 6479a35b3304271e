#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ipcs {

/// Triangle rule in barycentric coordinates. Weights sum to one; multiply by
/// the cell area to integrate.
struct QuadratureRule {
  int degree = 0;
  std::vector<std::array<double, 3>> points;
  std::vector<double> weights;

  int size() const { return static_cast<int>(weights.size()); }
};

namespace detail {

inline void add_orbit3(QuadratureRule& r, double a, double w) {
  const double b = 1.0 - 2.0 * a;
  r.points.push_back({b, a, a});
  r.points.push_back({a, b, a});
  r.points.push_back({a, a, b});
  for (int i = 0; i < 3; ++i) r.weights.push_back(w);
}

inline void add_orbit6(QuadratureRule& r, double a, double b, double w) {
  const double c = 1.0 - a - b;
  for (const auto& p : {std::array<double, 3>{a, b, c}, {a, c, b}, {b, a, c}, {b, c, a}, {c, a, b}, {c, b, a}}) {
    r.points.push_back(p);
    r.weights.push_back(w);
  }
}

}  // namespace detail

/// Symmetric positive-weight rules (Dunavant) exact for the given degree.
/// Degree 3 reuses the 6-point degree-4 rule to keep all weights positive.
inline const QuadratureRule& triangle_quadrature(int degree) {
  static const std::array<QuadratureRule, 7> rules = [] {
    std::array<QuadratureRule, 7> r{};
    r[1].degree = 1;
    r[1].points = {{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}};
    r[1].weights = {1.0};

    r[2].degree = 2;
    detail::add_orbit3(r[2], 1.0 / 6.0, 1.0 / 3.0);

    r[4].degree = 4;
    detail::add_orbit3(r[4], 0.445948490915964886318329253883051, 0.223381589678011465944658961222097);
    detail::add_orbit3(r[4], 0.091576213509770743459571463402202, 0.109951743655321867638666899197197);
    r[3] = r[4];
    r[3].degree = 3;

    r[5].degree = 5;
    r[5].points = {{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}};
    r[5].weights = {9.0 / 40.0};
    const double s15 = std::sqrt(15.0);
    detail::add_orbit3(r[5], (6.0 - s15) / 21.0, (155.0 - s15) / 1200.0);
    detail::add_orbit3(r[5], (6.0 + s15) / 21.0, (155.0 + s15) / 1200.0);

    r[6].degree = 6;
    detail::add_orbit3(r[6], 0.249286745170910421291638553107019, 0.116786275726379366030690538687986);
    detail::add_orbit3(r[6], 0.063089014491502228340331602870819, 0.050844906370206816920936809106869);
    detail::add_orbit6(r[6], 0.053145049844816947353249671631398, 0.310352451033784405416607733956552,
                       0.082851075618373575193553456420442);
    return r;
  }();
  if (degree < 1 || degree > 6) throw std::invalid_argument("triangle_quadrature: supported degrees are 1..6");
  return rules[degree];
}

/// Gauss-Legendre rule on [0, 1]; weights sum to one.
struct LineRule {
  std::vector<double> points;
  std::vector<double> weights;
};

inline const LineRule& gauss_line(int npoints) {
  static const std::array<LineRule, 6> rules = [] {
    std::array<LineRule, 6> r{};
    r[1] = {{0.5}, {1.0}};
    const double g2 = 0.5 / std::sqrt(3.0);
    r[2] = {{0.5 - g2, 0.5 + g2}, {0.5, 0.5}};
    const double g3 = 0.5 * std::sqrt(0.6);
    r[3] = {{0.5 - g3, 0.5, 0.5 + g3}, {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0}};
    const double a4 = std::sqrt(3.0 / 7.0 - 2.0 / 7.0 * std::sqrt(1.2));
    const double b4 = std::sqrt(3.0 / 7.0 + 2.0 / 7.0 * std::sqrt(1.2));
    const double wa = (18.0 + std::sqrt(30.0)) / 36.0, wb = (18.0 - std::sqrt(30.0)) / 36.0;
    r[4] = {{0.5 - 0.5 * b4, 0.5 - 0.5 * a4, 0.5 + 0.5 * a4, 0.5 + 0.5 * b4},
            {0.5 * wb, 0.5 * wa, 0.5 * wa, 0.5 * wb}};
    const double c5 = 1.0 / 3.0 * std::sqrt(5.0 - 2.0 * std::sqrt(10.0 / 7.0));
    const double d5 = 1.0 / 3.0 * std::sqrt(5.0 + 2.0 * std::sqrt(10.0 / 7.0));
    const double wc = (322.0 + 13.0 * std::sqrt(70.0)) / 900.0, wd = (322.0 - 13.0 * std::sqrt(70.0)) / 900.0;
    r[5] = {{0.5 - 0.5 * d5, 0.5 - 0.5 * c5, 0.5, 0.5 + 0.5 * c5, 0.5 + 0.5 * d5},
            {0.5 * wd, 0.5 * wc, 0.5 * 128.0 / 225.0, 0.5 * wc, 0.5 * wd}};
    return r;
  }();
  if (npoints < 1 || npoints > 5) throw std::invalid_argument("gauss_line: supported sizes are 1..5");
  return rules[npoints];
}

}  // namespace ipcs
