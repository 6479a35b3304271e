#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ipcs {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2() = default;
  constexpr Vec2(double x_, double y_) : x(x_), y(y_) {}

  constexpr Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  constexpr Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
  constexpr Vec2& operator*=(double s) { x *= s; y *= s; return *this; }
  friend constexpr Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
  friend constexpr Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return a *= s; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return a *= s; }
  friend constexpr Vec2 operator-(const Vec2& a) { return {-a.x, -a.y}; }
  friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
};

constexpr double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
inline double norm(const Vec2& a) { return std::hypot(a.x, a.y); }

/// 2x2 tensor stored row-major; (i, j) = d u_i / d x_j for velocity gradients.
struct Mat2 {
  double a00 = 0.0, a01 = 0.0, a10 = 0.0, a11 = 0.0;

  constexpr Vec2 operator*(const Vec2& v) const { return {a00 * v.x + a01 * v.y, a10 * v.x + a11 * v.y}; }
  constexpr Mat2 transposed() const { return {a00, a10, a01, a11}; }
  constexpr double trace() const { return a00 + a11; }
  constexpr Mat2& operator+=(const Mat2& o) {
    a00 += o.a00; a01 += o.a01; a10 += o.a10; a11 += o.a11;
    return *this;
  }
  friend constexpr Mat2 operator+(Mat2 a, const Mat2& b) { return a += b; }
  friend constexpr Mat2 operator*(double s, const Mat2& m) { return {s * m.a00, s * m.a01, s * m.a10, s * m.a11}; }
};

constexpr double contract(const Mat2& a, const Mat2& b) {
  return a.a00 * b.a00 + a.a01 * b.a01 + a.a10 * b.a10 + a.a11 * b.a11;
}

/// Outer product a b^T.
constexpr Mat2 outer(const Vec2& a, const Vec2& b) { return {a.x * b.x, a.x * b.y, a.y * b.x, a.y * b.y}; }

/// Raised when an iterative solver misses its residual target.
class ConvergenceFailure : public std::runtime_error {
 public:
  ConvergenceFailure(const std::string& what, double residual, int iterations)
      : std::runtime_error(what), residual_(residual), iterations_(iterations) {}
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// Raised by point location when a point lies outside the mesh.
class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worker cap from IPCS_ADAPT_THREADS (default: hardware concurrency).
inline int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("IPCS_ADAPT_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) return std::min(cap, hw);
  }
  return hw;
}

/// Static block partition of [0, n) over worker_count() threads. Each index is
/// visited exactly once; callers must write to disjoint locations.
template <class F>
void parallel_for(int n, F&& body) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int begin = static_cast<int>(static_cast<long long>(n) * w / workers);
    const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
    pool.emplace_back([begin, end, &body] {
      for (int i = begin; i < end; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace ipcs
