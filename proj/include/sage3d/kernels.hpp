#pragma once

// Dense inner loops used by the autograd engine and the geometry module.
//
// Every kernel exists twice: `serial` is the plain reference loop nest and
// `parallel` is the OpenMP version. Both use the same per-element
// accumulation order, so their outputs are bitwise identical; the tests rely
// on that. Library code calls the `parallel` variants.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace sage3d {

using Vec3 = std::array<double, 3>;

namespace kernels {

// Row-major matrix products. `accumulate` adds into c instead of overwriting.
//   gemm:    c(m×n) = a(m×k) · b(k×n)
//   gemm_tn: c(m×n) = a(k×m)ᵀ · b(k×n)
//   gemm_nt: c(m×n) = a(m×k) · b(n×k)ᵀ

namespace serial {
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

// Max-min farthest point sampling on squared distances, lowest index on ties.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m,
                                               std::size_t start);

// Exact k nearest neighbours per query, ordered by (distance, index).
// `indices` and `distances` are queries.size() × k, row-major.
void knn(std::span<const Vec3> queries, std::span<const Vec3> source, std::size_t k,
         std::size_t* indices, double* distances);
}  // namespace serial

namespace parallel {
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m,
                                               std::size_t start);
void knn(std::span<const Vec3> queries, std::span<const Vec3> source, std::size_t k,
         std::size_t* indices, double* distances);
}  // namespace parallel

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace kernels
}  // namespace sage3d
