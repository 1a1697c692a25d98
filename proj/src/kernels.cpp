#include "sage3d/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <omp.h>

namespace sage3d::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelFlops = 1 << 15;

void transpose(const double* b, std::size_t rows, std::size_t cols, std::vector<double>& out) {
  out.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = b[r * cols + c];
  }
}

struct Ranked {
  double d2;
  std::size_t index;
  bool operator<(const Ranked& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

void knn_row(const Vec3& q, std::span<const Vec3> source, std::size_t k, std::vector<Ranked>& scratch,
             std::size_t* indices, double* distances) {
  scratch.resize(source.size());
  for (std::size_t s = 0; s < source.size(); ++s) scratch[s] = {squared_distance(q, source[s]), s};
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end());
  for (std::size_t j = 0; j < k; ++j) {
    indices[j] = scratch[j].index;
    distances[j] = std::sqrt(scratch[j].d2);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// serial reference

namespace serial {

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a[p * m + i];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  std::vector<double> bt;
  transpose(b, n, k, bt);
  gemm(a, bt.data(), c, m, k, n, accumulate);
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m,
                                               std::size_t start) {
  const std::size_t n = points.size();
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> out;
  out.reserve(m);
  out.push_back(start);
  taken[start] = 1;
  std::size_t last = start;
  while (out.size() < m) {
    double best = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_d2[i] = std::min(min_d2[i], squared_distance(points[i], points[last]));
      if (min_d2[i] > best) {
        best = min_d2[i];
        best_i = i;
      }
    }
    out.push_back(best_i);
    taken[best_i] = 1;
    last = best_i;
  }
  return out;
}

void knn(std::span<const Vec3> queries, std::span<const Vec3> source, std::size_t k,
         std::size_t* indices, double* distances) {
  std::vector<Ranked> scratch;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    knn_row(queries[q], source, k, scratch, indices + q * k, distances + q * k);
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP

namespace parallel {

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelFlops && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelFlops && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a[p * m + i];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  std::vector<double> bt;
  transpose(b, n, k, bt);
  gemm(a, bt.data(), c, m, k, n, accumulate);
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m,
                                               std::size_t start) {
  const std::size_t n = points.size();
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> out;
  out.reserve(m);
  out.push_back(start);
  taken[start] = 1;
  std::size_t last = start;
  const bool par = n >= 4096;
  while (out.size() < m) {
    double best = -1.0;
    std::size_t best_i = 0;
#pragma omp parallel if (par)
    {
      double local = -1.0;
      std::size_t local_i = 0;
#pragma omp for schedule(static) nowait
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        min_d2[i] = std::min(min_d2[i], squared_distance(points[i], points[last]));
        if (min_d2[i] > local) {
          local = min_d2[i];
          local_i = i;
        }
      }
#pragma omp critical(sage3d_fps_argmax)
      {
        if (local > best || (local == best && local_i < best_i)) {
          best = local;
          best_i = local_i;
        }
      }
    }
    out.push_back(best_i);
    taken[best_i] = 1;
    last = best_i;
  }
  return out;
}

void knn(std::span<const Vec3> queries, std::span<const Vec3> source, std::size_t k,
         std::size_t* indices, double* distances) {
  const bool par = queries.size() * source.size() >= 4096;
#pragma omp parallel if (par)
  {
    std::vector<Ranked> scratch;
#pragma omp for schedule(static)
    for (std::size_t q = 0; q < queries.size(); ++q) {
      knn_row(queries[q], source, k, scratch, indices + q * k, distances + q * k);
    }
  }
}

}  // namespace parallel

}  // namespace sage3d::kernels
