#include "sage3d/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "sage3d/errors.hpp"
#include "sage3d/io.hpp"

namespace sage3d {

namespace {

// Square assignment with potentials. Returns row->col plus the duals.
struct SquareSolution {
  std::vector<std::size_t> row_to_col;
  std::vector<double> u, v;
};

SquareSolution solve_square(const std::vector<double>& a, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based rows/cols; column 0 is the virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  SquareSolution s;
  s.row_to_col.resize(n);
  for (std::size_t j = 1; j <= n; ++j) s.row_to_col[p[j] - 1] = j - 1;
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  return s;
}

// Moves `match` to the lexicographically smallest perfect matching inside the
// zero-reduced-cost graph, which is exactly the set of optimal assignments.
void lexicographic_refine(const std::vector<std::vector<char>>& tight, std::vector<std::size_t>& match) {
  const std::size_t n = match.size();
  std::vector<std::size_t> owner(n);
  for (std::size_t r = 0; r < n; ++r) owner[match[r]] = r;
  std::vector<char> fixed_row(n, 0), fixed_col(n, 0);

  // Alternating search: can `start` (unmatched row) reach the free column `target`?
  auto augment = [&](std::size_t start, std::size_t target) {
    std::vector<std::size_t> parent_col(n, n), via_row(n, n);
    std::vector<char> seen_col(n, 0);
    std::vector<std::size_t> queue{start};
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t r = queue[head];
      for (std::size_t c = 0; c < n; ++c) {
        if (!tight[r][c] || fixed_col[c] || seen_col[c]) continue;
        seen_col[c] = 1;
        via_row[c] = r;
        if (c == target) {
          // Flip the path back to `start`.
          std::size_t col = c;
          while (true) {
            const std::size_t row = via_row[col];
            const std::size_t prev = parent_col[row];
            match[row] = col;
            owner[col] = row;
            if (row == start) break;
            col = prev;
          }
          return true;
        }
        const std::size_t next = owner[c];
        if (fixed_row[next]) continue;
        parent_col[next] = c;
        queue.push_back(next);
      }
    }
    return false;
  };

  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (!tight[r][c] || fixed_col[c]) continue;
      if (c == match[r]) break;
      // Take c for r; c's owner must then reach r's old column.
      const std::vector<std::size_t> saved_match = match, saved_owner = owner;
      const std::size_t displaced = owner[c];
      const std::size_t freed = match[r];
      match[r] = c;
      owner[c] = r;
      fixed_row[r] = 1;
      fixed_col[c] = 1;
      if (augment(displaced, freed)) break;
      match = saved_match;
      owner = saved_owner;
      fixed_row[r] = 0;
      fixed_col[c] = 0;
    }
    fixed_row[r] = 1;
    fixed_col[match[r]] = 1;
  }
}

}  // namespace

Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  if (cost.size() != rows * cols) throw InvalidArgument("hungarian: cost size does not match shape");
  Assignment out;
  if (rows == 0 || cols == 0) {
    out.row_to_col.assign(rows, -1);
    return out;
  }
  double scale = 0.0;
  for (double c : cost) {
    if (!std::isfinite(c)) throw InvalidArgument("hungarian: costs must be finite");
    scale = std::max(scale, std::abs(c));
  }
  // Pad to square with zero-cost dummies; every dummy row/column is used
  // exactly once, so padding does not change which real pairs are optimal.
  const std::size_t n = std::max(rows, cols);
  std::vector<double> a(n * n, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(cost.begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                a.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  SquareSolution s = solve_square(a, n);

  const double tol = 1e-9 * (1.0 + scale);
  std::vector<std::vector<char>> tight(n, std::vector<char>(n, 0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      tight[r][c] = std::abs(a[r * n + c] - s.u[r] - s.v[c]) <= tol ? 1 : 0;
    }
    tight[r][s.row_to_col[r]] = 1;
  }
  lexicographic_refine(tight, s.row_to_col);

  out.row_to_col.assign(rows, -1);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t c = s.row_to_col[r];
    if (c < cols) {
      out.row_to_col[r] = static_cast<int>(c);
      out.cost += cost[r * cols + c];
    }
  }
  return out;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

MetricReport corner_metrics(const CornerSet& pred, const Wireframe& gt, double match_threshold) {
  if (gt.vertices.empty()) throw InvalidArgument("corner_metrics: empty ground truth");
  if (!(match_threshold > 0.0)) throw InvalidArgument("corner_metrics: threshold must be positive");
  MetricReport r;
  r.match_threshold = match_threshold;
  r.predicted = pred.size();
  r.gt = gt.size();
  std::vector<double> dist(r.predicted * r.gt);
  for (std::size_t i = 0; i < r.predicted; ++i) {
    for (std::size_t j = 0; j < r.gt; ++j) {
      dist[i * r.gt + j] = std::sqrt(kernels::squared_distance(pred.corners[i].position, gt.vertices[j]));
    }
  }
  const Assignment match = hungarian(dist, r.predicted, r.gt);
  double total = 0.0;
  for (std::size_t i = 0; i < r.predicted; ++i) {
    const int j = match.row_to_col[i];
    if (j < 0) continue;
    const double d = dist[i * r.gt + static_cast<std::size_t>(j)];
    if (d <= match_threshold) {
      ++r.matched;
      total += d;
    }
  }
  r.aco = r.matched > 0 ? total / static_cast<double>(r.matched) : std::numeric_limits<double>::quiet_NaN();
  r.cp = r.predicted > 0 ? 100.0 * static_cast<double>(r.matched) / static_cast<double>(r.predicted) : 0.0;
  r.cr = 100.0 * static_cast<double>(r.matched) / static_cast<double>(r.gt);
  r.cf1 = f1_score(r.cp, r.cr);
  return r;
}

MetricReport mean_report(std::span<const MetricReport> reports) {
  MetricReport m;
  if (reports.empty()) {
    m.aco = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  double aco = 0.0, pred = 0.0, gt = 0.0, matched = 0.0;
  std::size_t with_match = 0;
  for (const auto& r : reports) {
    m.cp += r.cp;
    m.cr += r.cr;
    pred += static_cast<double>(r.predicted);
    gt += static_cast<double>(r.gt);
    matched += static_cast<double>(r.matched);
    if (r.matched > 0) {
      aco += r.aco;
      ++with_match;
    }
  }
  const double n = static_cast<double>(reports.size());
  m.cp /= n;
  m.cr /= n;
  m.cf1 = f1_score(m.cp, m.cr);
  m.aco = with_match > 0 ? aco / static_cast<double>(with_match) : std::numeric_limits<double>::quiet_NaN();
  m.predicted = static_cast<std::size_t>(std::lround(pred / n));
  m.gt = static_cast<std::size_t>(std::lround(gt / n));
  m.matched = static_cast<std::size_t>(std::lround(matched / n));
  m.match_threshold = reports.front().match_threshold;
  return m;
}

void write_report_csv(std::ostream& os, std::span<const std::string> ids,
                      std::span<const MetricReport> reports) {
  if (ids.size() != reports.size()) throw InvalidArgument("write_report_csv: one id per report");
  os << "id,aco,cp,cr,cf1,n_pred,n_gt\n";
  auto row = [&os](const std::string& id, const MetricReport& r, double n_pred, double n_gt) {
    os << id << ',' << format_real(r.aco) << ',' << format_real(r.cp) << ',' << format_real(r.cr) << ','
       << format_real(r.cf1) << ',' << format_real(n_pred) << ',' << format_real(n_gt) << '\n';
  };
  double pred = 0.0, gt = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    row(ids[i], reports[i], static_cast<double>(reports[i].predicted), static_cast<double>(reports[i].gt));
    pred += static_cast<double>(reports[i].predicted);
    gt += static_cast<double>(reports[i].gt);
  }
  const double n = reports.empty() ? 1.0 : static_cast<double>(reports.size());
  row("MEAN", mean_report(reports), pred / n, gt / n);
}

}  // namespace sage3d
