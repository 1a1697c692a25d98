#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sage3d/geometry.hpp"
#include "sage3d/postprocess.hpp"

namespace sage3d {

struct Assignment {
  std::vector<int> row_to_col;  // -1 when the row is left unmatched (rows > cols)
  double cost = 0.0;
};

// Min-cost maximum matching on a rows×cols matrix (row-major). Among optimal
// assignments the lexicographically smallest row_to_col is returned.
Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols);

struct MetricReport {
  double aco = 0.0;  // mean matched distance; NaN when nothing matched
  double cp = 0.0;   // percent
  double cr = 0.0;
  double cf1 = 0.0;
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t gt = 0;
  double match_threshold = 0.1;
};

double f1_score(double precision, double recall);

// Hungarian matching on Euclidean distances, then pairs farther than the
// threshold are discarded.
MetricReport corner_metrics(const CornerSet& pred, const Wireframe& gt, double match_threshold);

// Means of CP and CR over samples with CF1 recomputed from them, so the F1
// identity holds for the aggregate too. ACO averages samples with a match.
MetricReport mean_report(std::span<const MetricReport> reports);

// `id,aco,cp,cr,cf1,n_pred,n_gt` per sample followed by a MEAN row.
void write_report_csv(std::ostream& os, std::span<const std::string> ids,
                      std::span<const MetricReport> reports);

}  // namespace sage3d
