#pragma once

#include "sage3d/autograd.hpp"
#include "sage3d/geometry.hpp"

namespace sage3d {

struct LossConfig {
  double d_thresh = 0.05;
  double beta = 2.0;    // proximity weight w = 1 + beta·exp(-d/d_thresh)
  double alpha = 0.25;  // focal balance
  double gamma = 2.0;   // focal exponent
  double delta = 1.0;   // smooth-L1 transition
  double cls_weight = 1.0;
  double offset_weight = 1.0;

  void validate() const;
};

double proximity_weight(double nearest_dist, const LossConfig& cfg);

// mean_i w_i·α·(1 − p_t)^γ·BCE(σ(z_i), y_i) with soft targets y_i. p_t takes the
// positive branch on supervised points (mask) and the negative branch elsewhere.
ag::Tensor focal_distance_loss(const ag::Tensor& logits, const LabelSet& labels,
                               const LossConfig& cfg);

// Smooth-L1 summed over xyz, averaged over masked points; zero when no point
// is masked.
ag::Tensor offset_loss(const ag::Tensor& offsets, const LabelSet& labels, const LossConfig& cfg);

ag::Tensor total_loss(const ag::Tensor& logits, const ag::Tensor& offsets, const LabelSet& labels,
                      const LossConfig& cfg);

}  // namespace sage3d
