#include "sage3d/loss.hpp"

#include <cmath>

#include "sage3d/errors.hpp"

namespace sage3d {

void LossConfig::validate() const {
  for (double v : {d_thresh, beta, alpha, gamma, delta, cls_weight, offset_weight}) {
    if (!std::isfinite(v) || v <= 0.0) throw InvalidArgument("loss config values must be positive");
  }
}

double proximity_weight(double nearest_dist, const LossConfig& cfg) {
  return 1.0 + cfg.beta * std::exp(-nearest_dist / cfg.d_thresh);
}

ag::Tensor focal_distance_loss(const ag::Tensor& logits, const LabelSet& labels,
                               const LossConfig& cfg) {
  const std::size_t n = labels.size();
  if (logits.size() != n || logits.cols() != 1) {
    throw InvalidArgument("focal_distance_loss: expected " + std::to_string(n) + "x1 logits");
  }
  if (n == 0) throw InvalidArgument("focal_distance_loss: no points");
  for (double z : logits.values()) {
    if (!std::isfinite(z)) throw NumericError("focal_distance_loss: non-finite logit");
  }
  std::vector<double> target(n), sign(n), weight(n);
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = labels.soft[i];
    sign[i] = labels.mask[i] ? 1.0 : -1.0;
    weight[i] = cfg.alpha * proximity_weight(labels.nearest_dist[i], cfg);
  }
  const ag::Shape shape{n, 1};
  const ag::Tensor y = ag::Tensor::constant(shape, std::move(target));
  const ag::Tensor t = ag::Tensor::constant(shape, std::move(sign));
  const ag::Tensor w = ag::Tensor::constant(shape, std::move(weight));

  // BCE(σ(z), y) = softplus(z) − y·z;  (1 − p_t)^γ = exp(−γ·softplus(t·z)).
  const ag::Tensor bce = ag::sub(ag::softplus(logits), ag::mul(logits, y));
  const ag::Tensor modulator = ag::exp(ag::scale(ag::softplus(ag::mul(logits, t)), -cfg.gamma));
  return ag::mean_all(ag::mul(ag::mul(modulator, bce), w));
}

ag::Tensor offset_loss(const ag::Tensor& offsets, const LabelSet& labels, const LossConfig& cfg) {
  const std::size_t n = labels.size();
  if (offsets.rows() != n || offsets.cols() != 3) {
    throw InvalidArgument("offset_loss: expected " + std::to_string(n) + "x3 offsets");
  }
  std::vector<std::size_t> rows;
  std::vector<double> target;
  for (std::size_t i = 0; i < n; ++i) {
    if (!labels.mask[i]) continue;
    rows.push_back(i);
    target.insert(target.end(), labels.offsets[i].begin(), labels.offsets[i].end());
  }
  if (rows.empty()) return ag::Tensor::scalar(0.0);
  const ag::Tensor picked = ag::gather_rows(offsets, rows);
  const ag::Tensor err = ag::sub(picked, ag::Tensor::constant({rows.size(), 3}, std::move(target)));
  return ag::scale(ag::sum_all(ag::smooth_l1(err, cfg.delta)), 1.0 / static_cast<double>(rows.size()));
}

ag::Tensor total_loss(const ag::Tensor& logits, const ag::Tensor& offsets, const LabelSet& labels,
                      const LossConfig& cfg) {
  const ag::Tensor cls = focal_distance_loss(logits, labels, cfg);
  const ag::Tensor reg = offset_loss(offsets, labels, cfg);
  const ag::Tensor weighted_cls = cfg.cls_weight == 1.0 ? cls : ag::scale(cls, cfg.cls_weight);
  const ag::Tensor weighted_reg = cfg.offset_weight == 1.0 ? reg : ag::scale(reg, cfg.offset_weight);
  return ag::add(weighted_cls, weighted_reg);
}

}  // namespace sage3d
