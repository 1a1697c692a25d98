#include "sage3d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sage3d/errors.hpp"

namespace sage3d {

ag::Tensor ParameterSet::add(std::string name, ag::Tensor tensor) {
  if (!tensor.defined() || !tensor.is_leaf() || !tensor.requires_grad()) {
    throw InvalidArgument("parameter '" + name + "' must be a leaf that requires a gradient");
  }
  if (find(name) != nullptr) throw InvalidArgument("duplicate parameter name '" + name + "'");
  for (const auto& e : entries_) {
    if (e.tensor.node() == tensor.node()) {
      throw InvalidArgument("tensor registered twice as '" + e.name + "' and '" + name + "'");
    }
  }
  entries_.push_back({std::move(name), tensor});
  return tensor;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

const ag::Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

GradientBuffers zero_gradients(const ParameterSet& params) {
  GradientBuffers out;
  out.reserve(params.size());
  for (const auto& e : params.entries()) out.emplace_back(e.tensor.size(), 0.0);
  return out;
}

void accumulate(GradientBuffers& buffers, const ParameterSet& params, const ag::GradientMap& grads) {
  const auto& entries = params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    const auto g = grads[entries[p].tensor];
    for (std::size_t i = 0; i < g.size(); ++i) buffers[p][i] += g[i];
  }
}

AdamW::AdamW(const ParameterSet& params, AdamWConfig config) : config_(config) {
  for (const auto& e : params.entries()) {
    state_.first_moment.emplace_back(e.tensor.size(), 0.0);
    state_.second_moment.emplace_back(e.tensor.size(), 0.0);
  }
}

void AdamW::step(ParameterSet& params, const GradientBuffers& grads, double lr) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state_.first_moment.size() != entries.size()) {
    throw InvalidArgument("AdamW: gradient/parameter count mismatch");
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t p = 0; p < entries.size(); ++p) {
    ag::Tensor tensor = entries[p].tensor;
    auto values = tensor.mutable_values();
    const auto& g = grads[p];
    if (g.size() != values.size()) {
      throw InvalidArgument("AdamW: gradient shape mismatch for '" + entries[p].name + "'");
    }
    auto& m = state_.first_moment[p];
    auto& v = state_.second_moment[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] -= lr * config_.weight_decay * values[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double onecycle_lr(std::size_t step, std::size_t total, const OneCycleConfig& config) {
  if (total == 0) throw InvalidArgument("onecycle_lr: total steps must be positive");
  if (step > total) throw InvalidArgument("onecycle_lr: step beyond total");
  const double max_lr = config.max_lr;
  const double initial = max_lr / config.initial_div;
  const double final_lr = max_lr / config.final_div;
  const double warm = config.warmup_fraction * static_cast<double>(total);
  const double s = static_cast<double>(step);
  auto cosine = [](double from, double to, double t) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  };
  if (s <= warm) {
    return warm > 0.0 ? cosine(initial, max_lr, s / warm) : max_lr;
  }
  return cosine(max_lr, final_lr, (s - warm) / (static_cast<double>(total) - warm));
}

double grad_check(const std::function<ag::Tensor()>& loss, std::vector<ag::Tensor> params,
                  double eps) {
  ag::Tape tape;
  ag::GradientMap grads;
  {
    ag::TapeScope scope(tape);
    const ag::Tensor root = loss();
    grads = tape.backward(root);
  }
  // Finite differences run without an active tape, so nothing is recorded.
  double worst = 0.0;
  for (auto& p : params) {
    const auto analytic = grads[p];
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss().item();
      values[i] = saved - eps;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (!std::isfinite(err)) throw NumericError("grad_check: non-finite difference");
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace sage3d
