#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "sage3d/autograd.hpp"

namespace sage3d {

// Named learnable tensors in registration order. The order defines the
// checkpoint layout and the optimizer's state layout.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    ag::Tensor tensor;
  };

  // Throws InvalidArgument on a duplicate name or a non-parameter tensor.
  ag::Tensor add(std::string name, ag::Tensor tensor);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const ag::Tensor* find(const std::string& name) const;

 private:
  std::vector<Entry> entries_;
};

// Per-parameter gradient buffers aligned with a ParameterSet.
using GradientBuffers = std::vector<std::vector<double>>;

GradientBuffers zero_gradients(const ParameterSet& params);
// buffers += grads (parameters absent from the map contribute nothing).
void accumulate(GradientBuffers& buffers, const ParameterSet& params, const ag::GradientMap& grads);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
};

class AdamW {
 public:
  AdamW(const ParameterSet& params, AdamWConfig config = {});

  // Decoupled decay first (p -= lr·wd·p), then the bias-corrected Adam update.
  void step(ParameterSet& params, const GradientBuffers& grads, double lr);

  const OptimizerState& state() const { return state_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  OptimizerState state_;
};

struct OneCycleConfig {
  double max_lr = 0.01;
  double warmup_fraction = 0.1;
  double initial_div = 25.0;
  double final_div = 1e4;
};

// Cosine ramp from max/initial_div to max over the warmup fraction, then
// cosine anneal from max to max/final_div at step == total.
double onecycle_lr(std::size_t step, std::size_t total, const OneCycleConfig& config = {});

// Central-difference check of the gradients of `loss` with respect to every
// entry of `params`. Returns max |analytic − numeric| / max(1, |analytic|, |numeric|).
double grad_check(const std::function<ag::Tensor()>& loss, std::vector<ag::Tensor> params,
                  double eps = 1e-5);

}  // namespace sage3d
