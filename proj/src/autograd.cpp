#include "sage3d/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sage3d/errors.hpp"
#include "sage3d/kernels.hpp"

namespace sage3d::ag {

namespace {

thread_local Tape* g_active = nullptr;

std::size_t normalize_axis(int axis, std::size_t ndim) {
  const int n = static_cast<int>(ndim);
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw InvalidArgument("axis " + std::to_string(axis) + " out of range for rank " +
                          std::to_string(ndim));
  }
  return static_cast<std::size_t>(a);
}

// outer × axis × inner decomposition of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  s.len = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (d != axis) out.push_back(shape[d]);
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                          " vs " + shape_string(b.shape()));
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw InvalidArgument(std::string(op) + ": undefined tensor");
}

// Checks the forward value, then records it on the active tape when any
// input needs a gradient; otherwise returns a plain constant.
Tensor emit(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
            BackwardFn backward) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
  }
  Tape* tape = g_active;
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tape == nullptr || !needs_grad) {
    return Tensor::constant(std::move(shape), std::move(value));
  }
  return tape->record(std::move(shape), std::move(value), std::move(inputs), std::move(backward));
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  require_defined(x, op);
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return emit(op, x.shape(), std::move(out), {x},
              [x, deriv](const Node& o, std::span<const double> g, std::span<double* const> gi) {
                const auto xv = x.values();
                for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * deriv(xv[i], o.value[i]);
              });
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double stable_softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw InvalidArgument("tensor data length " + std::to_string(values.size()) +
                          " does not match shape " + shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::size_t Tensor::dim(int axis) const { return shape()[normalize_axis(axis, ndim())]; }

std::size_t Tensor::rows() const { return ndim() == 0 ? 1 : size() / shape().back(); }

std::size_t Tensor::cols() const { return ndim() == 0 ? 1 : shape().back(); }

double Tensor::item() const {
  if (size() != 1) throw InvalidArgument("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw InvalidState("mutable_values() on a recorded tensor");
  return node_->value;
}

std::span<const double> GradientMap::operator[](const Tensor& leaf) const {
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) return {};
  return it->second;
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::record(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                    BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = true;
  node->tape = this;
  node->slot = records_.size();
  records_.push_back({node, std::move(inputs), std::move(backward)});
  return Tensor(std::move(node));
}

GradientMap Tape::backward(const Tensor& root) const {
  if (!root.defined() || root.size() != 1) {
    throw InvalidArgument("backward() needs a scalar root");
  }
  GradientMap result;
  if (!root.requires_grad()) return result;
  if (root.is_leaf()) {
    result.grads_[root.node()] = {1.0};
    return result;
  }
  if (root.node()->tape != this) throw InvalidState("backward() root was recorded on another tape");

  std::vector<std::vector<double>> grads(records_.size());
  grads[root.node()->slot] = {1.0};
  std::vector<double*> sinks;
  for (std::size_t s = root.node()->slot + 1; s-- > 0;) {
    if (grads[s].empty()) continue;
    const Record& rec = records_[s];
    sinks.assign(rec.inputs.size(), nullptr);
    for (std::size_t i = 0; i < rec.inputs.size(); ++i) {
      const Tensor& in = rec.inputs[i];
      if (!in.requires_grad()) continue;
      std::vector<double>* buf = nullptr;
      if (in.is_leaf()) {
        buf = &result.grads_[in.node()];
      } else {
        if (in.node()->tape != this) throw InvalidState("tape mixes records from another tape");
        buf = &grads[in.node()->slot];
      }
      if (buf->empty()) buf->assign(in.size(), 0.0);
      sinks[i] = buf->data();
    }
    rec.backward(*rec.out, grads[s], sinks);
    std::vector<double>().swap(grads[s]);
  }
  return result;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }

TapeScope::~TapeScope() { g_active = previous_; }

Tape* active_tape() { return g_active; }

// ---------------------------------------------------------------------------
// Linear algebra and elementwise binaries

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.ndim() < 1 || b.ndim() != 2 || a.cols() != b.shape()[0]) {
    throw InvalidArgument("matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                          shape_string(b.shape()));
  }
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.shape()[1];
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<double> out(m * n);
  kernels::parallel::gemm(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  return emit("matmul", std::move(out_shape), std::move(out), {a, b},
              [a, b, m, k, n](const Node&, std::span<const double> g, std::span<double* const> gi) {
                if (gi[0]) kernels::parallel::gemm_nt(g.data(), b.values().data(), gi[0], m, n, k, true);
                if (gi[1]) kernels::parallel::gemm_tn(a.values().data(), g.data(), gi[1], k, m, n, true);
              });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return emit("add", a.shape(), std::move(out), {a, b},
              [](const Node&, std::span<const double> g, std::span<double* const> gi) {
                for (int s = 0; s < 2; ++s) {
                  if (!gi[s]) continue;
                  for (std::size_t i = 0; i < g.size(); ++i) gi[s][i] += g[i];
                }
              });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return emit("sub", a.shape(), std::move(out), {a, b},
              [](const Node&, std::span<const double> g, std::span<double* const> gi) {
                if (gi[0]) for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                if (gi[1]) for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] -= g[i];
              });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return emit("mul", a.shape(), std::move(out), {a, b},
              [a, b](const Node&, std::span<const double> g, std::span<double* const> gi) {
                if (gi[0]) for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * b[i];
                if (gi[1]) for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += g[i] * a[i];
              });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  if (x.ndim() < 1 || bias.size() != x.cols() || bias.ndim() != 1) {
    throw InvalidArgument("add_bias: bias " + shape_string(bias.shape()) + " does not fit " +
                          shape_string(x.shape()));
  }
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + bias[c];
  }
  return emit("add_bias", x.shape(), std::move(out), {x, bias},
              [rows, cols](const Node&, std::span<const double> g, std::span<double* const> gi) {
                if (gi[0]) for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                if (gi[1]) {
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) gi[1][c] += g[r * cols + c];
                  }
                }
              });
}

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary("add_scalar", x, [offset](double v) { return v + offset; },
               [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const std::size_t rank = parts[0].ndim();
  const std::size_t ax = normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.ndim() == rank;
    for (std::size_t d = 0; ok && d < rank; ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) ok = false;
    }
    if (!ok) {
      throw InvalidArgument("concat: incompatible shapes " + shape_string(parts[0].shape()) +
                            " and " + shape_string(p.shape()));
    }
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit whole = split_at(out_shape, ax);
  std::vector<std::size_t> chunk;  // contiguous run per outer index
  for (const auto& p : parts) chunk.push_back(p.shape()[ax] * whole.inner);
  const std::size_t row = whole.len * whole.inner;

  std::vector<double> out(shape_size(out_shape));
  for (std::size_t o = 0; o < whole.outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const auto src = parts[i].values().subspan(o * chunk[i], chunk[i]);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += chunk[i];
    }
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return emit("concat", std::move(out_shape), std::move(out), std::move(inputs),
              [chunk, row, outer = whole.outer](const Node&, std::span<const double> g,
                                                std::span<double* const> gi) {
                for (std::size_t o = 0; o < outer; ++o) {
                  std::size_t offset = o * row;
                  for (std::size_t i = 0; i < chunk.size(); ++i) {
                    if (gi[i]) {
                      double* dst = gi[i] + o * chunk[i];
                      for (std::size_t e = 0; e < chunk[i]; ++e) dst[e] += g[offset + e];
                    }
                    offset += chunk[i];
                  }
                }
              });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_defined(x, "gather_rows");
  if (x.ndim() < 1) throw InvalidArgument("gather_rows: scalar input");
  const std::size_t n = x.shape()[0];
  const std::size_t width = n == 0 ? 0 : x.size() / n;
  for (std::size_t idx : indices) {
    if (idx >= n) {
      throw InvalidArgument("gather_rows: index " + std::to_string(idx) + " out of range " +
                            std::to_string(n));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  std::vector<double> out(indices.size() * width);
  const auto xv = x.values();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(indices[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return emit("gather_rows", std::move(out_shape), std::move(out), {x},
              [idx = std::vector<std::size_t>(indices.begin(), indices.end()), width](
                  const Node&, std::span<const double> g, std::span<double* const> gi) {
                for (std::size_t r = 0; r < idx.size(); ++r) {
                  double* dst = gi[0] + idx[r] * width;
                  const double* src = g.data() + r * width;
                  for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
                }
              });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_size(shape) != x.size()) {
    throw InvalidArgument("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return emit("reshape", std::move(shape), std::move(out), {x},
              [](const Node&, std::span<const double> g, std::span<double* const> gi) {
                for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
              });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
  return unary("softplus", x, stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

Tensor smooth_l1(const Tensor& x, double delta) {
  if (!(delta > 0.0)) throw InvalidArgument("smooth_l1: delta must be positive");
  return unary(
      "smooth_l1", x,
      [delta](double e) {
        const double a = std::abs(e);
        return a < delta ? 0.5 * e * e / delta : a - 0.5 * delta;
      },
      [delta](double e, double) {
        if (std::abs(e) < delta) return e / delta;
        return e > 0.0 ? 1.0 : -1.0;
      });
}

// ---------------------------------------------------------------------------
// Axis operations

Tensor softmax(const Tensor& x, int axis) {
  require_defined(x, "softmax");
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.len == 0) throw InvalidArgument("softmax over an empty axis");
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double hi = xv[base];
      for (std::size_t j = 1; j < s.len; ++j) hi = std::max(hi, xv[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - hi);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= total;
    }
  }
  return emit("softmax", x.shape(), std::move(out), {x},
              [s](const Node& o, std::span<const double> g, std::span<double* const> gi) {
                const auto& y = o.value;
                for (std::size_t a = 0; a < s.outer; ++a) {
                  for (std::size_t in = 0; in < s.inner; ++in) {
                    const std::size_t base = a * s.len * s.inner + in;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < s.len; ++j) {
                      dot += g[base + j * s.inner] * y[base + j * s.inner];
                    }
                    for (std::size_t j = 0; j < s.len; ++j) {
                      const std::size_t e = base + j * s.inner;
                      gi[0][e] += y[e] * (g[e] - dot);
                    }
                  }
                }
              });
}

Tensor sum(const Tensor& x, int axis) {
  require_defined(x, "sum");
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.len; ++j) {
      const double* src = xv.data() + (o * s.len + j) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  return emit("sum", drop_axis(x.shape(), ax), std::move(out), {x},
              [s](const Node&, std::span<const double> g, std::span<double* const> gi) {
                for (std::size_t o = 0; o < s.outer; ++o) {
                  for (std::size_t j = 0; j < s.len; ++j) {
                    double* dst = gi[0] + (o * s.len + j) * s.inner;
                    const double* src = g.data() + o * s.inner;
                    for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
                  }
                }
              });
}

Tensor mean(const Tensor& x, int axis) {
  const std::size_t len = x.dim(axis);
  if (len == 0) throw InvalidArgument("mean over an empty axis");
  return scale(sum(x, axis), 1.0 / static_cast<double>(len));
}

Tensor max(const Tensor& x, int axis) {
  require_defined(x, "max");
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.len == 0) throw InvalidArgument("max over an empty axis");
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      std::size_t best = base;
      for (std::size_t j = 1; j < s.len; ++j) {
        if (xv[base + j * s.inner] > xv[best]) best = base + j * s.inner;
      }
      out[o * s.inner + in] = xv[best];
      arg[o * s.inner + in] = best;
    }
  }
  return emit("max", drop_axis(x.shape(), ax), std::move(out), {x},
              [arg](const Node&, std::span<const double> g, std::span<double* const> gi) {
                for (std::size_t i = 0; i < arg.size(); ++i) gi[0][arg[i]] += g[i];
              });
}

Tensor sum_all(const Tensor& x) {
  require_defined(x, "sum_all");
  double total = 0.0;
  for (double v : x.values()) total += v;
  return emit("sum_all", {}, {total}, {x},
              [n = x.size()](const Node&, std::span<const double> g, std::span<double* const> gi) {
                for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[0];
              });
}

Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) throw InvalidArgument("mean_all of an empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor repeat_cols(const Tensor& x, std::size_t width) {
  if (x.cols() != 1) throw InvalidArgument("repeat_cols expects a single column");
  return matmul(x, Tensor::full({1, width}, 1.0));
}

}  // namespace sage3d::ag
