#pragma once

// Minimal tape-based reverse-mode differentiation over dense double tensors.
//
// A Tape records every primitive applied while it is the thread's active tape
// (see TapeScope) and at least one input requires a gradient. Parameters are
// leaf tensors that live outside any tape, so one set of parameters can be
// read by several tapes on different threads at once. Tape::backward returns
// the leaf gradients in a GradientMap instead of writing them into the
// parameters.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sage3d::ag {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  const Tape* tape = nullptr;  // set for recorded outputs
  std::size_t slot = 0;        // record index on `tape`
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  // Leaf that requires a gradient.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t ndim() const { return node_->shape.size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;
  // 2-D view: all leading dimensions flattened into rows.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->tape == nullptr; }

  // Writable storage of a leaf (optimizer updates, finite differences).
  std::span<double> mutable_values();

  const Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

class GradientMap {
 public:
  bool contains(const Tensor& leaf) const { return grads_.count(leaf.node()) != 0; }
  // Empty span when the leaf did not take part in the computation.
  std::span<const double> operator[](const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const Node*, std::vector<double>> grads_;
};

// grad_in[i] is nullptr when input i does not require a gradient.
using BackwardFn = std::function<void(const Node& out, std::span<const double> grad_out,
                                      std::span<double* const> grad_in)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor record(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                BackwardFn backward);

  // Reverse sweep from a scalar root recorded on this tape.
  GradientMap backward(const Tensor& root) const;

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  struct Record {
    std::shared_ptr<Node> out;
    std::vector<Tensor> inputs;
    BackwardFn backward;
  };
  std::vector<Record> records_;
};

// Makes `tape` the active tape of the calling thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---------------------------------------------------------------------------
// Primitives. Shapes are explicit; the only broadcast is add_bias.

// a: (..., I), b: (I, O) -> (..., O)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x: (..., C), bias: (C)
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
// Rows along axis 0; gradients scatter-add back into the source rows.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor reshape(const Tensor& x, Shape shape);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
// Elementwise Huber-style smooth L1 with transition `delta`.
Tensor smooth_l1(const Tensor& x, double delta);

Tensor softmax(const Tensor& x, int axis);
// Reductions drop the reduced axis.
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);
Tensor max(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Every column of x (N×1) repeated `width` times: (N×width). Built on matmul.
Tensor repeat_cols(const Tensor& x, std::size_t width);

}  // namespace sage3d::ag
