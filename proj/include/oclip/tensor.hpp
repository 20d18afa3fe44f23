#pragma once

// Dense double-precision tensors with define-by-run reverse-mode
// differentiation. A Tensor is an immutable value; a Tape records every
// operation applied to tensors that were registered on it and replays the
// recorded backward rules in reverse order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace oclip {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool empty() const { return !data_; }

  std::span<const double> data() const {
    return data_ ? std::span<const double>(*data_) : std::span<const double>();
  }
  const std::shared_ptr<const std::vector<double>>& storage() const { return data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  // A tensor requires a gradient exactly when it is attached to a tape.
  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  // Same values, detached from any tape.
  Tensor detach() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

// Where a backward rule deposits parent gradients. Buffers are allocated on
// first use and accumulate across every child that feeds the same parent.
class GradSink {
 public:
  bool wants(std::size_t parent) const;
  std::span<double> grad(std::size_t parent);

 private:
  friend class Tape;
  GradSink(Tape& tape, const std::vector<std::size_t>& parents, const std::vector<bool>& taped)
      : tape_(tape), parents_(parents), taped_(taped) {}

  Tape& tape_;
  const std::vector<std::size_t>& parents_;
  const std::vector<bool>& taped_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

class Gradients {
 public:
  // Gradient of the loss with respect to `t`; zeros when nothing flowed to it.
  std::vector<double> of(const Tensor& t) const;
  bool has(const Tensor& t) const;

 private:
  friend class Tape;
  std::unordered_map<std::size_t, std::vector<double>> by_node_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf whose total derivative backward() will report.
  Tensor variable(const Tensor& value);

  // Records the result of an operation. Parents that are not on this tape are
  // treated as constants; parents on another tape are a contract error.
  Tensor record(Shape shape, std::vector<double> data, std::vector<const Tensor*> parents,
                BackwardFn backward);

  // Reverse sweep from a scalar loss. Each node is visited once, children
  // before parents, since ids are assigned in creation order. Consumes the tape.
  Gradients backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend class GradSink;

  struct Node {
    std::vector<std::size_t> parents;
    std::vector<bool> taped;
    BackwardFn backward;
    std::size_t numel = 0;
    bool leaf = false;
  };

  std::span<double> grad_buffer(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool consumed_ = false;
};

// Records `op` when any input is taped; returns a plain constant otherwise.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<const Tensor*> parents,
                   BackwardFn backward);

// ---- differentiable operations ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Same-shape elementwise sum, or a trailing-axis bias add when `b` is 1-D and
// matches the last extent of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// Divides every entry of `a` by the single entry of `s`.
Tensor divide_scalar(const Tensor& a, const Tensor& s);
Tensor relu(const Tensor& a);
// tanh approximation.
Tensor gelu(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor embedding_gather(const Tensor& table, std::span<const std::size_t> ids);
// Mean over `axis`; the axis is removed (a rank-1 input yields shape [1]).
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);
Tensor l2_normalize(const Tensor& a, std::size_t axis);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Mean over rows of logsumexp(row) - row[target].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// ---- verification -------------------------------------------------------

// Scalar-valued function of one tensor, evaluated on the tape it is given.
using ScalarFn = std::function<Tensor(Tape& tape, const Tensor& x)>;

// Central differences against the taped gradient; returns
// max_i |analytic - numeric| / max(1, |analytic|, |numeric|).
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace oclip
