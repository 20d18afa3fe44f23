#include "oclip/tensor.hpp"

#include <cmath>
#include <sstream>

#include "oclip/error.hpp"

namespace oclip {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kIndex: return "index error";
    case ErrorKind::kContract: return "contract error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kVersion: return "version error";
    case ErrorKind::kTruncated: return "truncated file";
    case ErrorKind::kShape: return "shape mismatch";
    case ErrorKind::kDivergence: return "training diverged";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kUsage: return "usage error";
  }
  return "error";
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  require(!shape_.empty(), ErrorKind::kDimension, "tensor shape must have at least one axis");
  for (auto e : shape_) {
    require(e > 0, ErrorKind::kDimension, "tensor extents must be positive, got " + shape_str(shape_));
  }
  require(oclip::numel(shape_) == data.size(), ErrorKind::kDimension,
          "shape " + shape_str(shape_) + " does not match " + std::to_string(data.size()) + " values");
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = oclip::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

double Tensor::item() const {
  require(numel() == 1, ErrorKind::kContract, "item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

bool GradSink::wants(std::size_t parent) const { return taped_.at(parent); }

std::span<double> GradSink::grad(std::size_t parent) {
  return tape_.grad_buffer(parents_.at(parent));
}

std::vector<double> Gradients::of(const Tensor& t) const {
  auto it = by_node_.find(t.node());
  if (!t.requires_grad() || it == by_node_.end()) return std::vector<double>(t.numel(), 0.0);
  return it->second;
}

bool Gradients::has(const Tensor& t) const {
  return t.requires_grad() && by_node_.count(t.node()) > 0;
}

Tensor Tape::variable(const Tensor& value) {
  require(!consumed_, ErrorKind::kContract, "tape already consumed by backward()");
  require(!value.empty(), ErrorKind::kContract, "cannot register an empty tensor");
  Node node;
  node.numel = value.numel();
  node.leaf = true;
  nodes_.push_back(std::move(node));
  Tensor t = value.detach();
  t.tape_ = this;
  t.node_ = nodes_.size() - 1;
  return t;
}

Tensor Tape::record(Shape shape, std::vector<double> data, std::vector<const Tensor*> parents,
                    BackwardFn backward) {
  require(!consumed_, ErrorKind::kContract, "tape already consumed by backward()");
#ifndef NDEBUG
  for (double v : data) {
    require(std::isfinite(v), ErrorKind::kContract, "non-finite value produced by a forward op");
  }
#endif
  Node node;
  node.parents.reserve(parents.size());
  node.taped.reserve(parents.size());
  for (const Tensor* p : parents) {
    const bool on_tape = p->tape_ == this;
    require(on_tape || p->tape_ == nullptr, ErrorKind::kContract,
            "operands recorded on different tapes");
    node.parents.push_back(on_tape ? p->node_ : 0);
    node.taped.push_back(on_tape);
  }
  node.backward = std::move(backward);
  Tensor t(std::move(shape), std::move(data));
  node.numel = t.numel();
  nodes_.push_back(std::move(node));
  t.tape_ = this;
  t.node_ = nodes_.size() - 1;
  return t;
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].numel, 0.0);
  return g;
}

Gradients Tape::backward(const Tensor& loss) {
  require(!consumed_, ErrorKind::kContract, "tape already consumed by backward()");
  require(loss.tape() == this, ErrorKind::kContract, "loss is not recorded on this tape");
  require(loss.numel() == 1, ErrorKind::kContract,
          "backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  consumed_ = true;
  grads_.assign(nodes_.size(), {});
  grads_[loss.node()] = {1.0};

  Gradients out;
  for (std::size_t id = loss.node() + 1; id-- > 0;) {
    if (grads_[id].empty()) continue;
    Node& node = nodes_[id];
    if (node.leaf) {
      out.by_node_.emplace(id, std::move(grads_[id]));
      continue;
    }
    if (node.backward) {
      GradSink sink(*this, node.parents, node.taped);
      node.backward(grads_[id], sink);
    }
    grads_[id].clear();
    grads_[id].shrink_to_fit();
    node.backward = nullptr;
  }
  grads_.clear();
  return out;
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<const Tensor*> parents,
                   BackwardFn backward) {
  Tape* tape = nullptr;
  for (const Tensor* p : parents) {
    if (p->tape()) {
      tape = p->tape();
      break;
    }
  }
  if (!tape) return Tensor(std::move(shape), std::move(data));
  return tape->record(std::move(shape), std::move(data), std::move(parents), std::move(backward));
}

}  // namespace oclip
