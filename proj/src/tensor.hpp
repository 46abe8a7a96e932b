#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"

namespace stpt {

// Dimension sizes, row-major storage. Empty shape = scalar (one element).
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

// Op-internal factory; validation already done by the op.
Tensor adopt_node(std::shared_ptr<TensorNode> node);

}  // namespace detail

// Value handle over a shared node. Cheap to copy; copies alias the same
// storage and gradient. Data is immutable through the op API; the optimizer
// mutates leaves in place between steps via values_mut().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;

  // Lvalue-only: binding the data of a temporary tensor (e.g. range-for over
  // f(x).values()) would dangle once the handle dies.
  const std::vector<double>& values() const& { return node_->data; }
  const std::vector<double>& values() const&& = delete;
  std::vector<double>& values_mut() & { return node_->data; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const& { return node_->grad; }
  const std::vector<double>& grad() const&& = delete;
  void zero_grad() { node_->grad.clear(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
  friend Tensor detail::adopt_node(std::shared_ptr<detail::TensorNode> node);
};

// Define-by-run tape. Ops append in execution order, so the list is already
// topologically sorted; backward() walks it once in reverse, accumulating
// into .grad of every participating node.
class Tape {
 public:
  struct Record {
    std::string op;
    std::function<void()> backward;
  };

  void record(std::string op, std::function<void()> backward);
  void backward(const Tensor& loss);
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  static Tape* active();

 private:
  std::vector<Record> records_;
  friend class TapeScope;
};

// RAII activation; tensor ops record onto the innermost active tape.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// --- Operations ------------------------------------------------------------
// All ops validate shapes, reject non-finite results, and register backward
// rules on the active tape when any input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastaxis(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor concat_axis(const std::vector<Tensor>& parts, int axis);
Tensor slice_axis(const Tensor& x, int axis, std::size_t start, std::size_t stop);

// Broadcasting follows trailing-axis alignment.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sqrt_elem(const Tensor& x);
Tensor abs_elem(const Tensor& x);

Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

Tensor transpose_last2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Prepend an axis of length n by replication; backward sums over it.
Tensor tile_leading(const Tensor& x, std::size_t n);

}  // namespace stpt
