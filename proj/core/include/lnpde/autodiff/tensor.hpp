#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lnpde::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward op produces NaN or Inf from its inputs.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// One vertex of the recorded computation. Interior nodes own a closure that
/// pushes their gradient into their inputs; leaves have no inputs.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{});
  }
};

/// Handle to a node. Copies share the node; values never change after
/// creation except for parameter leaves updated by an optimizer.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> data);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, T value);
  static Tensor scalar(T value);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<T> data);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->inputs.empty() && !node_->backward_fn; }

  std::span<const T> data() const { return node_->value; }
  /// Writable view of a leaf's values; throws for interior nodes.
  std::span<T> mutable_data();
  /// Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad();
  void zero_grad();

  T item() const;
  T at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  /// Reverse sweep from a scalar. The recorded graph is released afterwards.
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Thread-local switch; ops do not record nodes while disabled.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Builds the result tensor of an op. The node is recorded only when grad
/// mode is on and at least one input requires a gradient. Values are checked
/// for finiteness.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn);

template <class T>
void check_finite(const char* op, std::span<const T> values);

}  // namespace detail

}  // namespace lnpde::ad
