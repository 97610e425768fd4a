#include "lnpde/autodiff/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace lnpde::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> data) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<T>(n, T{}));
}

template <class T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<T>(n, value));
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value) {
  return constant(Shape{}, std::vector<T>{value});
}

template <class T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> data) {
  auto t = constant(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

template <class T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(node_->shape));
  }
  return node_->shape[axis];
}

template <class T>
std::span<T> Tensor<T>::mutable_data() {
  if (!is_leaf()) throw GraphError("only leaf tensors can be written in place");
  return node_->value;
}

template <class T>
std::span<T> Tensor<T>::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <class T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T{});
}

template <class T>
T Tensor<T>::item() const {
  if (node_->value.size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(node_->shape));
  }
  return node_->value[0];
}

template <class T>
void Tensor<T>::backward() const {
  if (!node_) throw GraphError("backward() on undefined tensor");
  if (node_->value.size() != 1) {
    throw GraphError("backward() requires a scalar loss, got shape " + to_string(node_->shape));
  }
  if (node_->consumed) throw GraphError("graph already consumed by a previous backward()");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; `order` ends up topologically sorted.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [current, next_input] = stack.back();
    if (next_input < current->inputs.size()) {
      Node<T>* child = current->inputs[next_input++].get();
      if (child->requires_grad && child->backward_fn && !visited.count(child)) {
        if (child->consumed) throw GraphError("graph already consumed by a previous backward()");
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(current);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] = T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->grad.empty()) n->backward_fn(*n);
  }
  for (Node<T>* n : order) {
    n->backward_fn = nullptr;
    n->inputs.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->consumed = true;
  }
}

namespace detail {

template <class T>
void check_finite(const char* op, std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
  }
}

template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  check_finite<T>(op, value);
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(const char*, Shape, std::vector<float>,
                                   std::vector<std::shared_ptr<Node<float>>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<std::shared_ptr<Node<double>>>,
                                    std::function<void(Node<double>&)>);
template void check_finite<float>(const char*, std::span<const float>);
template void check_finite<double>(const char*, std::span<const double>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace lnpde::ad
