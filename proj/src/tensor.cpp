#include "healnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "graph.hpp"
#include "healnet/error.hpp"

namespace healnet {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

static const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& p) {
  if (!p) throw ValueError("use of an undefined tensor");
  return *p;
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::data() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_data() {
  checked(impl_);
  if (impl_->producer) throw ValueError("mutable_data() is only available on leaf tensors");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }
bool Tensor::is_leaf() const { return checked(impl_).producer == nullptr; }
bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }
std::span<const double> Tensor::grad() const { return checked(impl_).grad; }

void Tensor::zero_grad() {
  checked(impl_);
  impl_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& src = checked(impl_);
  return Tensor(src.shape, src.data, false);
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  const auto& root = detail::impl_of(loss);
  if (!root) throw ValueError("backward() on an undefined tensor");
  if (root->data.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_string(root->shape));
  }
  if (!root->requires_grad) throw ValueError("backward() on a loss that does not depend on any gradient leaf");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* producer = node->producer.get();
    if (producer && next < producer->inputs.size()) {
      auto* child = producer->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (auto* node : order) {
    if (node->producer) node->grad.assign(node->data.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->producer) node->producer->backward(*node);
  }
}

namespace detail {

Tensor make_result(std::string_view kind, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   const std::function<BackwardFn()>& make_backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs_grad = needs_grad || impl_of(t)->requires_grad;
  }
  if (needs_grad) {
    auto node = std::make_shared<GraphNode>();
    node->kind = kind;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(impl_of(t));
    node->backward = make_backward();
    impl->producer = std::move(node);
    impl->requires_grad = true;
  }
  return TensorAccess::wrap(std::move(impl));
}

void require_defined(std::string_view op, const Tensor& t) {
  if (!t.defined()) throw ValueError(std::string(op) + ": undefined input tensor");
}

void require_finite(std::string_view op, const Tensor& t) {
  require_defined(op, t);
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in input of shape " + shape_string(t.shape()));
    }
  }
}

}  // namespace detail
}  // namespace healnet
