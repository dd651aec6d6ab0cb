#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace healnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorImpl;
struct TensorAccess;
}  // namespace detail

/// Dense row-major float64 tensor with an optional gradient buffer.
///
/// `Tensor` is a handle: copies share storage and graph history. Values are
/// immutable once produced by an operation; only leaves (parameters and
/// inputs) expose `mutable_data()`, which the optimizer uses between steps.
///
/// Operations on tensors that require gradients record a node in the compute
/// graph (unless a `NoGradGuard` is active). `backward(loss)` walks that graph
/// in reverse topological order and accumulates into every leaf that
/// requires a gradient.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor.
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of a leaf tensor. Throws for tensors produced by an op.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Empty span until a gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  /// Copy of the values with no graph history and no gradient.
  Tensor detach() const;

  /// True when both handles refer to the same storage.
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  friend struct detail::TensorAccess;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are recomputed on every call.
void backward(const Tensor& loss);

/// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

}  // namespace healnet
