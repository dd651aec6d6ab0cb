#pragma once

// Internal compute-graph plumbing shared by the op implementations.

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "healnet/tensor.hpp"

namespace healnet::detail {

struct GraphNode;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GraphNode> producer;  // null for leaves

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using BackwardFn = std::function<void(const TensorImpl& out)>;

struct GraphNode {
  std::string_view kind;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Reads out.grad and accumulates into the grads of inputs that require one.
  // Must not capture the output impl (that would form a reference cycle).
  BackwardFn backward;
};

struct TensorAccess {
  static const std::shared_ptr<TensorImpl>& impl(const Tensor& t) { return t.impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
};

inline const std::shared_ptr<TensorImpl>& impl_of(const Tensor& t) { return TensorAccess::impl(t); }

/// Builds an op result. Records a graph node only when grad mode is on and
/// some input requires a gradient; `make_backward` is invoked lazily so
/// cached buffers are not kept for inference passes.
Tensor make_result(std::string_view kind, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, const std::function<BackwardFn()>& make_backward);

/// Throws ShapeError / NumericError naming the op.
void require_defined(std::string_view op, const Tensor& t);
void require_finite(std::string_view op, const Tensor& t);

}  // namespace healnet::detail
