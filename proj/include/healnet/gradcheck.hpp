#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "healnet/tensor.hpp"

// Central finite-difference checks of the reverse-mode gradients.
namespace healnet {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error, so exact zeros compare absolutely.
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t input = 0;  // where the maximum occurred
  std::size_t index = 0;
  std::size_t checked = 0;
};

/// Maps the inputs to an output tensor. Must be deterministic; any
/// randomness (dropout masks) has to be re-seeded inside the call.
using GradFunction = std::function<Tensor(std::span<const Tensor>)>;

/// Compares backward() against central differences for every element of
/// every input that requires a gradient. Non-scalar outputs are reduced with
/// a fixed random projection derived from `seed`.
/// Relative error: |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const GradFunction& f, std::vector<Tensor> inputs, std::uint64_t seed,
                           const GradCheckOptions& options = {});

/// Names accepted by `grad_check_kind`: every op of the tensor engine plus
/// the two losses.
const std::vector<std::string>& grad_check_kinds();

/// Builds seeded inputs suited to `kind` (away from kinks and ties) and runs
/// `grad_check`.
GradCheckResult grad_check_kind(std::string_view kind, std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace healnet
