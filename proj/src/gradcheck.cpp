#include "healnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "healnet/error.hpp"
#include "healnet/nn.hpp"
#include "healnet/ops.hpp"
#include "healnet/random.hpp"

namespace healnet {

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor(shape, std::move(v), true);
}

// Values at least 1e-3 away from zero, where ReLU is not differentiable.
Tensor off_kink_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    do {
      x = uniform(rng, -1.0, 1.0);
    } while (std::abs(x) < 1e-3);
  }
  return Tensor(shape, std::move(v), true);
}

// Shuffled, evenly spaced values so every pooling window has a clear maximum.
Tensor distinct_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0 + 0.01 * static_cast<double>(i);
  shuffle(std::span<double>(v), rng);
  return Tensor(shape, std::move(v), true);
}

// Rows on the simplex, bounded away from the clamp.
Tensor simplex_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += v[r * cols + c] = uniform(rng, 0.2, 1.0);
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] /= total;
  }
  return Tensor({rows, cols}, std::move(v), true);
}

std::vector<int> random_labels(std::size_t n, int classes, std::mt19937_64& rng) {
  std::vector<int> labels(n);
  for (auto& y : labels) y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(classes)));
  return labels;
}

struct Case {
  GradFunction f;
  std::vector<Tensor> inputs;
};

Case make_case(std::string_view kind, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, fnv1a(kind)));
  using S = std::span<const Tensor>;
  if (kind == "add") return {[](S in) { return ops::add(in[0], in[1]); }, {random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 4}, rng)}};
  if (kind == "add_broadcast")
    return {[](S in) { return ops::add(in[0], in[1]); }, {random_tensor({2, 3, 4}, rng), random_tensor({4}, rng)}};
  if (kind == "mul") return {[](S in) { return ops::mul(in[0], in[1]); }, {random_tensor({3, 5}, rng), random_tensor({3, 5}, rng)}};
  if (kind == "scale") return {[](S in) { return ops::scale(in[0], -1.7); }, {random_tensor({4, 3}, rng)}};
  if (kind == "matmul")
    return {[](S in) { return ops::matmul(in[0], in[1]); }, {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)}};
  if (kind == "conv2d")
    return {[](S in) { return ops::conv2d(in[0], in[1], in[2], {1, 1}); },
            {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}};
  if (kind == "conv2d_strided")
    return {[](S in) { return ops::conv2d(in[0], in[1], in[2], {2, 0}); },
            {random_tensor({2, 2, 7, 7}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}};
  if (kind == "conv2d_pointwise")
    return {[](S in) { return ops::conv2d(in[0], in[1], in[2], {1, 0}); },
            {random_tensor({2, 4, 3, 3}, rng), random_tensor({2, 4, 1, 1}, rng), random_tensor({2}, rng)}};
  if (kind == "max_pool2d") return {[](S in) { return ops::max_pool2d(in[0], 2, 2); }, {distinct_tensor({2, 2, 4, 6}, rng)}};
  if (kind == "global_avg_pool") return {[](S in) { return ops::global_avg_pool(in[0]); }, {random_tensor({2, 3, 4, 4}, rng)}};
  if (kind == "relu") return {[](S in) { return ops::relu(in[0]); }, {off_kink_tensor({3, 7}, rng)}};
  if (kind == "sigmoid") return {[](S in) { return ops::sigmoid(in[0]); }, {random_tensor({3, 7}, rng, -4.0, 4.0)}};
  if (kind == "softmax") return {[](S in) { return ops::softmax(in[0]); }, {random_tensor({3, 5}, rng, -3.0, 3.0)}};
  if (kind == "concat")
    return {[](S in) { return ops::concat(in, 1); }, {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 2, 2, 2}, rng)}};
  if (kind == "slice") return {[](S in) { return ops::slice(in[0], 1, 1, 4); }, {random_tensor({2, 6}, rng)}};
  if (kind == "dropout") {
    const std::uint64_t mask_seed = rng();
    return {[mask_seed](S in) {
              std::mt19937_64 mask_rng(mask_seed);
              return ops::dropout(in[0], 0.3, true, mask_rng);
            },
            {random_tensor({4, 5}, rng)}};
  }
  if (kind == "flatten") return {[](S in) { return ops::flatten(in[0]); }, {random_tensor({2, 3, 2, 2}, rng)}};
  if (kind == "sum") return {[](S in) { return ops::sum(in[0]); }, {random_tensor({3, 4}, rng)}};
  if (kind == "mean") return {[](S in) { return ops::mean(in[0]); }, {random_tensor({3, 4}, rng)}};
  if (kind == "bce_loss") {
    auto labels = random_labels(8, 2, rng);
    return {[labels](S in) { return nn::bce_loss(in[0], labels); }, {random_tensor({8}, rng, 0.05, 0.95)}};
  }
  if (kind == "cce_loss") {
    auto labels = random_labels(6, 4, rng);
    return {[labels](S in) { return nn::cce_loss(in[0], labels); }, {simplex_rows(6, 4, rng)}};
  }
  throw ValueError("grad_check: unknown kind " + std::string(kind));
}

double scalar_of(const GradFunction& f, std::span<const Tensor> inputs, const Tensor& projection) {
  NoGradGuard guard;
  Tensor out = f(inputs);
  if (!projection.defined()) return out.item();
  const auto od = out.data();
  const auto pd = projection.data();
  double s = 0.0;
  for (std::size_t i = 0; i < od.size(); ++i) s += od[i] * pd[i];
  return s;
}

}  // namespace

GradCheckResult grad_check(const GradFunction& f, std::vector<Tensor> inputs, std::uint64_t seed,
                           const GradCheckOptions& options) {
  for (auto& t : inputs) t.zero_grad();
  Tensor out = f(inputs);
  Tensor projection;
  Tensor loss = out;
  if (out.numel() != 1) {
    std::mt19937_64 rng(derive_seed(seed, 0x70726f6aULL));
    std::vector<double> w(out.numel());
    for (auto& x : w) x = uniform(rng, -1.0, 1.0);
    projection = Tensor(out.shape(), std::move(w));
    loss = ops::sum(ops::mul(out, projection));
  }
  backward(loss);

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    const std::vector<double> analytic = inputs[i].has_grad()
                                             ? std::vector<double>(inputs[i].grad().begin(), inputs[i].grad().end())
                                             : std::vector<double>(inputs[i].numel(), 0.0);
    auto values = inputs[i].mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double original = values[j];
      values[j] = original + options.step;
      const double up = scalar_of(f, inputs, projection);
      values[j] = original - options.step;
      const double down = scalar_of(f, inputs, projection);
      values[j] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double err =
          std::abs(analytic[j] - numeric) / std::max({std::abs(analytic[j]), std::abs(numeric), options.floor});
      ++result.checked;
      if (err > result.max_relative_error || result.checked == 1) {
        result.max_relative_error = err;
        result.input = i;
        result.index = j;
      }
    }
  }
  return result;
}

const std::vector<std::string>& grad_check_kinds() {
  static const std::vector<std::string> kinds = {
      "add",     "add_broadcast", "mul",    "scale",   "matmul",  "conv2d",  "conv2d_strided",
      "conv2d_pointwise", "max_pool2d", "global_avg_pool", "relu", "sigmoid", "softmax", "concat",
      "slice",   "dropout",       "flatten", "sum",    "mean",    "bce_loss", "cce_loss"};
  return kinds;
}

GradCheckResult grad_check_kind(std::string_view kind, std::uint64_t seed, const GradCheckOptions& options) {
  Case c = make_case(kind, seed);
  return grad_check(c.f, std::move(c.inputs), seed, options);
}

}  // namespace healnet
