#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cesr/error.hpp"
#include "cesr/tensor.hpp"

namespace cesr {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers are laid out in the order of the
/// parameter list passed to step().
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  const AdamOptions& options() const noexcept { return options_; }
  std::uint64_t steps() const noexcept { return step_; }

  /// Applies one update from the accumulated gradients, then clears them.
  void step(std::span<Parameter<T>> params) {
    if (first_moment_.empty()) {
      for (const auto& p : params) {
        first_moment_.emplace_back(p.value.shape());
        second_moment_.emplace_back(p.value.shape());
      }
    }
    if (first_moment_.size() != params.size()) throw DataError("adam: parameter list changed between steps");
    for (const auto& p : params)
      if (p.grad.shape() != p.value.shape()) throw DataError("adam: missing gradient for parameter '" + p.name + "'");

    ++step_;
    const T b1 = static_cast<T>(options_.beta1);
    const T b2 = static_cast<T>(options_.beta2);
    const T lr = static_cast<T>(options_.learning_rate);
    const T eps = static_cast<T>(options_.epsilon);
    const T correction1 = T{1} - static_cast<T>(std::pow(options_.beta1, static_cast<double>(step_)));
    const T correction2 = T{1} - static_cast<T>(std::pow(options_.beta2, static_cast<double>(step_)));

    for (std::size_t k = 0; k < params.size(); ++k) {
      auto theta = params[k].value.data();
      auto grad = params[k].grad.data();
      auto m = first_moment_[k].data();
      auto v = second_moment_[k].data();
      if (m.size() != theta.size()) throw DataError("adam: moment shape mismatch for '" + params[k].name + "'");
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const T g = grad[i];
        m[i] = b1 * m[i] + (T{1} - b1) * g;
        v[i] = b2 * v[i] + (T{1} - b2) * g * g;
        const T m_hat = m[i] / correction1;
        const T v_hat = v[i] / correction2;
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
      params[k].zero_grad();
    }
  }

 private:
  AdamOptions options_;
  std::vector<Tensor<T>> first_moment_;
  std::vector<Tensor<T>> second_moment_;
  std::uint64_t step_ = 0;
};

}  // namespace cesr
