#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "agadapt/numerics/tensor.hpp"

namespace agadapt {

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW moments and step count. Moments are created lazily per parameter on
/// the first step that sees a gradient for it.
struct OptimizerState {
  AdamWHyper hyper;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

/// One AdamW update with decoupled weight decay:
///   p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
/// Only trainable parameters that have an entry in `grads` are touched.
/// Throws NumericError on a gradient for an unknown or frozen parameter, or on
/// a shape mismatch.
void adamw_step(OptimizerState& state, ParameterStore& params, const GradientStore& grads);

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& p, double h = 1e-4);

/// Same as above restricted to the listed flat coordinates; the result holds
/// one derivative per coordinate, in order.
std::vector<double> finite_diff_grad_at(const std::function<double(const Tensor&)>& f, const Tensor& p,
                                        const std::vector<std::size_t>& coords, double h = 1e-4);

}  // namespace agadapt
