#include "agadapt/numerics/optim.hpp"

#include <cmath>

#include "agadapt/error.hpp"

namespace agadapt {

void adamw_step(OptimizerState& state, ParameterStore& params, const GradientStore& grads) {
  for (const auto& [name, g] : grads) {
    const Parameter* p = params.find(name);
    if (!p) throw NumericError("adamw_step: gradient for unknown parameter " + name);
    if (!p->trainable) throw NumericError("adamw_step: gradient for frozen parameter " + name);
    if (!g.same_shape(p->value)) {
      throw NumericError("adamw_step: shape mismatch for " + name + ": grad " + shape_string(g.shape()) +
                         " vs param " + shape_string(p->value.shape()));
    }
  }

  state.step += 1;
  const auto& hp = state.hyper;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  const double decay = 1.0 - hp.lr * hp.weight_decay;

  for (const auto& [name, g] : grads) {
    Parameter& p = params.at(name);
    auto [mit, mnew] = state.first_moment.try_emplace(name, g.shape(), 0.0);
    auto [vit, vnew] = state.second_moment.try_emplace(name, g.shape(), 0.0);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] = p.value[i] * decay - hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
    if (!p.value.all_finite()) throw NumericError("adamw_step: non-finite parameter " + name);
  }
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& p, double h) {
  if (!(h > 0.0)) throw NumericError("finite_diff_grad: step must be positive");
  Tensor out(p.shape(), 0.0);
  Tensor probe = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

std::vector<double> finite_diff_grad_at(const std::function<double(const Tensor&)>& f, const Tensor& p,
                                        const std::vector<std::size_t>& coords, double h) {
  if (!(h > 0.0)) throw NumericError("finite_diff_grad: step must be positive");
  std::vector<double> out;
  out.reserve(coords.size());
  Tensor probe = p;
  for (auto i : coords) {
    if (i >= p.size()) throw NumericError("finite_diff_grad: coordinate out of range");
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

}  // namespace agadapt
