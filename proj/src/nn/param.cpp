#include "impd/nn/param.hpp"

#include <cmath>

namespace impd {

void init_uniform_fanin(Parameter& param, int fan_in, Rng& rng) {
  const double bound = std::sqrt(3.0 / double(fan_in));
  for (double& v : param.value) v = rng.uniform(-bound, bound);
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& config) {
  for (Parameter* p : params)
    for (const double g : p->grad)
      if (!std::isfinite(g))
        throw OptimizationError("adam: non-finite gradient in parameter '" +
                                p->name + "'");

  for (Parameter* p : params) {
    p->adam_steps += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, double(p->adam_steps));
    const double bc2 = 1.0 - std::pow(config.beta2, double(p->adam_steps));
    for (size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      p->adam_m[i] = config.beta1 * p->adam_m[i] + (1.0 - config.beta1) * g;
      p->adam_v[i] = config.beta2 * p->adam_v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = p->adam_m[i] / bc1;
      const double v_hat = p->adam_v[i] / bc2;
      p->value[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
      p->grad[i] = 0.0;
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params)
    std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

}  // namespace impd
