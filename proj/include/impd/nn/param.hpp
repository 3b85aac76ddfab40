#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "impd/common.hpp"

namespace impd {

// One trainable array plus its gradient and Adam state.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  int64_t adam_steps = 0;

  size_t size() const { return value.size(); }

  void resize(std::string param_name, std::vector<int> dims) {
    name = std::move(param_name);
    shape = std::move(dims);
    const size_t n = size_t(std::accumulate(shape.begin(), shape.end(), int64_t(1),
                                            std::multiplies<int64_t>()));
    value.assign(n, 0.0);
    grad.assign(n, 0.0);
    adam_m.assign(n, 0.0);
    adam_v.assign(n, 0.0);
    adam_steps = 0;
  }
};

// LeCun-style uniform init, U(-sqrt(3/fan_in), +sqrt(3/fan_in)).
void init_uniform_fanin(Parameter& param, int fan_in, Rng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Standard bias-corrected Adam update; zeroes gradients afterwards.
// Throws OptimizationError naming the parameter on non-finite gradients.
void adam_step(std::span<Parameter* const> params, const AdamConfig& config);

void zero_grads(std::span<Parameter* const> params);

}  // namespace impd
