#include "impd/nn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace impd {

double bce_loss(double c, int y) {
  const double p = std::clamp(c, kProbClamp, 1.0 - kProbClamp);
  return y ? -std::log(p) : -std::log1p(-p);
}

double bce_dlogit(double c, int y) {
  if (c <= kProbClamp || c >= 1.0 - kProbClamp) return 0.0;
  return c - double(y);
}

double edge_regularizer(std::span<const double> c) {
  if (c.empty()) return 0.0;
  double sum = 0.0;
  for (const double v : c) sum += 0.5 - std::abs(v - 0.5);
  return 2.0 * sum / double(c.size());
}

double edge_regularizer_dc(double c_i, size_t mask_size) {
  if (mask_size == 0) return 0.0;
  const double sign = c_i > 0.5 ? 1.0 : (c_i < 0.5 ? -1.0 : 0.0);
  return -2.0 * sign / double(mask_size);
}

}  // namespace impd
