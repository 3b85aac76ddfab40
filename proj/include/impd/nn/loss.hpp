#pragma once

#include <span>

namespace impd {

inline constexpr double kProbClamp = 1e-7;

// Binary cross-entropy with the prediction clamped to
// [kProbClamp, 1 - kProbClamp] so the value stays finite.
double bce_loss(double c, int y);

// d(bce)/d(logit) for c = sigmoid(logit); zero where the clamp is active.
double bce_dlogit(double c, int y);

// (2/|M|) * sum(0.5 - |c_i - 0.5|). 1 when every prediction sits at 0.5,
// 0 when all are confidently 0 or 1. Empty input yields 0.
double edge_regularizer(std::span<const double> c);

// d(edge_regularizer)/d(c_i) given the mask size.
double edge_regularizer_dc(double c_i, size_t mask_size);

}  // namespace impd
