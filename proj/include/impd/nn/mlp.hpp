#pragma once

#include <Eigen/Dense>

#include "impd/nn/param.hpp"

namespace impd {

struct Linear {
  Parameter weight;  // [out][in]
  Parameter bias;    // [out]
  int in = 0, out = 0;

  void init(const std::string& name, int in_dim, int out_dim, Rng& rng);
};

// (K+2) -> hidden -> hidden -> 1, ELU after the first two layers, sigmoid
// on the output.
struct Mlp {
  Linear fc0, fc1, fc2;

  int input_dim() const { return fc0.in; }
  int hidden_dim() const { return fc0.out; }
};

Mlp make_mlp(int input_dim, int hidden_dim, Rng& rng);

struct MlpTrace {
  Eigen::MatrixXd x;            // (in x batch)
  Eigen::MatrixXd pre0, act0;
  Eigen::MatrixXd pre1, act1;
  Eigen::VectorXd logit;
  Eigen::VectorXd prob;
};

// Columns of x are queries; returns sigmoid outputs, strictly inside (0,1).
Eigen::VectorXd mlp_forward_batch(const Mlp& mlp, const Eigen::MatrixXd& x,
                                  MlpTrace* trace = nullptr);

// d_logit is the loss gradient w.r.t. the pre-sigmoid output. Accumulates
// parameter gradients and returns the gradient w.r.t. x.
Eigen::MatrixXd mlp_backward_batch(Mlp& mlp, const MlpTrace& trace,
                                   const Eigen::VectorXd& d_logit);

}  // namespace impd
