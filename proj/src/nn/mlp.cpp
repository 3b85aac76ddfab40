#include "impd/nn/mlp.hpp"

#include <cmath>

#include "impd/nn/encoder.hpp"  // elu

namespace impd {

namespace {

using RowMajorMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Eigen::MatrixXd linear_forward(const Linear& layer, const Eigen::MatrixXd& x) {
  ConstRowMajorMap w(layer.weight.value.data(), layer.out, layer.in);
  Eigen::MatrixXd y = w * x;
  y.colwise() += Eigen::Map<const Eigen::VectorXd>(layer.bias.value.data(), layer.out);
  return y;
}

Eigen::MatrixXd linear_backward(Linear& layer, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& d_y) {
  RowMajorMap d_w(layer.weight.grad.data(), layer.out, layer.in);
  d_w.noalias() += d_y * x.transpose();
  Eigen::Map<Eigen::VectorXd> d_b(layer.bias.grad.data(), layer.out);
  d_b.noalias() += d_y.rowwise().sum();
  ConstRowMajorMap w(layer.weight.value.data(), layer.out, layer.in);
  return w.transpose() * d_y;
}

}  // namespace

void Linear::init(const std::string& name, int in_dim, int out_dim, Rng& rng) {
  in = in_dim;
  out = out_dim;
  weight.resize(name + ".weight", {out, in});
  bias.resize(name + ".bias", {out});
  init_uniform_fanin(weight, in, rng);
}

Mlp make_mlp(int input_dim, int hidden_dim, Rng& rng) {
  Mlp mlp;
  mlp.fc0.init("mlp.fc0", input_dim, hidden_dim, rng);
  mlp.fc1.init("mlp.fc1", hidden_dim, hidden_dim, rng);
  mlp.fc2.init("mlp.fc2", hidden_dim, 1, rng);
  return mlp;
}

Eigen::VectorXd mlp_forward_batch(const Mlp& mlp, const Eigen::MatrixXd& x,
                                  MlpTrace* trace) {
  if (int(x.rows()) != mlp.input_dim())
    throw ShapeError("mlp: expected " + std::to_string(mlp.input_dim()) +
                     "-dimensional inputs, got " + std::to_string(x.rows()));

  Eigen::MatrixXd pre0 = linear_forward(mlp.fc0, x);
  Eigen::MatrixXd act0 = pre0.unaryExpr([](double v) { return elu(v); });
  Eigen::MatrixXd pre1 = linear_forward(mlp.fc1, act0);
  Eigen::MatrixXd act1 = pre1.unaryExpr([](double v) { return elu(v); });
  Eigen::VectorXd logit = linear_forward(mlp.fc2, act1).row(0);
  Eigen::VectorXd prob =
      logit.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });

  if (trace) {
    trace->x = x;
    trace->pre0 = std::move(pre0);
    trace->act0 = std::move(act0);
    trace->pre1 = std::move(pre1);
    trace->act1 = std::move(act1);
    trace->logit = logit;
    trace->prob = prob;
  }
  return prob;
}

Eigen::MatrixXd mlp_backward_batch(Mlp& mlp, const MlpTrace& trace,
                                   const Eigen::VectorXd& d_logit) {
  Eigen::MatrixXd d_act1 =
      linear_backward(mlp.fc2, trace.act1, d_logit.transpose());
  Eigen::MatrixXd d_pre1 = d_act1.cwiseProduct(
      trace.pre1.unaryExpr([](double v) { return elu_derivative(v); }));
  Eigen::MatrixXd d_act0 = linear_backward(mlp.fc1, trace.act0, d_pre1);
  Eigen::MatrixXd d_pre0 = d_act0.cwiseProduct(
      trace.pre0.unaryExpr([](double v) { return elu_derivative(v); }));
  return linear_backward(mlp.fc0, trace.x, d_pre0);
}

}  // namespace impd
