#pragma once

#include <Eigen/Dense>
#include <array>

#include "impd/image.hpp"
#include "impd/nn/param.hpp"

namespace impd {

// Pixel-aligned feature map at a fixed stride relative to the input image.
// Stored as a (channels x pixels) matrix; column j holds the feature vector
// of feature cell (j % width, j / width).
struct FeatureMap {
  int channels = 0;
  int width = 0, height = 0;
  int stride = 1;
  Eigen::MatrixXd data;

  double at(int x, int y, int c) const { return data(c, y * width + x); }
};

// 3x3 convolution with replicate padding.
struct Conv2d {
  Parameter weight;  // [out][in][3][3]
  Parameter bias;    // [out]
  int in_channels = 0, out_channels = 0, stride = 1;

  void init(const std::string& name, int in, int out, int s, Rng& rng);
};

// Activations are (channels x pixels) matrices, same convention as
// FeatureMap. Input width/height must be divisible by the layer stride.
Eigen::MatrixXd conv_forward(const Conv2d& conv, const Eigen::MatrixXd& input,
                             int in_w, int in_h);
// Accumulates weight/bias gradients and returns the input gradient.
Eigen::MatrixXd conv_backward(Conv2d& conv, const Eigen::MatrixXd& input,
                              int in_w, int in_h,
                              const Eigen::MatrixXd& d_output);

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_derivative(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

// Four conv layers with ELU after each; the stride schedule fixes the
// feature-map stride.
struct Encoder {
  std::array<Conv2d, 4> convs;

  int input_channels() const { return convs[0].in_channels; }
  int feature_channels() const { return convs[3].out_channels; }
  int stride() const {
    int s = 1;
    for (const Conv2d& c : convs) s *= c.stride;
    return s;
  }
};

struct EncoderTrace {
  struct Layer {
    Eigen::MatrixXd input;   // pre-layer activation
    Eigen::MatrixXd preact;  // conv output before ELU
    int in_w = 0, in_h = 0, out_w = 0, out_h = 0;
  };
  std::array<Layer, 4> layers;
};

// Interleaved float image -> (channels x pixels) matrix.
Eigen::MatrixXd image_to_matrix(const Image& image);

FeatureMap encoder_forward(const Encoder& encoder, const Image& input,
                           EncoderTrace* trace = nullptr);
// d_features has FeatureMap layout. Parameter gradients are accumulated.
void encoder_backward(Encoder& encoder, const EncoderTrace& trace,
                      const Eigen::MatrixXd& d_features);

// Bilinear taps into a stride-s feature map for a full-resolution pixel
// location, with half-pixel alignment and edge clamping. Used both to gather
// MLP inputs and to scatter their gradients.
struct BilinearTaps {
  std::array<int, 4> cell;      // column indices into the feature matrix
  std::array<double, 4> weight;
};
BilinearTaps feature_taps(int fm_width, int fm_height, int stride, double u,
                          double v);

}  // namespace impd
