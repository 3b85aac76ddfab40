#include "impd/nn/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace impd {

namespace {

using RowMajorMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Patch matrix: row (ci*9 + ky*3 + kx), column = output pixel. Replicate
// padding clamps source coordinates at the borders.
Eigen::MatrixXd im2col(const Eigen::MatrixXd& input, int in_w, int in_h,
                       int stride, int out_w, int out_h) {
  const int c_in = int(input.rows());
  Eigen::MatrixXd col(c_in * 9, out_w * out_h);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const int col_idx = oy * out_w + ox;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = std::clamp(oy * stride + ky - 1, 0, in_h - 1);
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = std::clamp(ox * stride + kx - 1, 0, in_w - 1);
          const int src = iy * in_w + ix;
          for (int ci = 0; ci < c_in; ++ci)
            col(ci * 9 + ky * 3 + kx, col_idx) = input(ci, src);
        }
      }
    }
  }
  return col;
}

void col2im_add(const Eigen::MatrixXd& d_col, int in_w, int in_h, int stride,
                int out_w, int out_h, Eigen::MatrixXd& d_input) {
  const int c_in = int(d_input.rows());
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const int col_idx = oy * out_w + ox;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = std::clamp(oy * stride + ky - 1, 0, in_h - 1);
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = std::clamp(ox * stride + kx - 1, 0, in_w - 1);
          const int dst = iy * in_w + ix;
          for (int ci = 0; ci < c_in; ++ci)
            d_input(ci, dst) += d_col(ci * 9 + ky * 3 + kx, col_idx);
        }
      }
    }
  }
}

void check_divisible(int in_w, int in_h, int stride) {
  if (in_w % stride != 0 || in_h % stride != 0)
    throw ShapeError("conv: input dimensions not divisible by stride");
}

}  // namespace

void Conv2d::init(const std::string& name, int in, int out, int s, Rng& rng) {
  in_channels = in;
  out_channels = out;
  stride = s;
  weight.resize(name + ".weight", {out, in, 3, 3});
  bias.resize(name + ".bias", {out});
  init_uniform_fanin(weight, in * 9, rng);
}

Eigen::MatrixXd conv_forward(const Conv2d& conv, const Eigen::MatrixXd& input,
                             int in_w, int in_h) {
  if (int(input.rows()) != conv.in_channels)
    throw ShapeError("conv: input channel mismatch");
  if (input.cols() != in_w * in_h)
    throw ShapeError("conv: input pixel count mismatch");
  check_divisible(in_w, in_h, conv.stride);
  const int out_w = in_w / conv.stride;
  const int out_h = in_h / conv.stride;
  const Eigen::MatrixXd col = im2col(input, in_w, in_h, conv.stride, out_w, out_h);
  ConstRowMajorMap w(conv.weight.value.data(), conv.out_channels,
                     conv.in_channels * 9);
  Eigen::MatrixXd out = w * col;
  const Eigen::Map<const Eigen::VectorXd> b(conv.bias.value.data(),
                                            conv.out_channels);
  out.colwise() += b;
  return out;
}

Eigen::MatrixXd conv_backward(Conv2d& conv, const Eigen::MatrixXd& input,
                              int in_w, int in_h,
                              const Eigen::MatrixXd& d_output) {
  const int out_w = in_w / conv.stride;
  const int out_h = in_h / conv.stride;
  if (d_output.rows() != conv.out_channels || d_output.cols() != out_w * out_h)
    throw ShapeError("conv backward: output gradient shape mismatch");

  const Eigen::MatrixXd col = im2col(input, in_w, in_h, conv.stride, out_w, out_h);

  RowMajorMap d_w(conv.weight.grad.data(), conv.out_channels, conv.in_channels * 9);
  d_w.noalias() += d_output * col.transpose();
  Eigen::Map<Eigen::VectorXd> d_b(conv.bias.grad.data(), conv.out_channels);
  d_b.noalias() += d_output.rowwise().sum();

  ConstRowMajorMap w(conv.weight.value.data(), conv.out_channels,
                     conv.in_channels * 9);
  const Eigen::MatrixXd d_col = w.transpose() * d_output;
  Eigen::MatrixXd d_input = Eigen::MatrixXd::Zero(conv.in_channels, in_w * in_h);
  col2im_add(d_col, in_w, in_h, conv.stride, out_w, out_h, d_input);
  return d_input;
}

Eigen::MatrixXd image_to_matrix(const Image& image) {
  Eigen::MatrixXd m(image.channels, image.pixel_count());
  for (size_t pix = 0; pix < image.pixel_count(); ++pix)
    for (int c = 0; c < image.channels; ++c)
      m(c, Eigen::Index(pix)) = double(image.data[pix * image.channels + c]);
  return m;
}

FeatureMap encoder_forward(const Encoder& encoder, const Image& input,
                           EncoderTrace* trace) {
  if (input.channels != encoder.input_channels())
    throw ShapeError("encoder: input has " + std::to_string(input.channels) +
                     " channels, expected " +
                     std::to_string(encoder.input_channels()));
  const int total_stride = encoder.stride();
  if (input.width % total_stride != 0 || input.height % total_stride != 0)
    throw ShapeError("encoder: image dimensions must be divisible by stride " +
                     std::to_string(total_stride));

  Eigen::MatrixXd act = image_to_matrix(input);
  int w = input.width, h = input.height;
  for (size_t i = 0; i < encoder.convs.size(); ++i) {
    const Conv2d& conv = encoder.convs[i];
    Eigen::MatrixXd pre = conv_forward(conv, act, w, h);
    const int out_w = w / conv.stride, out_h = h / conv.stride;
    if (trace) {
      trace->layers[i].input = std::move(act);
      trace->layers[i].preact = pre;
      trace->layers[i].in_w = w;
      trace->layers[i].in_h = h;
      trace->layers[i].out_w = out_w;
      trace->layers[i].out_h = out_h;
    }
    act = std::move(pre);
    for (Eigen::Index j = 0; j < act.size(); ++j) act(j) = elu(act(j));
    w = out_w;
    h = out_h;
  }

  FeatureMap fm;
  fm.channels = encoder.feature_channels();
  fm.width = w;
  fm.height = h;
  fm.stride = total_stride;
  fm.data = std::move(act);
  return fm;
}

void encoder_backward(Encoder& encoder, const EncoderTrace& trace,
                      const Eigen::MatrixXd& d_features) {
  Eigen::MatrixXd d_act = d_features;
  for (int i = int(encoder.convs.size()) - 1; i >= 0; --i) {
    const EncoderTrace::Layer& layer = trace.layers[size_t(i)];
    Eigen::MatrixXd d_pre = d_act;
    for (Eigen::Index j = 0; j < d_pre.size(); ++j)
      d_pre(j) *= elu_derivative(layer.preact(j));
    d_act = conv_backward(encoder.convs[size_t(i)], layer.input, layer.in_w,
                          layer.in_h, d_pre);
  }
}

BilinearTaps feature_taps(int fm_width, int fm_height, int stride, double u,
                          double v) {
  // Half-pixel alignment between image and feature grids, clamped at edges.
  const double s = double(stride);
  double fu = (u + 0.5) / s - 0.5;
  double fv = (v + 0.5) / s - 0.5;
  fu = std::clamp(fu, 0.0, double(fm_width - 1));
  fv = std::clamp(fv, 0.0, double(fm_height - 1));
  const int x0 = std::min(int(std::floor(fu)), fm_width - 1);
  const int y0 = std::min(int(std::floor(fv)), fm_height - 1);
  const int x1 = std::min(x0 + 1, fm_width - 1);
  const int y1 = std::min(y0 + 1, fm_height - 1);
  const double ax = fu - double(x0);
  const double ay = fv - double(y0);
  BilinearTaps taps;
  taps.cell = {y0 * fm_width + x0, y0 * fm_width + x1, y1 * fm_width + x0,
               y1 * fm_width + x1};
  taps.weight = {(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay,
                 ax * ay};
  return taps;
}

}  // namespace impd
