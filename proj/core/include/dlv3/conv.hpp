#pragma once

#include <tuple>
#include <vector>

#include "dlv3/tensor.hpp"

namespace dlv3 {

class Rng;

// 2-D convolution layer with an atrous (dilation) rate. The rate is the
// stride with which the kernel samples the input: output position (i, j)
// with stride s reads taps x[s*i + rate*(ki - k/2), s*j + rate*(kj - k/2)].
// Out-of-range taps read zero. rate=1, stride=1 is standard convolution.
//
// Padding is "same-atrous" by default: rate*(k-1)/2 on every side, which
// keeps the output grid at ceil(input/stride).
struct ConvLayer {
  Tensor weights;             // (c_out, c_in, k, k), k odd
  std::vector<double> bias;   // length c_out
  int rate = 1;
  int stride = 1;
  bool explicit_padding = false;
  Padding padding;            // used only when explicit_padding

  // Gradient buffers, filled by backward passes.
  Tensor weight_grad;
  std::vector<double> bias_grad;

  ConvLayer() = default;
  ConvLayer(int c_out, int c_in, int k, int rate = 1, int stride = 1);

  int c_out() const { return weights.n(); }
  int c_in() const { return weights.c(); }
  int kernel() const { return weights.h(); }

  // Resolved per-side padding ("same-atrous" unless explicit).
  Padding resolved_padding() const;

  void init_he(Rng& rng);
  void zero_grad();
};

// Output spatial size for one axis given resolved padding.
int conv_output_extent(int in, int k, int rate, int stride, int pad_lo, int pad_hi);

// Atrous convolution, im2col + GEMM path. This is the path the library uses.
Tensor atrous_conv_forward(const Tensor& x, const ConvLayer& layer);

// Reference path: the naive six-loop summation, kept as the behavioral
// definition the fast path must agree with (<= 1e-10 on doubles).
Tensor atrous_conv_forward_direct(const Tensor& x, const ConvLayer& layer);

// Reverse-mode gradients of sum(grad_out . y) with respect to the input,
// the kernel, and the bias. Writes weight/bias grads into `layer`'s buffers
// additively and also returns them with grad_x.
std::tuple<Tensor, Tensor, std::vector<double>> atrous_conv_backward(
    const Tensor& x, ConvLayer& layer, const Tensor& grad_out);

// Like atrous_conv_backward but skips grad_x (for layers whose input needs
// no gradient, e.g. the stem conv).
void atrous_conv_backward_params_only(const Tensor& x, ConvLayer& layer,
                                      const Tensor& grad_out);

// Average over all output positions (same-atrous padding, stride 1) of the
// fraction of the k*k taps that land inside the unpadded feature map. With
// rate >= the map extent only the center tap survives, so the value tends to
// 1/k^2: a large-rate kernel degenerates to its center weight.
double valid_weight_fraction(int feature_h, int feature_w, int k, int rate);

}  // namespace dlv3
