#pragma once

#include <vector>

#include "dlv3/batchnorm.hpp"
#include "dlv3/conv.hpp"
#include "dlv3/tensor.hpp"

namespace dlv3 {

// Conv + BN pair, the building unit of the backbone and head.
struct ConvBnUnit {
  ConvLayer conv;
  BatchNorm bn;

  ConvBnUnit() = default;
  ConvBnUnit(int c_out, int c_in, int k, int rate = 1, int stride = 1)
      : conv(c_out, c_in, k, rate, stride), bn(c_out) {}
};

// 2-D max pooling over in-bounds taps with centered padding; border windows
// shrink rather than compare against padded values.
struct MaxPoolLayer {
  int kernel = 3;
  int stride = 2;
};

struct MaxPoolTape {
  std::vector<int> argmax;  // per output element: winning index in its input plane
  int in_h = 0, in_w = 0;
};

Tensor maxpool_forward(const Tensor& x, const MaxPoolLayer& pool, MaxPoolTape* tape);
Tensor maxpool_backward(const Tensor& grad_out, const MaxPoolTape& tape);

}  // namespace dlv3
