#include "dlv3/layers.hpp"

#include <stdexcept>

namespace dlv3 {

Tensor maxpool_forward(const Tensor& x, const MaxPoolLayer& pool, MaxPoolTape* tape) {
  if (x.h() < 1 || x.w() < 1) {
    throw std::invalid_argument("maxpool: zero-sized spatial input");
  }
  const int k = pool.kernel;
  const int half = (k - 1) / 2;
  const int oh = (x.h() - 1) / pool.stride + 1;
  const int ow = (x.w() - 1) / pool.stride + 1;
  Tensor y(x.n(), x.c(), oh, ow);
  if (tape) {
    tape->argmax.assign(static_cast<std::size_t>(x.n()) * x.c() * oh * ow, 0);
    tape->in_h = x.h();
    tape->in_w = x.w();
  }
  std::size_t out_idx = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = y.plane(n, c);
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j, ++out_idx) {
          double best = -1e300;
          int best_idx = 0;
          for (int ki = -half; ki <= k - 1 - half; ++ki) {
            const int sy = pool.stride * i + ki;
            if (sy < 0 || sy >= x.h()) continue;
            for (int kj = -half; kj <= k - 1 - half; ++kj) {
              const int sx = pool.stride * j + kj;
              if (sx < 0 || sx >= x.w()) continue;
              const double v = src[static_cast<std::size_t>(sy) * x.w() + sx];
              if (v > best) {
                best = v;
                best_idx = sy * x.w() + sx;
              }
            }
          }
          dst[static_cast<std::size_t>(i) * ow + j] = best;
          if (tape) tape->argmax[out_idx] = best_idx;
        }
      }
    }
  }
  return y;
}

Tensor maxpool_backward(const Tensor& grad_out, const MaxPoolTape& tape) {
  Tensor grad_in(grad_out.n(), grad_out.c(), tape.in_h, tape.in_w);
  const std::size_t pos = static_cast<std::size_t>(grad_out.h()) * grad_out.w();
  std::size_t out_idx = 0;
  for (int nn = 0; nn < grad_out.n(); ++nn) {
    for (int cc = 0; cc < grad_out.c(); ++cc) {
      const double* g = grad_out.plane(nn, cc);
      double* dst = grad_in.plane(nn, cc);
      for (std::size_t i = 0; i < pos; ++i, ++out_idx) {
        dst[tape.argmax[out_idx]] += g[i];
      }
    }
  }
  return grad_in;
}

}  // namespace dlv3
