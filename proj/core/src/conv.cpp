#include "dlv3/conv.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "dlv3/rng.hpp"

namespace dlv3 {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void check_forward_args(const Tensor& x, const ConvLayer& layer) {
  if (x.c() != layer.c_in()) {
    throw std::invalid_argument("conv: input has " + std::to_string(x.c()) +
                                " channels, layer expects " + std::to_string(layer.c_in()));
  }
  if (x.h() < 1 || x.w() < 1) {
    throw std::invalid_argument("conv: zero-sized spatial input");
  }
  if (layer.kernel() % 2 == 0) {
    throw std::invalid_argument("conv: kernel size must be odd");
  }
  if (layer.rate < 1 || layer.stride < 1) {
    throw std::invalid_argument("conv: rate and stride must be >= 1");
  }
}

struct ConvGeom {
  int out_h, out_w;
  Padding pad;
};

ConvGeom geometry(const Tensor& x, const ConvLayer& layer) {
  ConvGeom g;
  g.pad = layer.resolved_padding();
  g.out_h = conv_output_extent(x.h(), layer.kernel(), layer.rate, layer.stride,
                               g.pad.top, g.pad.bottom);
  g.out_w = conv_output_extent(x.w(), layer.kernel(), layer.rate, layer.stride,
                               g.pad.left, g.pad.right);
  if (g.out_h < 1 || g.out_w < 1) {
    throw std::invalid_argument("conv: empty output extent");
  }
  return g;
}

// Gathers the input patches of one sample into the (c_in*k*k, row_stride)
// column matrix starting at `col`, one patch row per (c, ki, kj); rows are
// row_stride apart so batch samples can interleave. Out-of-range taps
// become zero.
void im2col(const Tensor& x, int n, const ConvLayer& layer, const ConvGeom& g,
            double* col, std::size_t row_stride) {
  const int k = layer.kernel();
  const int rate = layer.rate;
  const int stride = layer.stride;
  std::size_t row = 0;
  for (int c = 0; c < x.c(); ++c) {
    const double* src = x.plane(n, c);
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj, ++row) {
        double* dst = col + row * row_stride;
        const int dy = rate * ki - g.pad.top;
        const int dx = rate * kj - g.pad.left;
        for (int i = 0; i < g.out_h; ++i) {
          const int sy = stride * i + dy;
          double* out_row = dst + static_cast<std::size_t>(i) * g.out_w;
          if (sy < 0 || sy >= x.h()) {
            std::fill(out_row, out_row + g.out_w, 0.0);
            continue;
          }
          const double* in_row = src + static_cast<std::size_t>(sy) * x.w();
          for (int j = 0; j < g.out_w; ++j) {
            const int sx = stride * j + dx;
            out_row[j] = (sx >= 0 && sx < x.w()) ? in_row[sx] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of a column-matrix gradient back onto the input grid. Inverse
// indexing of im2col; overlapping taps accumulate.
void col2im_add(const double* col, std::size_t row_stride, int n, Tensor& grad_x,
                const ConvLayer& layer, const ConvGeom& g) {
  const int k = layer.kernel();
  const int rate = layer.rate;
  const int stride = layer.stride;
  std::size_t row = 0;
  for (int c = 0; c < grad_x.c(); ++c) {
    double* dst = grad_x.plane(n, c);
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj, ++row) {
        const double* src = col + row * row_stride;
        const int dy = rate * ki - g.pad.top;
        const int dx = rate * kj - g.pad.left;
        for (int i = 0; i < g.out_h; ++i) {
          const int sy = stride * i + dy;
          if (sy < 0 || sy >= grad_x.h()) continue;
          double* out_row = dst + static_cast<std::size_t>(sy) * grad_x.w();
          const double* in_row = src + static_cast<std::size_t>(i) * g.out_w;
          for (int j = 0; j < g.out_w; ++j) {
            const int sx = stride * j + dx;
            if (sx >= 0 && sx < grad_x.w()) out_row[sx] += in_row[j];
          }
        }
      }
    }
  }
}

}  // namespace

ConvLayer::ConvLayer(int c_out, int c_in, int k, int rate, int stride)
    : weights(c_out, c_in, k, k),
      bias(c_out, 0.0),
      rate(rate),
      stride(stride),
      weight_grad(c_out, c_in, k, k),
      bias_grad(c_out, 0.0) {
  if (k % 2 == 0) throw std::invalid_argument("conv kernel size must be odd");
  if (rate < 1 || stride < 1) {
    throw std::invalid_argument("conv rate and stride must be >= 1");
  }
}

Padding ConvLayer::resolved_padding() const {
  if (explicit_padding) return padding;
  const int p = rate * (kernel() - 1) / 2;
  return Padding{p, p, p, p};
}

void ConvLayer::init_he(Rng& rng) {
  const double fan_in = static_cast<double>(c_in()) * kernel() * kernel();
  const double stddev = std::sqrt(2.0 / fan_in);
  for (double& v : weights.vec()) v = rng.normal(0.0, stddev);
  for (double& b : bias) b = 0.0;
}

void ConvLayer::zero_grad() {
  weight_grad.fill(0.0);
  std::fill(bias_grad.begin(), bias_grad.end(), 0.0);
}

int conv_output_extent(int in, int k, int rate, int stride, int pad_lo, int pad_hi) {
  const int span = rate * (k - 1) + 1;
  const int padded = in + pad_lo + pad_hi;
  if (padded < span) return 0;
  return (padded - span) / stride + 1;
}

namespace {

// Column matrix covering the whole batch: sample n occupies columns
// [n*pos, (n+1)*pos). One large GEMM beats a per-sample loop by a wide
// margin at this artifact's tiny spatial extents, and the per-element
// accumulation order stays fixed.
std::vector<double> batched_im2col(const Tensor& x, const ConvLayer& layer,
                                   const ConvGeom& g, int ck, std::size_t pos) {
  const std::size_t total = pos * x.n();
  std::vector<double> col(static_cast<std::size_t>(ck) * total);
  for (int n = 0; n < x.n(); ++n) {
    im2col(x, n, layer, g, col.data() + static_cast<std::size_t>(n) * pos, total);
  }
  return col;
}

}  // namespace

Tensor atrous_conv_forward(const Tensor& x, const ConvLayer& layer) {
  check_forward_args(x, layer);
  const ConvGeom g = geometry(x, layer);
  const int ck = layer.c_in() * layer.kernel() * layer.kernel();
  const std::size_t pos = static_cast<std::size_t>(g.out_h) * g.out_w;
  const std::size_t total = pos * x.n();
  Tensor y(x.n(), layer.c_out(), g.out_h, g.out_w);

  const std::vector<double> col = batched_im2col(x, layer, g, ck, pos);
  std::vector<double> out(static_cast<std::size_t>(layer.c_out()) * total);
  {
    ConstMapMat w(layer.weights.data(), layer.c_out(), ck);
    ConstMapMat xc(col.data(), ck, static_cast<Eigen::Index>(total));
    MapMat om(out.data(), layer.c_out(), static_cast<Eigen::Index>(total));
    om.noalias() = w * xc;
  }
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < layer.c_out(); ++o) {
      const double* src = out.data() + static_cast<std::size_t>(o) * total + n * pos;
      double* dst = y.plane(n, o);
      const double b = layer.bias[o];
      for (std::size_t i = 0; i < pos; ++i) dst[i] = src[i] + b;
    }
  }
  return y;
}

Tensor atrous_conv_forward_direct(const Tensor& x, const ConvLayer& layer) {
  check_forward_args(x, layer);
  const ConvGeom g = geometry(x, layer);
  const int k = layer.kernel();
  Tensor y(x.n(), layer.c_out(), g.out_h, g.out_w);
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < layer.c_out(); ++o) {
      for (int i = 0; i < g.out_h; ++i) {
        for (int j = 0; j < g.out_w; ++j) {
          double acc = layer.bias[o];
          for (int c = 0; c < x.c(); ++c) {
            for (int ki = 0; ki < k; ++ki) {
              const int sy = layer.stride * i + layer.rate * ki - g.pad.top;
              if (sy < 0 || sy >= x.h()) continue;
              for (int kj = 0; kj < k; ++kj) {
                const int sx = layer.stride * j + layer.rate * kj - g.pad.left;
                if (sx < 0 || sx >= x.w()) continue;
                acc += x.at(n, c, sy, sx) * layer.weights.at(o, c, ki, kj);
              }
            }
          }
          y.at(n, o, i, j) = acc;
        }
      }
    }
  }
  return y;
}

std::tuple<Tensor, Tensor, std::vector<double>> atrous_conv_backward(
    const Tensor& x, ConvLayer& layer, const Tensor& grad_out) {
  check_forward_args(x, layer);
  const ConvGeom g = geometry(x, layer);
  if (grad_out.n() != x.n() || grad_out.c() != layer.c_out() ||
      grad_out.h() != g.out_h || grad_out.w() != g.out_w) {
    throw std::invalid_argument("conv backward: grad_out shape " + grad_out.shape_str() +
                                " does not match forward output");
  }
  const int ck = layer.c_in() * layer.kernel() * layer.kernel();
  const std::size_t pos = static_cast<std::size_t>(g.out_h) * g.out_w;
  const std::size_t total = pos * x.n();

  Tensor grad_x(x.n(), x.c(), x.h(), x.w());
  Tensor grad_w(layer.c_out(), layer.c_in(), layer.kernel(), layer.kernel());
  std::vector<double> grad_b(layer.c_out(), 0.0);

  // Batched layout mirroring the forward pass.
  std::vector<double> gy_all(static_cast<std::size_t>(layer.c_out()) * total);
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int o = 0; o < layer.c_out(); ++o) {
      const double* src = grad_out.plane(n, o);
      std::copy(src, src + pos,
                gy_all.data() + static_cast<std::size_t>(o) * total + n * pos);
    }
  }
  const std::vector<double> col = batched_im2col(x, layer, g, ck, pos);
  std::vector<double> col_grad(static_cast<std::size_t>(ck) * total);
  {
    ConstMapMat w(layer.weights.data(), layer.c_out(), ck);
    ConstMapMat gy(gy_all.data(), layer.c_out(), static_cast<Eigen::Index>(total));
    ConstMapMat xc(col.data(), ck, static_cast<Eigen::Index>(total));
    MapMat gw(grad_w.data(), layer.c_out(), ck);
    gw.noalias() = gy * xc.transpose();
    MapMat gc(col_grad.data(), ck, static_cast<Eigen::Index>(total));
    gc.noalias() = w.transpose() * gy;
  }
  for (int n = 0; n < x.n(); ++n) {
    col2im_add(col_grad.data() + static_cast<std::size_t>(n) * pos, total, n, grad_x,
               layer, g);
  }
  for (int o = 0; o < layer.c_out(); ++o) {
    const double* src = gy_all.data() + static_cast<std::size_t>(o) * total;
    double s = 0.0;
    for (std::size_t i = 0; i < total; ++i) s += src[i];
    grad_b[o] = s;
  }

  add_inplace(layer.weight_grad, grad_w);
  for (int o = 0; o < layer.c_out(); ++o) layer.bias_grad[o] += grad_b[o];
  return {std::move(grad_x), std::move(grad_w), std::move(grad_b)};
}

void atrous_conv_backward_params_only(const Tensor& x, ConvLayer& layer,
                                      const Tensor& grad_out) {
  check_forward_args(x, layer);
  const ConvGeom g = geometry(x, layer);
  if (grad_out.n() != x.n() || grad_out.c() != layer.c_out() ||
      grad_out.h() != g.out_h || grad_out.w() != g.out_w) {
    throw std::invalid_argument("conv backward: grad_out shape mismatch");
  }
  const int ck = layer.c_in() * layer.kernel() * layer.kernel();
  const std::size_t pos = static_cast<std::size_t>(g.out_h) * g.out_w;
  const std::size_t total = pos * x.n();

  std::vector<double> gy_all(static_cast<std::size_t>(layer.c_out()) * total);
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int o = 0; o < layer.c_out(); ++o) {
      const double* src = grad_out.plane(n, o);
      std::copy(src, src + pos,
                gy_all.data() + static_cast<std::size_t>(o) * total + n * pos);
    }
  }
  const std::vector<double> col = batched_im2col(x, layer, g, ck, pos);
  {
    ConstMapMat gy(gy_all.data(), layer.c_out(), static_cast<Eigen::Index>(total));
    ConstMapMat xc(col.data(), ck, static_cast<Eigen::Index>(total));
    MapMat gw(layer.weight_grad.data(), layer.c_out(), ck);
    gw.noalias() += gy * xc.transpose();
  }
  for (int o = 0; o < layer.c_out(); ++o) {
    const double* src = gy_all.data() + static_cast<std::size_t>(o) * total;
    double s = 0.0;
    for (std::size_t i = 0; i < total; ++i) s += src[i];
    layer.bias_grad[o] += s;
  }
}

double valid_weight_fraction(int feature_h, int feature_w, int k, int rate) {
  if (feature_h < 1 || feature_w < 1) {
    throw std::invalid_argument("valid_weight_fraction: feature sizes must be >= 1");
  }
  if (k < 1 || k % 2 == 0) {
    throw std::invalid_argument("valid_weight_fraction: kernel size must be odd");
  }
  if (rate < 1) throw std::invalid_argument("valid_weight_fraction: rate must be >= 1");

  // Tap validity separates by axis: a 2-D tap is inside the map iff both of
  // its 1-D offsets are, so the 2-D count is the product of 1-D counts.
  const int half = k / 2;
  auto axis_count = [&](int extent) {
    long long total = 0;
    for (int i = 0; i < extent; ++i) {
      int valid = 0;
      for (int t = -half; t <= half; ++t) {
        const int s = i + rate * t;
        if (s >= 0 && s < extent) ++valid;
      }
      total += valid;
    }
    return total;
  };
  const long long th = axis_count(feature_h);
  const long long tw = axis_count(feature_w);
  const double denom = static_cast<double>(feature_h) * feature_w * k * k;
  return (static_cast<double>(th) * static_cast<double>(tw)) / denom;
}

}  // namespace dlv3
