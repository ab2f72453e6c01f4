#include "dlv3/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace dlv3 {

namespace {

void check_nonnegative(int n, int c, int h, int w) {
  if (n < 0 || c < 0 || h < 0 || w < 0) {
    throw std::invalid_argument("tensor shape components must be non-negative");
  }
}

}  // namespace

Tensor::Tensor(int n, int c, int h, int w) : n_(n), c_(c), h_(h), w_(w) {
  check_nonnegative(n, c, h, w);
  data_.assign(static_cast<std::size_t>(n) * c * h * w, 0.0);
}

Tensor::Tensor(int n, int c, int h, int w, std::vector<double> data)
    : n_(n), c_(c), h_(h), w_(w), data_(std::move(data)) {
  check_nonnegative(n, c, h, w);
  if (data_.size() != static_cast<std::size_t>(n) * c * h * w) {
    throw std::invalid_argument("tensor data length does not match shape " + shape_str());
  }
}

Tensor Tensor::full(int n, int c, int h, int w, double value) {
  Tensor t(n, c, h, w);
  t.fill(value);
  return t;
}

std::string Tensor::shape_str() const {
  return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," +
         std::to_string(h_) + "," + std::to_string(w_) + ")";
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor zero_pad(const Tensor& x, const Padding& pad) {
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0) {
    throw std::invalid_argument("zero_pad amounts must be non-negative");
  }
  const int oh = x.h() + pad.top + pad.bottom;
  const int ow = x.w() + pad.left + pad.right;
  Tensor out(x.n(), x.c(), oh, ow);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (int y = 0; y < x.h(); ++y) {
        std::memcpy(dst + static_cast<std::size_t>(y + pad.top) * ow + pad.left,
                    src + static_cast<std::size_t>(y) * x.w(),
                    sizeof(double) * x.w());
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& x, const Padding& pad) {
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0) {
    throw std::invalid_argument("crop amounts must be non-negative");
  }
  const int oh = x.h() - pad.top - pad.bottom;
  const int ow = x.w() - pad.left - pad.right;
  if (oh < 0 || ow < 0) {
    throw std::invalid_argument("crop amounts exceed tensor size");
  }
  Tensor out(x.n(), x.c(), oh, ow);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (int y = 0; y < oh; ++y) {
        std::memcpy(dst + static_cast<std::size_t>(y) * ow,
                    src + static_cast<std::size_t>(y + pad.top) * x.w() + pad.left,
                    sizeof(double) * ow);
      }
    }
  }
  return out;
}

Tensor subsample(const Tensor& x, int stride) {
  if (stride < 1) throw std::invalid_argument("subsample stride must be >= 1");
  if (stride == 1) return x;
  const int oh = (x.h() + stride - 1) / stride;
  const int ow = (x.w() + stride - 1) / stride;
  Tensor out(x.n(), x.c(), oh, ow);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (int y = 0; y < oh; ++y) {
        for (int xw = 0; xw < ow; ++xw) {
          dst[static_cast<std::size_t>(y) * ow + xw] =
              src[static_cast<std::size_t>(y) * stride * x.w() + xw * stride];
        }
      }
    }
  }
  return out;
}

namespace {

// Align-corners source coordinate for output index i of size out_n over an
// input of size in_n. Singleton output axes sample the input center.
inline double src_coord(int i, int in_n, int out_n) {
  if (out_n > 1) {
    return static_cast<double>(i) * (in_n - 1) / (out_n - 1);
  }
  return 0.5 * (in_n - 1);
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("bilinear_resize output size must be >= 1");
  }
  if (x.h() < 1 || x.w() < 1) {
    throw std::invalid_argument("bilinear_resize input has empty spatial extent");
  }
  if (out_h == x.h() && out_w == x.w()) return x;

  Tensor out(x.n(), x.c(), out_h, out_w);
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (int j = 0; j < out_w; ++j) {
    double s = src_coord(j, x.w(), out_w);
    x0[j] = static_cast<int>(std::floor(s));
    x0[j] = std::min(x0[j], x.w() - 1);
    x1[j] = std::min(x0[j] + 1, x.w() - 1);
    fx[j] = s - x0[j];
  }
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (int i = 0; i < out_h; ++i) {
        double s = src_coord(i, x.h(), out_h);
        int y0 = std::min(static_cast<int>(std::floor(s)), x.h() - 1);
        int y1 = std::min(y0 + 1, x.h() - 1);
        double fy = s - y0;
        const double* row0 = src + static_cast<std::size_t>(y0) * x.w();
        const double* row1 = src + static_cast<std::size_t>(y1) * x.w();
        for (int j = 0; j < out_w; ++j) {
          double a = row0[x0[j]], b = row0[x1[j]];
          double c0 = row1[x0[j]], d = row1[x1[j]];
          double top = a + (b - a) * fx[j];
          double bot = c0 + (d - c0) * fx[j];
          dst[static_cast<std::size_t>(i) * out_w + j] = top + (bot - top) * fy;
        }
      }
    }
  }
  return out;
}

Tensor bilinear_resize_backward(const Tensor& grad_out, int in_h, int in_w) {
  if (grad_out.h() == in_h && grad_out.w() == in_w) return grad_out;
  Tensor grad_in(grad_out.n(), grad_out.c(), in_h, in_w);
  const int out_h = grad_out.h(), out_w = grad_out.w();
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (int j = 0; j < out_w; ++j) {
    double s = src_coord(j, in_w, out_w);
    x0[j] = std::min(static_cast<int>(std::floor(s)), in_w - 1);
    x1[j] = std::min(x0[j] + 1, in_w - 1);
    fx[j] = s - x0[j];
  }
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int c = 0; c < grad_out.c(); ++c) {
      const double* g = grad_out.plane(n, c);
      double* dst = grad_in.plane(n, c);
      for (int i = 0; i < out_h; ++i) {
        double s = src_coord(i, in_h, out_h);
        int y0 = std::min(static_cast<int>(std::floor(s)), in_h - 1);
        int y1 = std::min(y0 + 1, in_h - 1);
        double fy = s - y0;
        for (int j = 0; j < out_w; ++j) {
          double v = g[static_cast<std::size_t>(i) * out_w + j];
          dst[static_cast<std::size_t>(y0) * in_w + x0[j]] += v * (1 - fy) * (1 - fx[j]);
          dst[static_cast<std::size_t>(y0) * in_w + x1[j]] += v * (1 - fy) * fx[j];
          dst[static_cast<std::size_t>(y1) * in_w + x0[j]] += v * fy * (1 - fx[j]);
          dst[static_cast<std::size_t>(y1) * in_w + x1[j]] += v * fy * fx[j];
        }
      }
    }
  }
  return grad_in;
}

Tensor nearest_resize(const Tensor& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("nearest_resize output size must be >= 1");
  }
  if (out_h == x.h() && out_w == x.w()) return x;
  Tensor out(x.n(), x.c(), out_h, out_w);
  std::vector<int> xs(out_w);
  for (int j = 0; j < out_w; ++j) {
    xs[j] = std::min(static_cast<int>(std::lround(src_coord(j, x.w(), out_w))), x.w() - 1);
  }
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (int i = 0; i < out_h; ++i) {
        int ys = std::min(static_cast<int>(std::lround(src_coord(i, x.h(), out_h))), x.h() - 1);
        const double* row = src + static_cast<std::size_t>(ys) * x.w();
        for (int j = 0; j < out_w; ++j) {
          dst[static_cast<std::size_t>(i) * out_w + j] = row[xs[j]];
        }
      }
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& x) {
  Tensor out(x.n(), x.c(), x.h(), x.w());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (int y = 0; y < x.h(); ++y) {
        for (int xw = 0; xw < x.w(); ++xw) {
          dst[static_cast<std::size_t>(y) * x.w() + xw] =
              src[static_cast<std::size_t>(y) * x.w() + (x.w() - 1 - xw)];
        }
      }
    }
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.vec()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& out, const Tensor& grad_out) {
  if (!out.same_shape(grad_out)) {
    throw std::invalid_argument("relu_backward shape mismatch");
  }
  Tensor grad_in = grad_out;
  const double* o = out.data();
  double* g = grad_in.data();
  for (std::size_t i = 0; i < grad_in.size(); ++i) {
    if (o[i] <= 0.0) g[i] = 0.0;
  }
  return grad_in;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add shape mismatch");
  Tensor out = a;
  const double* pb = b.data();
  double* pa = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) pa[i] += pb[i];
  return out;
}

Tensor scale(const Tensor& x, double s) {
  Tensor out = x;
  for (double& v : out.vec()) v *= s;
  return out;
}

void add_inplace(Tensor& acc, const Tensor& x) {
  if (!acc.same_shape(x)) throw std::invalid_argument("add_inplace shape mismatch");
  const double* px = x.data();
  double* pa = acc.data();
  for (std::size_t i = 0; i < acc.size(); ++i) pa[i] += px[i];
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.vec()) s += v;
  return s;
}

double mean(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean of empty tensor");
  return sum(x) / static_cast<double>(x.size());
}

double max_abs(const Tensor& x) {
  double m = 0.0;
  for (double v : x.vec()) m = std::max(m, std::fabs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff shape mismatch");
  double m = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(pa[i] - pb[i]));
  return m;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.h() < 1 || x.w() < 1) {
    throw std::invalid_argument("global_avg_pool needs non-empty spatial extent");
  }
  Tensor out(x.n(), x.c(), 1, 1);
  const double inv = 1.0 / (static_cast<double>(x.h()) * x.w());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double s = 0.0;
      for (int i = 0; i < x.h() * x.w(); ++i) s += src[i];
      out.at(n, c, 0, 0) = s * inv;
    }
  }
  return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, int h, int w) {
  Tensor grad_in(grad_out.n(), grad_out.c(), h, w);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int c = 0; c < grad_out.c(); ++c) {
      const double v = grad_out.at(n, c, 0, 0) * inv;
      double* dst = grad_in.plane(n, c);
      for (int i = 0; i < h * w; ++i) dst[i] = v;
    }
  }
  return grad_in;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels of nothing");
  int total_c = 0;
  const Tensor& first = *parts.front();
  for (const Tensor* p : parts) {
    if (p->n() != first.n() || p->h() != first.h() || p->w() != first.w()) {
      throw std::invalid_argument("concat_channels spatial/batch mismatch");
    }
    total_c += p->c();
  }
  Tensor out(first.n(), total_c, first.h(), first.w());
  const std::size_t plane = static_cast<std::size_t>(first.h()) * first.w();
  for (int n = 0; n < first.n(); ++n) {
    int c_off = 0;
    for (const Tensor* p : parts) {
      std::memcpy(out.plane(n, c_off), p->plane(n, 0),
                  sizeof(double) * plane * p->c());
      c_off += p->c();
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& x, const std::vector<int>& channels) {
  int total = 0;
  for (int c : channels) total += c;
  if (total != x.c()) throw std::invalid_argument("split_channels counts do not sum to c");
  std::vector<Tensor> parts;
  parts.reserve(channels.size());
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  int c_off = 0;
  for (int c : channels) {
    Tensor part(x.n(), c, x.h(), x.w());
    for (int n = 0; n < x.n(); ++n) {
      std::memcpy(part.plane(n, 0), x.plane(n, c_off), sizeof(double) * plane * c);
    }
    parts.push_back(std::move(part));
    c_off += c;
  }
  return parts;
}

}  // namespace dlv3
