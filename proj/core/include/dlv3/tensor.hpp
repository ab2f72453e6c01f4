#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace dlv3 {

// Dense 4-D array in NCHW layout, row-major with the width index fastest.
// Element type is double throughout: finite-difference gradient checks need
// the precision, and at this scale memory is a non-issue.
//
// Tensors are immutable by convention: operations return new values unless
// their name says otherwise. They are plain values, safe to copy and share.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w);
  Tensor(int n, int c, int h, int w, std::vector<double> data);

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
  static Tensor full(int n, int c, int h, int w, double value);

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }
  std::string shape_str() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
  }
  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  // Pointer to the start of one (n, c) plane.
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(double value);

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

struct Padding {
  int top = 0, bottom = 0, left = 0, right = 0;
};

// Geometric primitives ------------------------------------------------------

// Pads the spatial border with zeros. Amounts must be non-negative.
Tensor zero_pad(const Tensor& x, const Padding& pad);

// Removes a border previously added by zero_pad (inverse operation).
Tensor crop(const Tensor& x, const Padding& pad);

// Keeps rows/columns 0, s, 2s, ...; output is (n, c, ceil(h/s), ceil(w/s)).
Tensor subsample(const Tensor& x, int stride);

// Bilinear resize with align-corners semantics: output index i samples source
// coordinate i*(h-1)/(out_h-1); for a singleton output axis it samples the
// center. Corner pixels are preserved exactly.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

// Transpose of bilinear_resize: scatters an upstream gradient of the resized
// tensor back onto the (in_h, in_w) grid.
Tensor bilinear_resize_backward(const Tensor& grad_out, int in_h, int in_w);

// Nearest-neighbor resize on the same align-corners grid (rounds the source
// coordinate). Used for label maps, where interpolating class ids is
// meaningless.
Tensor nearest_resize(const Tensor& x, int out_h, int out_w);

// Mirrors the width axis.
Tensor flip_horizontal(const Tensor& x);

// Elementwise ops and reductions --------------------------------------------

Tensor relu(const Tensor& x);
// grad_in = grad_out where the forward output was > 0, else 0.
Tensor relu_backward(const Tensor& out, const Tensor& grad_out);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
void add_inplace(Tensor& acc, const Tensor& x);

double sum(const Tensor& x);
double mean(const Tensor& x);
double max_abs(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Reduces each (n, c) plane to its mean: output is (n, c, 1, 1).
Tensor global_avg_pool(const Tensor& x);
// Distributes grad/(h*w) uniformly over each plane.
Tensor global_avg_pool_backward(const Tensor& grad_out, int h, int w);

// Concatenates along the channel axis; all parts must agree on n, h, w.
Tensor concat_channels(const std::vector<const Tensor*>& parts);
// Splits a channel-concatenated gradient back into the given channel counts.
std::vector<Tensor> split_channels(const Tensor& x, const std::vector<int>& channels);

}  // namespace dlv3
