#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dlv3/conv.hpp"
#include "dlv3/rng.hpp"

using namespace dlv3;

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  for (double& v : t.vec()) v = rng.normal();
  return t;
}

// Test-local reference: plain six-loop standard (rate-1) convolution with
// explicit padding, written independently of the library paths.
Tensor naive_standard_conv(const Tensor& x, const Tensor& w, const std::vector<double>& bias,
                           int stride, const Padding& pad) {
  const int k = w.h();
  const int oh = (x.h() + pad.top + pad.bottom - k) / stride + 1;
  const int ow = (x.w() + pad.left + pad.right - k) / stride + 1;
  Tensor y(x.n(), w.n(), oh, ow);
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < w.n(); ++o) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double acc = bias[o];
          for (int c = 0; c < x.c(); ++c) {
            for (int ki = 0; ki < k; ++ki) {
              for (int kj = 0; kj < k; ++kj) {
                const int sy = stride * i + ki - pad.top;
                const int sx = stride * j + kj - pad.left;
                if (sy < 0 || sy >= x.h() || sx < 0 || sx >= x.w()) continue;
                acc += x.at(n, c, sy, sx) * w.at(o, c, ki, kj);
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

// Expands a kernel by inserting rate-1 zeros between taps; with padding
// adjusted this reduces atrous convolution to standard convolution.
Tensor insert_zeros(const Tensor& w, int rate) {
  const int k = w.h();
  const int ke = rate * (k - 1) + 1;
  Tensor out(w.n(), w.c(), ke, ke);
  for (int o = 0; o < w.n(); ++o) {
    for (int c = 0; c < w.c(); ++c) {
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          out.at(o, c, ki * rate, kj * rate) = w.at(o, c, ki, kj);
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("rate 1 equals the naive standard convolution bit-for-bit") {
  Rng rng(101);
  Tensor x = random_tensor(2, 3, 6, 7, rng);
  ConvLayer layer(4, 3, 3, /*rate=*/1, /*stride=*/1);
  layer.init_he(rng);
  for (double& b : layer.bias) b = rng.normal();
  Tensor direct = atrous_conv_forward_direct(x, layer);
  Tensor ref = naive_standard_conv(x, layer.weights, layer.bias, 1, {1, 1, 1, 1});
  CHECK(direct.vec() == ref.vec());
}

TEST_CASE("one-row atrous example sums taps two apart") {
  Tensor x(1, 1, 1, 5, {1, 2, 3, 4, 5});
  ConvLayer layer(1, 1, 3, /*rate=*/2, /*stride=*/1);
  layer.weights.fill(0.0);
  // 1x3 all-ones kernel realized in the middle row of the 3x3 kernel
  layer.weights.at(0, 0, 1, 0) = 1.0;
  layer.weights.at(0, 0, 1, 1) = 1.0;
  layer.weights.at(0, 0, 1, 2) = 1.0;
  Tensor y = atrous_conv_forward(x, layer);
  const std::vector<double> expected{4, 6, 9, 6, 8};
  CHECK(y.h() == 1);
  CHECK(y.w() == 5);
  for (int j = 0; j < 5; ++j) CHECK(y.at(0, 0, 0, j) == doctest::Approx(expected[j]));
}

TEST_CASE("unit impulse reproduces the kernel at multiples of the rate") {
  Rng rng(103);
  ConvLayer layer(1, 1, 3, /*rate=*/3, /*stride=*/1);
  layer.init_he(rng);
  Tensor x(1, 1, 9, 9);
  x.at(0, 0, 4, 4) = 1.0;
  Tensor y = atrous_conv_forward(x, layer);
  for (int i = 0; i < 9; ++i) {
    for (int j = 0; j < 9; ++j) {
      const int di = i - 4, dj = j - 4;
      double expected = 0.0;
      if (di % 3 == 0 && dj % 3 == 0 && std::abs(di) <= 3 && std::abs(dj) <= 3) {
        // The correlation of an impulse picks up the mirrored kernel tap.
        expected = layer.weights.at(0, 0, 1 - di / 3, 1 - dj / 3);
      }
      CHECK(y.at(0, 0, i, j) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("fast path matches the direct path") {
  Rng rng(107);
  for (int rate : {1, 2, 4}) {
    for (int stride : {1, 2}) {
      Tensor x = random_tensor(2, 3, 9, 8, rng);
      ConvLayer layer(5, 3, 3, rate, stride);
      layer.init_he(rng);
      for (double& b : layer.bias) b = rng.normal();
      Tensor fast = atrous_conv_forward(x, layer);
      Tensor direct = atrous_conv_forward_direct(x, layer);
      CHECK(max_abs_diff(fast, direct) <= 1e-10);
    }
  }
}

TEST_CASE("dilated-kernel equivalence: zero-inserted kernel at rate 1") {
  Rng rng(109);
  for (int rate : {2, 3, 5}) {
    Tensor x = random_tensor(1, 2, 11, 10, rng);
    ConvLayer layer(3, 2, 3, rate, 1);
    layer.init_he(rng);
    for (double& b : layer.bias) b = rng.normal();
    Tensor atrous = atrous_conv_forward(x, layer);

    Tensor expanded = insert_zeros(layer.weights, rate);
    const int pad = rate * (3 - 1) / 2;
    Tensor ref = naive_standard_conv(x, expanded, layer.bias, 1, {pad, pad, pad, pad});
    CHECK(max_abs_diff(atrous, ref) <= 1e-10);
  }
}

TEST_CASE("stride equals stride-1 output subsampled, bit-exact") {
  Rng rng(113);
  for (int rate : {1, 2}) {
    for (int stride : {2, 4}) {
      Tensor x = random_tensor(2, 2, 9, 13, rng);
      ConvLayer strided(3, 2, 3, rate, stride);
      strided.init_he(rng);
      for (double& b : strided.bias) b = rng.normal();
      ConvLayer dense = strided;
      dense.stride = 1;
      Tensor a = atrous_conv_forward_direct(x, strided);
      Tensor b = subsample(atrous_conv_forward_direct(x, dense), stride);
      CHECK(a.vec() == b.vec());
    }
  }
}

TEST_CASE("zero upstream gradient produces zero gradients") {
  Rng rng(127);
  Tensor x = random_tensor(1, 2, 5, 5, rng);
  ConvLayer layer(2, 2, 3, 2, 1);
  layer.init_he(rng);
  Tensor g(1, 2, 5, 5);
  auto [gx, gw, gb] = atrous_conv_backward(x, layer, g);
  CHECK(max_abs(gx) == 0.0);
  CHECK(max_abs(gw) == 0.0);
  for (double v : gb) CHECK(v == 0.0);
}

TEST_CASE("grad_bias is the per-channel sum of grad_out") {
  Rng rng(131);
  Tensor x = random_tensor(2, 2, 5, 5, rng);
  ConvLayer layer(3, 2, 3, 1, 1);
  layer.init_he(rng);
  Tensor g = random_tensor(2, 3, 5, 5, rng);
  auto [gx, gw, gb] = atrous_conv_backward(x, layer, g);
  for (int o = 0; o < 3; ++o) {
    double s = 0.0;
    for (int n = 0; n < 2; ++n) {
      const double* p = g.plane(n, o);
      for (int i = 0; i < 25; ++i) s += p[i];
    }
    CHECK(gb[o] == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("finite differences confirm grad_w on the one-row example") {
  Tensor x(1, 1, 1, 5, {1, 2, 3, 4, 5});
  ConvLayer layer(1, 1, 3, /*rate=*/2, /*stride=*/1);
  layer.weights.fill(0.0);
  layer.weights.at(0, 0, 1, 0) = 1.0;
  layer.weights.at(0, 0, 1, 1) = 1.0;
  layer.weights.at(0, 0, 1, 2) = 1.0;

  Rng rng(137);
  Tensor g = random_tensor(1, 1, 1, 5, rng);
  layer.zero_grad();
  auto [gx, gw, gb] = atrous_conv_backward(x, layer, g);

  const double eps = 1e-6;
  for (int ki = 0; ki < 3; ++ki) {
    for (int kj = 0; kj < 3; ++kj) {
      double& slot = layer.weights.at(0, 0, ki, kj);
      const double orig = slot;
      auto objective = [&] {
        Tensor y = atrous_conv_forward(x, layer);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * g.data()[i];
        return s;
      };
      slot = orig + eps;
      const double up = objective();
      slot = orig - eps;
      const double down = objective();
      slot = orig;
      const double fd = (up - down) / (2 * eps);
      const double analytic = gw.at(0, 0, ki, kj);
      CHECK(std::fabs(analytic - fd) / std::max({1.0, std::fabs(analytic), std::fabs(fd)}) <=
            1e-7);
    }
  }
}

TEST_CASE("valid_weight_fraction matches the hand counts on a 65x65 map") {
  CHECK(valid_weight_fraction(65, 65, 3, 65) == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
  const double expected = (193.0 / 195.0) * (193.0 / 195.0);
  CHECK(valid_weight_fraction(65, 65, 3, 1) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("valid_weight_fraction is 1 for a 1x1 kernel") {
  for (int rate : {1, 7, 100}) CHECK(valid_weight_fraction(33, 65, 1, rate) == 1.0);
}

TEST_CASE("valid_weight_fraction agrees with brute-force tap enumeration") {
  // Independent 2-D oracle: enumerate every output position and tap.
  auto brute = [](int fh, int fw, int k, int rate) {
    const int half = k / 2;
    long long valid = 0;
    for (int i = 0; i < fh; ++i) {
      for (int j = 0; j < fw; ++j) {
        for (int ki = -half; ki <= half; ++ki) {
          for (int kj = -half; kj <= half; ++kj) {
            const int sy = i + rate * ki;
            const int sx = j + rate * kj;
            if (sy >= 0 && sy < fh && sx >= 0 && sx < fw) ++valid;
          }
        }
      }
    }
    return static_cast<double>(valid) / (static_cast<double>(fh) * fw * k * k);
  };
  Rng rng(139);
  for (int trial = 0; trial < 8; ++trial) {
    const int fh = 3 + rng.uniform_int(30);
    const int fw = 3 + rng.uniform_int(30);
    const int k = 1 + 2 * rng.uniform_int(3);
    const int rate = 1 + rng.uniform_int(40);
    CHECK(valid_weight_fraction(fh, fw, k, rate) ==
          doctest::Approx(brute(fh, fw, k, rate)).epsilon(1e-13));
  }
}

TEST_CASE("valid_weight_fraction is monotone in rate and map size") {
  double prev = 2.0;
  for (int rate = 1; rate <= 70; ++rate) {
    const double f = valid_weight_fraction(65, 65, 3, rate);
    CHECK(f <= prev + 1e-15);
    prev = f;
  }
  for (int rate : {1, 4, 16}) {
    double prev_size = 0.0;
    for (int size : {9, 17, 33, 65, 129}) {
      const double f = valid_weight_fraction(size, size, 3, rate);
      CHECK(f >= prev_size - 1e-15);
      prev_size = f;
    }
  }
}

TEST_CASE("conv rejects bad inputs") {
  Rng rng(149);
  Tensor x = random_tensor(1, 2, 4, 4, rng);
  ConvLayer layer(2, 3, 3);  // expects 3 input channels
  layer.init_he(rng);
  CHECK_THROWS_AS(atrous_conv_forward(x, layer), std::invalid_argument);
  CHECK_THROWS_AS(ConvLayer(2, 2, 4), std::invalid_argument);  // even kernel
  Tensor empty(1, 3, 0, 4);
  ConvLayer ok(2, 3, 3);
  ok.init_he(rng);
  CHECK_THROWS_AS(atrous_conv_forward(empty, ok), std::invalid_argument);
  Tensor good = random_tensor(1, 3, 4, 4, rng);
  Tensor bad_grad(1, 2, 5, 5);
  CHECK_THROWS_AS(atrous_conv_backward(good, ok, bad_grad), std::invalid_argument);
}
