#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dlv3/rng.hpp"
#include "dlv3/tensor.hpp"

using namespace dlv3;

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  for (double& v : t.vec()) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("tensor shape and data length agree") {
  Tensor t(2, 3, 4, 5);
  CHECK(t.size() == 2u * 3 * 4 * 5);
  CHECK_THROWS_AS(Tensor(1, 1, 2, 2, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("zero_pad identity with zero amounts") {
  Rng rng(1);
  Tensor x = random_tensor(1, 1, 2, 2, rng);
  Tensor padded = zero_pad(x, {0, 0, 0, 0});
  CHECK(max_abs_diff(x, padded) == 0.0);
}

TEST_CASE("zero_pad puts a single value at the center") {
  Tensor x = Tensor::full(1, 1, 1, 1, 5.0);
  Tensor p = zero_pad(x, {1, 1, 1, 1});
  CHECK(p.h() == 3);
  CHECK(p.w() == 3);
  for (int y = 0; y < 3; ++y) {
    for (int xx = 0; xx < 3; ++xx) {
      CHECK(p.at(0, 0, y, xx) == (y == 1 && xx == 1 ? 5.0 : 0.0));
    }
  }
}

TEST_CASE("zero_pad shifts the interior exactly") {
  Rng rng(7);
  Tensor x = random_tensor(1, 2, 4, 4, rng);
  Tensor p = zero_pad(x, {2, 1, 0, 3});
  CHECK(p.h() == 7);
  CHECK(p.w() == 7);
  // Index-shift oracle: interior checksum matches, border is exactly zero.
  double interior = 0.0;
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 7; ++y) {
      for (int xx = 0; xx < 7; ++xx) {
        const bool inside = y >= 2 && y < 6 && xx < 4;
        if (inside) {
          CHECK(p.at(0, c, y, xx) == x.at(0, c, y - 2, xx));
          interior += p.at(0, c, y, xx);
        } else {
          CHECK(p.at(0, c, y, xx) == 0.0);
        }
      }
    }
  }
  CHECK(interior == doctest::Approx(sum(x)).epsilon(1e-12));
}

TEST_CASE("zero_pad then crop is the identity") {
  Rng rng(3);
  Tensor x = random_tensor(2, 3, 5, 6, rng);
  const Padding pad{2, 1, 3, 0};
  CHECK(max_abs_diff(crop(zero_pad(x, pad), pad), x) == 0.0);
}

TEST_CASE("zero_pad rejects negative amounts") {
  Tensor x(1, 1, 2, 2);
  CHECK_THROWS_AS(zero_pad(x, {-1, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("subsample stride 1 is bit-exact identity") {
  Rng rng(5);
  Tensor x = random_tensor(1, 2, 5, 7, rng);
  Tensor s = subsample(x, 1);
  CHECK(x.vec() == s.vec());
}

TEST_CASE("subsample keeps positions 0, s, 2s") {
  Tensor x(1, 1, 5, 5);
  for (int y = 0; y < 5; ++y) {
    for (int xx = 0; xx < 5; ++xx) x.at(0, 0, y, xx) = y * 5 + xx;
  }
  Tensor s = subsample(x, 2);
  CHECK(s.h() == 3);
  CHECK(s.w() == 3);
  const std::vector<double> expected{0, 2, 4, 10, 12, 14, 20, 22, 24};
  CHECK(s.vec() == expected);
}

TEST_CASE("subsample shape arithmetic") {
  Tensor x(1, 1, 4, 4);
  Tensor s = subsample(x, 2);
  CHECK(s.h() == 2);
  CHECK(s.w() == 2);
}

TEST_CASE("bilinear_resize to the same size is exact") {
  Rng rng(11);
  Tensor x = random_tensor(1, 3, 4, 6, rng);
  CHECK(max_abs_diff(bilinear_resize(x, 4, 6), x) <= 1e-12);
}

TEST_CASE("bilinear_resize interpolates a row linearly") {
  Tensor x(1, 1, 1, 2, {0.0, 2.0});
  Tensor r = bilinear_resize(x, 1, 3);
  CHECK(r.at(0, 0, 0, 0) == doctest::Approx(0.0));
  CHECK(r.at(0, 0, 0, 1) == doctest::Approx(1.0));
  CHECK(r.at(0, 0, 0, 2) == doctest::Approx(2.0));
}

TEST_CASE("bilinear_resize 2x2 to 3x3 center is the four-neighbor mean") {
  Tensor x(1, 1, 2, 2, {0.0, 2.0, 4.0, 6.0});
  Tensor r = bilinear_resize(x, 3, 3);
  CHECK(r.at(0, 0, 1, 1) == doctest::Approx(3.0));
  // corners preserved exactly
  CHECK(r.at(0, 0, 0, 0) == 0.0);
  CHECK(r.at(0, 0, 0, 2) == 2.0);
  CHECK(r.at(0, 0, 2, 0) == 4.0);
  CHECK(r.at(0, 0, 2, 2) == 6.0);
}

TEST_CASE("align-corners round trip reproduces the original grid") {
  Rng rng(13);
  for (auto [h, w] : {std::pair{5, 9}, {3, 3}, {9, 5}}) {
    Tensor x = random_tensor(1, 2, h, w, rng);
    Tensor up = bilinear_resize(x, 2 * h - 1, 2 * w - 1);
    Tensor back = bilinear_resize(up, h, w);
    CHECK(max_abs_diff(back, x) <= 1e-10);
  }
}

TEST_CASE("bilinear_resize backward is the transpose of forward") {
  // <grad, resize(x)> == <resize_backward(grad), x> for random pairs.
  Rng rng(17);
  Tensor x = random_tensor(1, 2, 4, 5, rng);
  Tensor g = random_tensor(1, 2, 7, 9, rng);
  Tensor y = bilinear_resize(x, 7, 9);
  Tensor gx = bilinear_resize_backward(g, 4, 5);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y.data()[i] * g.data()[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data()[i] * gx.data()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("flip_horizontal is an involution") {
  Rng rng(19);
  Tensor x = random_tensor(2, 3, 4, 5, rng);
  CHECK(max_abs_diff(flip_horizontal(flip_horizontal(x)), x) == 0.0);
}

TEST_CASE("global_avg_pool of a constant map is that constant") {
  Tensor x = Tensor::full(2, 3, 4, 4, 2.5);
  Tensor p = global_avg_pool(x);
  CHECK(p.h() == 1);
  CHECK(p.w() == 1);
  CHECK(p.at(1, 2, 0, 0) == doctest::Approx(2.5));
}

TEST_CASE("concat then split round trips") {
  Rng rng(23);
  Tensor a = random_tensor(2, 3, 4, 4, rng);
  Tensor b = random_tensor(2, 5, 4, 4, rng);
  Tensor cat = concat_channels({&a, &b});
  CHECK(cat.c() == 8);
  auto parts = split_channels(cat, {3, 5});
  CHECK(max_abs_diff(parts[0], a) == 0.0);
  CHECK(max_abs_diff(parts[1], b) == 0.0);
}
