#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dlv3/batchnorm.hpp"
#include "dlv3/gradcheck.hpp"
#include "dlv3/rng.hpp"

using namespace dlv3;

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  for (double& v : t.vec()) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("constant input in train mode yields beta everywhere") {
  BatchNorm bn(2);
  bn.beta = {0.7, -1.2};
  Tensor x(2, 2, 3, 3);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 2; ++c) {
      double* p = x.plane(n, c);
      for (int i = 0; i < 9; ++i) p[i] = 4.2 + c;
    }
  }
  Tensor y = bn_forward(x, bn, BnMode::Train);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 2; ++c) {
      const double* p = y.plane(n, c);
      for (int i = 0; i < 9; ++i) CHECK(p[i] == doctest::Approx(bn.beta[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("train mode normalizes to zero mean unit variance") {
  Rng rng(211);
  BatchNorm bn(3);
  Tensor x = random_tensor(2, 3, 4, 4, rng);
  Tensor y = bn_forward(x, bn, BnMode::Train);
  const int m = 2 * 4 * 4;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int n = 0; n < 2; ++n) {
      const double* p = y.plane(n, c);
      for (int i = 0; i < 16; ++i) mean += p[i];
    }
    mean /= m;
    for (int n = 0; n < 2; ++n) {
      const double* p = y.plane(n, c);
      for (int i = 0; i < 16; ++i) var += (p[i] - mean) * (p[i] - mean);
    }
    var /= m;
    CHECK(std::fabs(mean) <= 1e-8);
    CHECK(std::fabs(var - 1.0) <= 2e-4);  // off by the epsilon in the denominator
  }
}

TEST_CASE("one train step folds the batch mean into the running mean") {
  BatchNorm bn(1);
  bn.decay = 0.9997;
  Tensor x(1, 1, 2, 2, {3.0, 5.0, 7.0, 9.0});  // batch mean 6
  bn_forward(x, bn, BnMode::Train);
  CHECK(bn.running_mean[0] == doctest::Approx(0.0003 * 6.0).epsilon(1e-12));
}

TEST_CASE("train mode requires at least two elements per channel") {
  BatchNorm bn(1);
  Tensor x(1, 1, 1, 1, {2.0});
  CHECK_THROWS_AS(bn_forward(x, bn, BnMode::Train), std::invalid_argument);
}

TEST_CASE("frozen forward is pure and repeatable") {
  Rng rng(223);
  BatchNorm bn(2);
  bn.running_mean = {0.5, -0.25};
  bn.running_var = {2.0, 0.5};
  bn.gamma = {1.5, 0.75};
  bn.beta = {0.1, -0.2};
  freeze(bn);
  const BatchNorm snapshot = bn;
  Tensor x = random_tensor(2, 2, 3, 3, rng);
  Tensor y1 = bn_forward(x, bn);
  Tensor y2 = bn_forward(x, bn);
  CHECK(y1.vec() == y2.vec());
  CHECK(bn.running_mean == snapshot.running_mean);
  CHECK(bn.running_var == snapshot.running_var);
  CHECK(bn.gamma == snapshot.gamma);
}

TEST_CASE("freeze and unfreeze toggle idempotently") {
  BatchNorm bn(1);
  freeze(bn);
  CHECK(bn.frozen());
  freeze(bn);
  CHECK(bn.frozen());
  unfreeze(bn);
  CHECK(!bn.frozen());
  unfreeze(bn);
  CHECK(!bn.frozen());
}

TEST_CASE("running stats converge geometrically to a repeated batch") {
  Rng rng(227);
  BatchNorm bn(1);
  bn.decay = 0.9;
  Tensor x = random_tensor(1, 1, 4, 4, rng);
  double batch_mean = 0.0;
  for (int i = 0; i < 16; ++i) batch_mean += x.plane(0, 0)[i];
  batch_mean /= 16.0;
  double prev_gap = std::fabs(bn.running_mean[0] - batch_mean);
  for (int step = 0; step < 6; ++step) {
    bn_forward(x, bn, BnMode::Train);
    const double gap = std::fabs(bn.running_mean[0] - batch_mean);
    CHECK(gap == doctest::Approx(prev_gap * bn.decay).epsilon(1e-9));
    prev_gap = gap;
  }
}

TEST_CASE("zero upstream gradient zeroes every gradient") {
  Rng rng(229);
  BatchNorm bn(2);
  Tensor x = random_tensor(2, 2, 3, 3, rng);
  bn_forward(x, bn, BnMode::Train);
  Tensor g(2, 2, 3, 3);
  auto [gx, gg, gb] = bn_backward(x, bn, g, BnMode::Train);
  CHECK(max_abs(gx) == 0.0);
  for (double v : gg) CHECK(v == 0.0);
  for (double v : gb) CHECK(v == 0.0);
}

TEST_CASE("grad_beta is the per-channel sum of grad_out") {
  Rng rng(233);
  BatchNorm bn(3);
  Tensor x = random_tensor(2, 3, 4, 4, rng);
  bn_forward(x, bn, BnMode::Train);
  Tensor g = random_tensor(2, 3, 4, 4, rng);
  auto [gx, gg, gb] = bn_backward(x, bn, g, BnMode::Train);
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (int n = 0; n < 2; ++n) {
      const double* p = g.plane(n, c);
      for (int i = 0; i < 16; ++i) s += p[i];
    }
    CHECK(gb[c] == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("finite differences confirm the train-mode backward") {
  const GradCheckReport r = gradcheck_batchnorm(2024);
  CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("backward rejects mismatched shapes") {
  Rng rng(239);
  BatchNorm bn(2);
  Tensor x = random_tensor(1, 2, 3, 3, rng);
  bn_forward(x, bn, BnMode::Train);
  Tensor bad(1, 2, 2, 2);
  CHECK_THROWS_AS(bn_backward(x, bn, bad, BnMode::Train), std::invalid_argument);
}
