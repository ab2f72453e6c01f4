#include "dlv3/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "dlv3/aspp.hpp"
#include "dlv3/conv.hpp"
#include "dlv3/rng.hpp"
#include "dlv3/train.hpp"

namespace dlv3 {

double gradient_error(const std::vector<double>& analytic,
                      const std::vector<double>& numeric) {
  double diff = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::fabs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
  }
  return diff / scale;
}

namespace {

constexpr double kEps = 1e-6;

void fill_normal(Tensor& t, Rng& rng, double stddev = 1.0) {
  for (double& v : t.vec()) v = rng.normal(0.0, stddev);
}

// Central differences of `objective` with respect to each slot.
std::vector<double> numeric_grad(const std::function<double()>& objective,
                                 double* slots, std::size_t count, double eps = kEps) {
  std::vector<double> grad(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double orig = slots[i];
    slots[i] = orig + eps;
    const double up = objective();
    slots[i] = orig - eps;
    const double down = objective();
    slots[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double vdot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) s += pa[i] * pb[i];
  return s;
}

}  // namespace

GradCheckReport gradcheck_conv(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (auto [rate, stride] : {std::pair{1, 1}, {2, 1}, {3, 2}}) {
    Tensor x(2, 3, 7, 6);
    fill_normal(x, rng);
    ConvLayer layer(4, 3, 3, rate, stride);
    layer.init_he(rng);
    for (double& b : layer.bias) b = rng.normal(0.0, 0.1);
    Tensor g(2, 4, conv_output_extent(7, 3, rate, stride, rate, rate),
             conv_output_extent(6, 3, rate, stride, rate, rate));
    fill_normal(g, rng);

    auto objective = [&] { return vdot(atrous_conv_forward(x, layer), g); };
    layer.zero_grad();
    auto [grad_x, grad_w, grad_b] = atrous_conv_backward(x, layer, g);

    worst = std::max(worst, gradient_error(grad_x.vec(),
                                           numeric_grad(objective, x.data(), x.size())));
    worst = std::max(worst, gradient_error(grad_w.vec(), numeric_grad(objective,
                                                                      layer.weights.data(),
                                                                      layer.weights.size())));
    worst = std::max(worst, gradient_error(grad_b, numeric_grad(objective,
                                                                layer.bias.data(),
                                                                layer.bias.size())));
  }
  return {"conv", worst};
}

GradCheckReport gradcheck_batchnorm(std::uint64_t seed) {
  Rng rng(seed);
  Tensor x(2, 3, 4, 4);
  fill_normal(x, rng);
  BatchNorm bn(3);
  for (int c = 0; c < 3; ++c) {
    bn.gamma[c] = 0.5 + rng.uniform();
    bn.beta[c] = rng.normal(0.0, 0.3);
  }
  Tensor g(2, 3, 4, 4);
  fill_normal(g, rng);

  auto objective = [&] { return vdot(bn_forward(x, bn, BnMode::Train), g); };
  objective();  // populate the batch-stat cache used by backward
  bn.zero_grad();
  auto [grad_x, grad_gamma, grad_beta] = bn_backward(x, bn, g, BnMode::Train);

  double worst = gradient_error(grad_x.vec(), numeric_grad(objective, x.data(), x.size()));
  worst = std::max(worst, gradient_error(grad_gamma, numeric_grad(objective, bn.gamma.data(),
                                                                  bn.gamma.size())));
  worst = std::max(worst, gradient_error(grad_beta, numeric_grad(objective, bn.beta.data(),
                                                                 bn.beta.size())));
  return {"batchnorm", worst};
}

GradCheckReport gradcheck_aspp(std::uint64_t seed) {
  Rng rng(seed);
  AsppConfig cfg;
  cfg.base_rates = {1, 2, 3};
  cfg.branch_filters = 4;
  cfg.image_pooling = true;
  cfg.num_classes = 2;
  AsppHead head(cfg, /*in_channels=*/5);
  head.init_weights(rng);

  Tensor features(2, 5, 9, 9);
  fill_normal(features, rng);
  Tensor g(2, 2, 9, 9);
  fill_normal(g, rng);

  auto objective = [&] {
    return vdot(aspp_forward(head, features, 16, BnMode::Train), g);
  };
  // One tracked forward to populate the tape; FD evaluations reuse the head
  // (running stats drift never enters train-mode outputs).
  AsppTape tape;
  Tensor logits = aspp_forward(head, features, 16, BnMode::Train, &tape);
  (void)logits;
  head.zero_grad();
  Tensor grad_features = aspp_backward(head, tape, g);

  double worst = gradient_error(grad_features.vec(),
                                numeric_grad(objective, features.data(), features.size()));
  auto check_conv = [&](ConvLayer& conv) {
    worst = std::max(worst,
                     gradient_error(conv.weight_grad.vec(),
                                    numeric_grad(objective, conv.weights.data(),
                                                 conv.weights.size())));
    worst = std::max(worst, gradient_error(conv.bias_grad,
                                           numeric_grad(objective, conv.bias.data(),
                                                        conv.bias.size())));
  };
  auto check_bn = [&](BatchNorm& bn) {
    worst = std::max(worst, gradient_error(bn.gamma_grad,
                                           numeric_grad(objective, bn.gamma.data(),
                                                        bn.gamma.size())));
    worst = std::max(worst, gradient_error(bn.beta_grad,
                                           numeric_grad(objective, bn.beta.data(),
                                                        bn.beta.size())));
  };
  check_conv(head.conv1x1.conv);
  check_bn(head.conv1x1.bn);
  for (ConvBnUnit& u : head.atrous) {
    check_conv(u.conv);
    check_bn(u.bn);
  }
  check_conv(head.pool_conv.conv);
  check_bn(head.pool_conv.bn);
  check_conv(head.fusion.conv);
  check_bn(head.fusion.bn);
  check_conv(head.classifier);
  return {"aspp", worst};
}

GradCheckReport gradcheck_loss(std::uint64_t seed) {
  Rng rng(seed);
  Tensor logits(2, 3, 5, 5);
  fill_normal(logits, rng);
  std::vector<GrayImage> gt(2);
  for (GrayImage& g : gt) {
    g.h = 9;
    g.w = 9;
    g.pixels.resize(81);
    for (auto& p : g.pixels) {
      const int draw = rng.uniform_int(4);
      p = draw == 3 ? kIgnoreLabel : static_cast<std::uint8_t>(draw);
    }
  }

  auto objective = [&] { return upsampled_logits_loss(logits, gt, kIgnoreLabel).loss; };
  const LossResult res = upsampled_logits_loss(logits, gt, kIgnoreLabel);
  const double err = gradient_error(
      res.grad_logits.vec(), numeric_grad(objective, logits.data(), logits.size()));
  return {"loss", err};
}

std::vector<GradCheckReport> run_gradcheck_suites(std::uint64_t seed) {
  return {gradcheck_conv(seed), gradcheck_batchnorm(seed + 1), gradcheck_aspp(seed + 2),
          gradcheck_loss(seed + 3)};
}

}  // namespace dlv3
