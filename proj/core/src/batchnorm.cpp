#include "dlv3/batchnorm.hpp"

#include <cmath>
#include <stdexcept>

namespace dlv3 {

BatchNorm::BatchNorm(int channels)
    : gamma(channels, 1.0),
      beta(channels, 0.0),
      running_mean(channels, 0.0),
      running_var(channels, 1.0),
      gamma_grad(channels, 0.0),
      beta_grad(channels, 0.0),
      batch_mean(channels, 0.0),
      batch_var(channels, 0.0) {}

void BatchNorm::zero_grad() {
  std::fill(gamma_grad.begin(), gamma_grad.end(), 0.0);
  std::fill(beta_grad.begin(), beta_grad.end(), 0.0);
}

namespace {

void check_channels(const Tensor& x, const BatchNorm& bn) {
  if (x.c() != bn.channels()) {
    throw std::invalid_argument("batchnorm: input has " + std::to_string(x.c()) +
                                " channels, layer has " + std::to_string(bn.channels()));
  }
}

}  // namespace

Tensor bn_forward(const Tensor& x, BatchNorm& bn, BnMode mode) {
  check_channels(x, bn);
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  const std::size_t m = static_cast<std::size_t>(x.n()) * plane;
  Tensor y(x.n(), x.c(), x.h(), x.w());

  if (mode == BnMode::Train) {
    if (m < 2) {
      throw std::invalid_argument(
          "batchnorm: train mode needs n*h*w >= 2 elements per channel");
    }
    for (int c = 0; c < x.c(); ++c) {
      double s = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* src = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) s += src[i];
      }
      const double mu = s / static_cast<double>(m);
      double sq = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* src = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = src[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      bn.batch_mean[c] = mu;
      bn.batch_var[c] = var;
      const double inv_std = 1.0 / std::sqrt(var + bn.epsilon);
      const double g = bn.gamma[c], b = bn.beta[c];
      for (int n = 0; n < x.n(); ++n) {
        const double* src = x.plane(n, c);
        double* dst = y.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          dst[i] = g * (src[i] - mu) * inv_std + b;
        }
      }
      // Outputs use the current batch stats; the running estimates are
      // refreshed afterwards.
      bn.running_mean[c] = bn.decay * bn.running_mean[c] + (1.0 - bn.decay) * mu;
      bn.running_var[c] = bn.decay * bn.running_var[c] + (1.0 - bn.decay) * var;
    }
  } else {
    for (int c = 0; c < x.c(); ++c) {
      const double inv_std = 1.0 / std::sqrt(bn.running_var[c] + bn.epsilon);
      const double g = bn.gamma[c], b = bn.beta[c];
      const double mu = bn.running_mean[c];
      for (int n = 0; n < x.n(); ++n) {
        const double* src = x.plane(n, c);
        double* dst = y.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          dst[i] = g * (src[i] - mu) * inv_std + b;
        }
      }
    }
  }
  return y;
}

std::tuple<Tensor, std::vector<double>, std::vector<double>> bn_backward(
    const Tensor& x, BatchNorm& bn, const Tensor& grad_out, BnMode mode) {
  check_channels(x, bn);
  if (!x.same_shape(grad_out)) {
    throw std::invalid_argument("batchnorm backward: grad_out shape mismatch");
  }
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  const std::size_t m = static_cast<std::size_t>(x.n()) * plane;
  Tensor grad_x(x.n(), x.c(), x.h(), x.w());
  std::vector<double> grad_gamma(bn.channels(), 0.0);
  std::vector<double> grad_beta(bn.channels(), 0.0);

  for (int c = 0; c < x.c(); ++c) {
    const bool train = mode == BnMode::Train;
    const double mu = train ? bn.batch_mean[c] : bn.running_mean[c];
    const double var = train ? bn.batch_var[c] : bn.running_var[c];
    const double inv_std = 1.0 / std::sqrt(var + bn.epsilon);

    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const double* gx = grad_out.plane(n, c);
      const double* src = x.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (src[i] - mu) * inv_std;
        sum_dy += gx[i];
        sum_dy_xhat += gx[i] * xhat;
      }
    }
    grad_beta[c] = sum_dy;
    grad_gamma[c] = sum_dy_xhat;

    const double g = bn.gamma[c];
    if (train) {
      const double mean_dy = sum_dy / static_cast<double>(m);
      const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(m);
      for (int n = 0; n < x.n(); ++n) {
        const double* gx = grad_out.plane(n, c);
        const double* src = x.plane(n, c);
        double* dst = grad_x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double xhat = (src[i] - mu) * inv_std;
          dst[i] = g * inv_std * (gx[i] - mean_dy - xhat * mean_dy_xhat);
        }
      }
    } else {
      const double k = g * inv_std;
      for (int n = 0; n < x.n(); ++n) {
        const double* gx = grad_out.plane(n, c);
        double* dst = grad_x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = k * gx[i];
      }
    }
  }

  for (int c = 0; c < bn.channels(); ++c) {
    bn.gamma_grad[c] += grad_gamma[c];
    bn.beta_grad[c] += grad_beta[c];
  }
  return {std::move(grad_x), std::move(grad_gamma), std::move(grad_beta)};
}

void freeze(BatchNorm& bn) { bn.mode = BnMode::Frozen; }
void unfreeze(BatchNorm& bn) { bn.mode = BnMode::Train; }

}  // namespace dlv3
