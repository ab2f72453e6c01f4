#pragma once

#include <tuple>
#include <vector>

#include "dlv3/tensor.hpp"

namespace dlv3 {

enum class BnMode { Train, Frozen };

// Per-channel batch normalization with a running-statistics decay and a
// train/frozen lifecycle. Train mode normalizes with the current batch
// moments (population variance over n*h*w elements) and then folds them into
// the running statistics; Frozen mode normalizes with the running statistics
// and never mutates anything. Freezing also takes gamma/beta out of the set
// of trainable parameters.
struct BatchNorm {
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;
  double decay = 0.9997;
  double epsilon = 1e-5;
  BnMode mode = BnMode::Train;

  std::vector<double> gamma_grad, beta_grad;

  // Per-batch cache for the backward pass (valid after a Train forward).
  std::vector<double> batch_mean, batch_var;

  BatchNorm() = default;
  explicit BatchNorm(int channels);

  int channels() const { return static_cast<int>(gamma.size()); }
  bool frozen() const { return mode == BnMode::Frozen; }
  void zero_grad();
};

// Applies BN under the given mode (the layer's stored mode can be overridden
// per call so one model can be compiled once and run in either phase).
// Train mode requires n*h*w >= 2 and updates running stats in place:
//   running <- decay * running + (1 - decay) * batch.
Tensor bn_forward(const Tensor& x, BatchNorm& bn, BnMode mode);
inline Tensor bn_forward(const Tensor& x, BatchNorm& bn) {
  return bn_forward(x, bn, bn.mode);
}

// Gradients of sum(grad_out . y). Train mode differentiates through the batch
// moments; Frozen mode treats the statistics as constants. gamma/beta grads
// accumulate into the layer buffers and are also returned.
std::tuple<Tensor, std::vector<double>, std::vector<double>> bn_backward(
    const Tensor& x, BatchNorm& bn, const Tensor& grad_out, BnMode mode);

void freeze(BatchNorm& bn);
void unfreeze(BatchNorm& bn);

}  // namespace dlv3
