#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dlv3 {

// Central-difference verification of the analytic gradients. The reported
// error is ||analytic - numeric||_inf normalized by the gradient magnitude,
// max(||analytic||_inf, ||numeric||_inf, 1): per-component ratios are
// meaningless near the finite-difference noise floor.
struct GradCheckReport {
  std::string component;
  double max_rel_err = 0.0;
};

double gradient_error(const std::vector<double>& analytic,
                      const std::vector<double>& numeric);

GradCheckReport gradcheck_conv(std::uint64_t seed);
GradCheckReport gradcheck_batchnorm(std::uint64_t seed);
GradCheckReport gradcheck_aspp(std::uint64_t seed);
GradCheckReport gradcheck_loss(std::uint64_t seed);

// The four suites above, in order.
std::vector<GradCheckReport> run_gradcheck_suites(std::uint64_t seed);

constexpr double kGradCheckTolerance = 1e-6;

}  // namespace dlv3
