#pragma once

#include <optional>
#include <vector>

#include "dlv3/layers.hpp"

namespace dlv3 {

class Rng;

// Head configuration. The three 3x3 branch rates default to (6, 12, 18) at
// output_stride 16 and are doubled at output_stride 8. An optional fourth
// branch at rate 24 can be enabled; it is off by default.
struct AsppConfig {
  std::vector<int> base_rates{6, 12, 18};  // strictly increasing, positive
  int branch_filters = 256;
  bool image_pooling = true;
  bool extra_rate_24 = false;
  int num_classes = 0;

  std::vector<int> all_base_rates() const;
  void validate() const;
  bool operator==(const AsppConfig&) const = default;
};

// The rates actually used by the 3x3 branches: base rates at output_stride
// 16, doubled at output_stride 8. Other values are rejected.
std::vector<int> effective_rates(const AsppConfig& config, int output_stride);

// Parallel branches over one feature map: a 1x1 convolution, the 3x3 atrous
// branches, and (optionally) image-level features — global average pooling,
// 1x1 conv + BN, bilinear upsampling back to the feature size. Branch outputs
// are concatenated, fused by a 1x1 conv + BN, and classified by a final 1x1
// convolution that produces the logits.
struct AsppHead {
  AsppConfig config;
  int in_channels = 0;
  ConvBnUnit conv1x1;
  std::vector<ConvBnUnit> atrous;  // one per base rate; rate resolved per call
  ConvBnUnit pool_conv;            // present iff config.image_pooling
  ConvBnUnit fusion;
  ConvLayer classifier;

  AsppHead() = default;
  AsppHead(const AsppConfig& config, int in_channels);

  int concat_channels() const;
  void init_weights(Rng& rng);
  void zero_grad();
  void set_bn_mode(BnMode mode);
};

struct AsppTape {
  BnMode mode = BnMode::Frozen;
  int output_stride = 16;
  Tensor features;
  std::vector<Tensor> branch_pre_bn;   // conv1x1 first, then the atrous branches
  std::vector<Tensor> branch_out;      // matching BN+ReLU outputs
  Tensor pooled;                       // (n, c_in, 1, 1)
  Tensor pool_pre_bn;
  Tensor pool_out;                     // 1x1 BN+ReLU output
  Tensor pool_upsampled;
  Tensor concat;
  Tensor fusion_pre_bn;
  Tensor fused;                        // fusion BN+ReLU output
};

// Runs the head on backbone features computed at `output_stride`; returns
// logits of shape (n, num_classes, feat_h, feat_w).
Tensor aspp_forward(AsppHead& head, const Tensor& features, int output_stride,
                    BnMode mode, AsppTape* tape = nullptr);

// Accumulates head parameter gradients and returns the gradient w.r.t. the
// input features.
Tensor aspp_backward(AsppHead& head, const AsppTape& tape, const Tensor& grad_logits);

}  // namespace dlv3
