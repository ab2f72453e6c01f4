#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dlv3/layers.hpp"

namespace dlv3 {

class Rng;

// One residual block: three 3x3 convolutions (the last carries the block's
// nominal stride), a shortcut, and per-conv unit atrous rates. A compiled
// conv's final rate is unit_rate * the block's rate multiplier.
struct BlockSpec {
  std::string name;
  int channels = 0;
  int num_convs = 3;
  int nominal_stride = 2;              // 1 or 2, applied on the last conv
  std::array<int, 3> unit_rates{1, 1, 1};
};

// Declarative backbone: a stem (3x3 conv stride 2 + 3x3 max-pool stride 2)
// followed by residual blocks. With every nominal stride applied the stem
// contributes a factor of 4 and each stride-2 block doubles it.
struct NetworkSpec {
  int in_channels = 3;
  int stem_channels = 32;
  std::vector<BlockSpec> blocks;

  int nominal_output_stride() const;
};

// The miniature residual backbone: blocks of 3 convs with the given channel
// widths; extra blocks are replicas of the last base block. The multi-grid
// triple sets the unit rates of the last base block and of every replica;
// earlier blocks use unit rates (1,1,1). All blocks carry nominal stride 2
// on their last conv except the final block.
NetworkSpec make_backbone_spec(const std::vector<int>& block_channels,
                               int extra_blocks = 0,
                               const std::array<int, 3>& multi_grid = {1, 1, 1},
                               int in_channels = 3, int stem_channels = 32);

struct CompiledBlock {
  std::string name;
  std::vector<ConvBnUnit> convs;
  // The shortcut projection exists whenever the block changes channel count
  // or has nominal stride 2, so the set of parameters is identical across
  // all output_stride compilations of one spec.
  std::optional<ConvBnUnit> projection;
  int base_multiplier = 1;
  int in_channels = 0;
};

// A backbone with every (stride, rate) resolved for one target output_stride.
struct CompiledNetwork {
  NetworkSpec spec;
  int target_os = 32;
  ConvBnUnit stem;
  MaxPoolLayer pool;
  std::vector<CompiledBlock> blocks;

  int out_channels() const { return blocks.back().convs.back().conv.c_out(); }
  void init_weights(Rng& rng);
  void zero_grad();
  void set_bn_mode(BnMode mode);
};

// Walks the spec accumulating stride; once the cumulative stride reaches the
// target, every later stride becomes 1 and a rate multiplier (starting at 1)
// doubles after each removed stride-2 conv. Each conv's final rate is the
// multiplier times its unit rate. Weights are NOT initialized here.
CompiledNetwork convert_to_output_stride(const NetworkSpec& spec, int target_os);

// Base rate multipliers of the block4-family (the last 1 + num_extra_blocks
// blocks) of a compiled network.
std::vector<int> cascade_rates(const CompiledNetwork& net, int num_extra_blocks);

// A spec whose nominal strides and unit rates equal the compiled network's
// resolved values; compiling it at the same target changes nothing.
NetworkSpec equivalent_spec(const CompiledNetwork& net);

struct BlockTape {
  Tensor input;
  std::vector<Tensor> pre_bn;     // conv outputs, one per conv
  std::vector<Tensor> post_relu;  // BN+ReLU outputs of all convs but the last
  Tensor main_out;                // BN output of the last conv (pre-add)
  Tensor proj_pre_bn;
  Tensor proj_out;                // shortcut value entering the add
  Tensor out;                     // ReLU(main + shortcut)
};

struct BackboneTape {
  BnMode mode = BnMode::Frozen;
  Tensor input;
  Tensor stem_pre_bn;
  Tensor stem_out;  // BN+ReLU output, input of the pool
  MaxPoolTape pool;
  Tensor pool_out;
  std::vector<BlockTape> blocks;
};

// Runs the backbone. Input spatial sizes must be N*nominal_output_stride + 1
// so that every compilation of the spec lands on the same sample grid; the
// output is ((h-1)/target_os + 1) x ((w-1)/target_os + 1).
// Pass a tape to record activations for backward.
Tensor backbone_forward(CompiledNetwork& net, const Tensor& x, BnMode mode,
                        BackboneTape* tape = nullptr);

// Accumulates parameter gradients; the gradient w.r.t. the network input is
// not materialized (the input is data).
void backbone_backward(CompiledNetwork& net, const BackboneTape& tape,
                       const Tensor& grad_features);

}  // namespace dlv3
