#include "dlv3/backbone.hpp"

#include <stdexcept>

#include "dlv3/rng.hpp"

namespace dlv3 {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

int NetworkSpec::nominal_output_stride() const {
  int os = 4;  // stem conv (2) and stem pool (2)
  for (const BlockSpec& b : blocks) os *= b.nominal_stride;
  return os;
}

NetworkSpec make_backbone_spec(const std::vector<int>& block_channels,
                               int extra_blocks, const std::array<int, 3>& multi_grid,
                               int in_channels, int stem_channels) {
  if (block_channels.empty()) {
    throw std::invalid_argument("backbone needs at least one block");
  }
  for (int r : multi_grid) {
    if (r < 1) throw std::invalid_argument("multi-grid unit rates must be positive");
  }
  NetworkSpec spec;
  spec.in_channels = in_channels;
  spec.stem_channels = stem_channels;
  const int base = static_cast<int>(block_channels.size());
  for (int i = 0; i < base + extra_blocks; ++i) {
    BlockSpec b;
    b.name = "block" + std::to_string(i + 1);
    b.channels = block_channels[std::min(i, base - 1)];
    b.nominal_stride = (i == base + extra_blocks - 1) ? 1 : 2;
    b.unit_rates = (i >= base - 1) ? multi_grid : std::array<int, 3>{1, 1, 1};
    spec.blocks.push_back(b);
  }
  return spec;
}

CompiledNetwork convert_to_output_stride(const NetworkSpec& spec, int target_os) {
  const int nominal = spec.nominal_output_stride();
  if (!is_power_of_two(target_os)) {
    throw std::invalid_argument("output_stride must be a power of two, got " +
                                std::to_string(target_os));
  }
  if (target_os > nominal) {
    throw std::invalid_argument("output_stride " + std::to_string(target_os) +
                                " exceeds the nominal " + std::to_string(nominal));
  }
  if (target_os < 4) {
    throw std::invalid_argument("output_stride below 4 would convert the stem; unsupported");
  }

  CompiledNetwork net;
  net.spec = spec;
  net.target_os = target_os;
  net.stem = ConvBnUnit(spec.stem_channels, spec.in_channels, 3, /*rate=*/1, /*stride=*/2);
  net.pool = MaxPoolLayer{3, 2};

  int cumulative = 4;
  int multiplier = 1;
  int in_ch = spec.stem_channels;
  for (const BlockSpec& b : spec.blocks) {
    if (b.num_convs != 3) {
      throw std::invalid_argument("blocks are fixed at three convolutions");
    }
    CompiledBlock cb;
    cb.name = b.name;
    cb.base_multiplier = multiplier;
    cb.in_channels = in_ch;

    int resolved_stride = 1;
    bool removed = false;
    if (b.nominal_stride == 2) {
      if (cumulative < target_os) {
        resolved_stride = 2;
        cumulative *= 2;
      } else {
        removed = true;  // stride dropped; later convs sample twice as sparsely
      }
    }
    for (int i = 0; i < b.num_convs; ++i) {
      const int rate = multiplier * b.unit_rates[i];
      const int stride = (i == b.num_convs - 1) ? resolved_stride : 1;
      const int cin = (i == 0) ? in_ch : b.channels;
      cb.convs.emplace_back(b.channels, cin, 3, rate, stride);
    }
    if (b.channels != in_ch || b.nominal_stride == 2) {
      cb.projection = ConvBnUnit(b.channels, in_ch, 1, 1, resolved_stride);
    }
    if (removed) multiplier *= 2;

    net.blocks.push_back(std::move(cb));
    in_ch = b.channels;
  }
  if (cumulative != target_os) {
    throw std::invalid_argument("output_stride " + std::to_string(target_os) +
                                " is not reachable from nominal " + std::to_string(nominal));
  }
  return net;
}

std::vector<int> cascade_rates(const CompiledNetwork& net, int num_extra_blocks) {
  const int total = static_cast<int>(net.blocks.size());
  if (num_extra_blocks < 0 || num_extra_blocks >= total) {
    throw std::invalid_argument("cascade_rates: bad extra-block count");
  }
  std::vector<int> result;
  for (int i = total - 1 - num_extra_blocks; i < total; ++i) {
    result.push_back(net.blocks[i].base_multiplier);
  }
  return result;
}

NetworkSpec equivalent_spec(const CompiledNetwork& net) {
  NetworkSpec spec = net.spec;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const CompiledBlock& cb = net.blocks[i];
    spec.blocks[i].nominal_stride = cb.convs.back().conv.stride;
    for (int j = 0; j < 3; ++j) {
      spec.blocks[i].unit_rates[j] = cb.convs[j].conv.rate;
    }
  }
  return spec;
}

void CompiledNetwork::init_weights(Rng& rng) {
  stem.conv.init_he(rng);
  for (CompiledBlock& b : blocks) {
    for (ConvBnUnit& u : b.convs) u.conv.init_he(rng);
    if (b.projection) b.projection->conv.init_he(rng);
  }
}

void CompiledNetwork::zero_grad() {
  stem.conv.zero_grad();
  stem.bn.zero_grad();
  for (CompiledBlock& b : blocks) {
    for (ConvBnUnit& u : b.convs) {
      u.conv.zero_grad();
      u.bn.zero_grad();
    }
    if (b.projection) {
      b.projection->conv.zero_grad();
      b.projection->bn.zero_grad();
    }
  }
}

void CompiledNetwork::set_bn_mode(BnMode mode) {
  stem.bn.mode = mode;
  for (CompiledBlock& b : blocks) {
    for (ConvBnUnit& u : b.convs) u.bn.mode = mode;
    if (b.projection) b.projection->bn.mode = mode;
  }
}

Tensor backbone_forward(CompiledNetwork& net, const Tensor& x, BnMode mode,
                        BackboneTape* tape) {
  const int nominal = net.spec.nominal_output_stride();
  if ((x.h() - 1) % nominal != 0 || (x.w() - 1) % nominal != 0) {
    throw std::invalid_argument(
        "backbone input must be N*" + std::to_string(nominal) + "+1 per side (got " +
        std::to_string(x.h()) + "x" + std::to_string(x.w()) + ")");
  }
  if (tape) {
    tape->mode = mode;
    tape->input = x;
    tape->blocks.clear();
  }

  Tensor pre = atrous_conv_forward(x, net.stem.conv);
  if (tape) tape->stem_pre_bn = pre;
  Tensor cur = relu(bn_forward(pre, net.stem.bn, mode));
  if (tape) tape->stem_out = cur;
  cur = maxpool_forward(cur, net.pool, tape ? &tape->pool : nullptr);
  if (tape) tape->pool_out = cur;

  for (CompiledBlock& b : net.blocks) {
    BlockTape bt;
    if (tape) bt.input = cur;
    Tensor shortcut;
    if (b.projection) {
      Tensor proj_pre = atrous_conv_forward(cur, b.projection->conv);
      shortcut = bn_forward(proj_pre, b.projection->bn, mode);
      if (tape) {
        bt.proj_pre_bn = std::move(proj_pre);
        bt.proj_out = shortcut;
      }
    } else {
      shortcut = cur;
      if (tape) bt.proj_out = shortcut;
    }

    Tensor main = cur;
    const int last = static_cast<int>(b.convs.size()) - 1;
    for (int i = 0; i <= last; ++i) {
      Tensor conv_out = atrous_conv_forward(main, b.convs[i].conv);
      if (tape) bt.pre_bn.push_back(conv_out);
      main = bn_forward(conv_out, b.convs[i].bn, mode);
      if (i < last) {
        main = relu(main);
        if (tape) bt.post_relu.push_back(main);
      }
    }
    if (tape) bt.main_out = main;

    cur = relu(add(main, shortcut));
    if (tape) {
      bt.out = cur;
      tape->blocks.push_back(std::move(bt));
    }
  }
  return cur;
}

void backbone_backward(CompiledNetwork& net, const BackboneTape& tape,
                       const Tensor& grad_features) {
  const BnMode mode = tape.mode;
  Tensor grad = grad_features;

  for (int bi = static_cast<int>(net.blocks.size()) - 1; bi >= 0; --bi) {
    CompiledBlock& b = net.blocks[bi];
    const BlockTape& bt = tape.blocks[bi];

    Tensor grad_sum = relu_backward(bt.out, grad);  // gradient of (main + shortcut)

    // Shortcut branch.
    Tensor grad_input_from_shortcut;
    if (b.projection) {
      auto [gx_bn, gg, gb] = bn_backward(bt.proj_pre_bn, b.projection->bn, grad_sum, mode);
      auto [gx, gw, gbias] = atrous_conv_backward(bt.input, b.projection->conv, gx_bn);
      grad_input_from_shortcut = std::move(gx);
    } else {
      grad_input_from_shortcut = grad_sum;
    }

    // Main branch, last conv back to the first.
    Tensor g = grad_sum;
    const int last = static_cast<int>(b.convs.size()) - 1;
    for (int i = last; i >= 0; --i) {
      if (i < last) g = relu_backward(bt.post_relu[i], g);
      auto [gx_bn, gg, gb] = bn_backward(bt.pre_bn[i], b.convs[i].bn, g, mode);
      const Tensor& conv_in = (i == 0) ? bt.input : bt.post_relu[i - 1];
      auto [gx, gw, gbias] = atrous_conv_backward(conv_in, b.convs[i].conv, gx_bn);
      g = std::move(gx);
    }

    add_inplace(g, grad_input_from_shortcut);
    grad = std::move(g);
  }

  grad = maxpool_backward(grad, tape.pool);
  grad = relu_backward(tape.stem_out, grad);
  auto [gx_bn, gg, gb] = bn_backward(tape.stem_pre_bn, net.stem.bn, grad, mode);
  atrous_conv_backward_params_only(tape.input, net.stem.conv, gx_bn);
}

}  // namespace dlv3
