#include "dlv3/aspp.hpp"

#include <stdexcept>

#include "dlv3/rng.hpp"

namespace dlv3 {

std::vector<int> AsppConfig::all_base_rates() const {
  std::vector<int> rates = base_rates;
  if (extra_rate_24) rates.push_back(24);
  return rates;
}

void AsppConfig::validate() const {
  if (base_rates.empty()) throw std::invalid_argument("aspp: need at least one rate");
  int prev = 0;
  for (int r : base_rates) {
    if (r <= prev) {
      throw std::invalid_argument("aspp: rates must be strictly increasing and positive");
    }
    prev = r;
  }
  if (branch_filters < 1) throw std::invalid_argument("aspp: branch_filters must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("aspp: num_classes must be >= 1");
}

std::vector<int> effective_rates(const AsppConfig& config, int output_stride) {
  if (output_stride != 8 && output_stride != 16) {
    throw std::invalid_argument("effective_rates: output_stride must be 8 or 16, got " +
                                std::to_string(output_stride));
  }
  std::vector<int> rates = config.all_base_rates();
  if (output_stride == 8) {
    for (int& r : rates) r *= 2;
  }
  return rates;
}

namespace {

// Branch rates for any output_stride the model can train at. 8 and 16 follow
// the doubling rule; 32 keeps the base rates (the head just sees a coarser
// grid there).
std::vector<int> runtime_rates(const AsppConfig& config, int output_stride) {
  if (output_stride == 8 || output_stride == 16) {
    return effective_rates(config, output_stride);
  }
  if (output_stride == 32) return config.all_base_rates();
  throw std::invalid_argument("aspp: unsupported output_stride " +
                              std::to_string(output_stride));
}

}  // namespace

AsppHead::AsppHead(const AsppConfig& cfg, int in_ch) : config(cfg), in_channels(in_ch) {
  config.validate();
  const int f = config.branch_filters;
  conv1x1 = ConvBnUnit(f, in_ch, 1);
  for (std::size_t i = 0; i < config.all_base_rates().size(); ++i) {
    atrous.emplace_back(f, in_ch, 3, /*rate=*/1);  // rate resolved per forward
  }
  if (config.image_pooling) pool_conv = ConvBnUnit(f, in_ch, 1);
  fusion = ConvBnUnit(f, concat_channels(), 1);
  classifier = ConvLayer(config.num_classes, f, 1);
}

int AsppHead::concat_channels() const {
  const int branches =
      1 + static_cast<int>(atrous.size()) + (config.image_pooling ? 1 : 0);
  return config.branch_filters * branches;
}

void AsppHead::init_weights(Rng& rng) {
  conv1x1.conv.init_he(rng);
  for (ConvBnUnit& u : atrous) u.conv.init_he(rng);
  if (config.image_pooling) pool_conv.conv.init_he(rng);
  fusion.conv.init_he(rng);
  classifier.init_he(rng);
}

void AsppHead::zero_grad() {
  auto zero_unit = [](ConvBnUnit& u) {
    u.conv.zero_grad();
    u.bn.zero_grad();
  };
  zero_unit(conv1x1);
  for (ConvBnUnit& u : atrous) zero_unit(u);
  if (config.image_pooling) zero_unit(pool_conv);
  zero_unit(fusion);
  classifier.zero_grad();
}

void AsppHead::set_bn_mode(BnMode mode) {
  conv1x1.bn.mode = mode;
  for (ConvBnUnit& u : atrous) u.bn.mode = mode;
  if (config.image_pooling) pool_conv.bn.mode = mode;
  fusion.bn.mode = mode;
}

Tensor aspp_forward(AsppHead& head, const Tensor& features, int output_stride,
                    BnMode mode, AsppTape* tape) {
  if (features.c() != head.in_channels) {
    throw std::invalid_argument("aspp: feature channel mismatch");
  }
  if (features.h() < 1 || features.w() < 1) {
    throw std::invalid_argument("aspp: zero spatial size");
  }
  const std::vector<int> rates = runtime_rates(head.config, output_stride);
  if (tape) {
    tape->mode = mode;
    tape->output_stride = output_stride;
    tape->features = features;
    tape->branch_pre_bn.clear();
    tape->branch_out.clear();
  }

  std::vector<Tensor> branch_outputs;
  auto run_branch = [&](ConvBnUnit& unit) {
    Tensor pre = atrous_conv_forward(features, unit.conv);
    if (tape) tape->branch_pre_bn.push_back(pre);
    Tensor out = relu(bn_forward(pre, unit.bn, mode));
    if (tape) tape->branch_out.push_back(out);
    branch_outputs.push_back(std::move(out));
  };

  run_branch(head.conv1x1);
  for (std::size_t i = 0; i < head.atrous.size(); ++i) {
    head.atrous[i].conv.rate = rates[i];
    run_branch(head.atrous[i]);
  }

  Tensor pool_up;
  if (head.config.image_pooling) {
    Tensor pooled = global_avg_pool(features);
    Tensor pre = atrous_conv_forward(pooled, head.pool_conv.conv);
    Tensor out = relu(bn_forward(pre, head.pool_conv.bn, mode));
    pool_up = bilinear_resize(out, features.h(), features.w());
    if (tape) {
      tape->pooled = std::move(pooled);
      tape->pool_pre_bn = std::move(pre);
      tape->pool_out = std::move(out);
      tape->pool_upsampled = pool_up;
    }
  }

  std::vector<const Tensor*> parts;
  for (const Tensor& t : branch_outputs) parts.push_back(&t);
  if (head.config.image_pooling) parts.push_back(&pool_up);
  Tensor cat = concat_channels(parts);
  if (tape) tape->concat = cat;

  Tensor fusion_pre = atrous_conv_forward(cat, head.fusion.conv);
  if (tape) tape->fusion_pre_bn = fusion_pre;
  Tensor fused = relu(bn_forward(fusion_pre, head.fusion.bn, mode));
  if (tape) tape->fused = fused;

  return atrous_conv_forward(fused, head.classifier);
}

Tensor aspp_backward(AsppHead& head, const AsppTape& tape, const Tensor& grad_logits) {
  const BnMode mode = tape.mode;
  auto [grad_fused, gw_cls, gb_cls] =
      atrous_conv_backward(tape.fused, head.classifier, grad_logits);

  Tensor g = relu_backward(tape.fused, grad_fused);
  auto [grad_cat_pre, gg_f, gb_f] = bn_backward(tape.fusion_pre_bn, head.fusion.bn, g, mode);
  auto [grad_cat, gw_f, gbias_f] =
      atrous_conv_backward(tape.concat, head.fusion.conv, grad_cat_pre);

  std::vector<int> channels;
  const int nb = static_cast<int>(tape.branch_out.size());
  for (int i = 0; i < nb; ++i) channels.push_back(head.config.branch_filters);
  if (head.config.image_pooling) channels.push_back(head.config.branch_filters);
  std::vector<Tensor> grads = split_channels(grad_cat, channels);

  Tensor grad_features(tape.features.n(), tape.features.c(), tape.features.h(),
                       tape.features.w());

  auto back_branch = [&](ConvBnUnit& unit, int idx) {
    Tensor gb = relu_backward(tape.branch_out[idx], grads[idx]);
    auto [g_pre, gg, gbeta] = bn_backward(tape.branch_pre_bn[idx], unit.bn, gb, mode);
    auto [gx, gw, gbias] = atrous_conv_backward(tape.features, unit.conv, g_pre);
    add_inplace(grad_features, gx);
  };

  back_branch(head.conv1x1, 0);
  for (std::size_t i = 0; i < head.atrous.size(); ++i) {
    back_branch(head.atrous[i], static_cast<int>(i) + 1);
  }

  if (head.config.image_pooling) {
    Tensor g_up = bilinear_resize_backward(grads.back(), 1, 1);
    Tensor g_out = relu_backward(tape.pool_out, g_up);
    auto [g_pre, gg, gbeta] = bn_backward(tape.pool_pre_bn, head.pool_conv.bn, g_out, mode);
    auto [g_pooled, gw, gbias] = atrous_conv_backward(tape.pooled, head.pool_conv.conv, g_pre);
    Tensor g_feat = global_avg_pool_backward(g_pooled, tape.features.h(), tape.features.w());
    add_inplace(grad_features, g_feat);
  }

  return grad_features;
}

}  // namespace dlv3
