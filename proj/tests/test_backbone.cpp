#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dlv3/backbone.hpp"
#include "dlv3/rng.hpp"

using namespace dlv3;

namespace {

NetworkSpec tiny_spec(int extra_blocks = 0, std::array<int, 3> mg = {1, 1, 1}) {
  return make_backbone_spec({4, 6, 8, 8}, extra_blocks, mg, 3, 4);
}

std::array<int, 3> conv_rates(const CompiledBlock& b) {
  return {b.convs[0].conv.rate, b.convs[1].conv.rate, b.convs[2].conv.rate};
}

Tensor random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  for (double& v : t.vec()) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("nominal output stride multiplies the stem by the block strides") {
  CHECK(tiny_spec().nominal_output_stride() == 32);
  CHECK(tiny_spec(3).nominal_output_stride() == 256);
}

TEST_CASE("compiling at the nominal stride keeps the spec unchanged") {
  CompiledNetwork net = convert_to_output_stride(tiny_spec(0, {1, 2, 4}), 32);
  CHECK(net.target_os == 32);
  for (const CompiledBlock& b : net.blocks) CHECK(b.base_multiplier == 1);
  CHECK(conv_rates(net.blocks[3]) == std::array<int, 3>{1, 2, 4});  // unit rates as-is
  CHECK(net.blocks[0].convs[2].conv.stride == 2);
  CHECK(net.blocks[2].convs[2].conv.stride == 2);
  CHECK(net.blocks[3].convs[2].conv.stride == 1);  // last block
}

TEST_CASE("multi-grid (1,2,4) at output_stride 16 gives block4 rates (2,4,8)") {
  CompiledNetwork net = convert_to_output_stride(tiny_spec(0, {1, 2, 4}), 16);
  CHECK(net.blocks[3].base_multiplier == 2);
  CHECK(conv_rates(net.blocks[3]) == std::array<int, 3>{2, 4, 8});
  // block3's own stride is the removed one; its convs still run at rate 1
  CHECK(conv_rates(net.blocks[2]) == std::array<int, 3>{1, 1, 1});
  CHECK(net.blocks[2].convs[2].conv.stride == 1);
}

TEST_CASE("plain spec at output_stride 8 gives block3 rate 2 and block4 rate 4") {
  CompiledNetwork net = convert_to_output_stride(tiny_spec(), 8);
  CHECK(conv_rates(net.blocks[2]) == std::array<int, 3>{2, 2, 2});
  CHECK(conv_rates(net.blocks[3]) == std::array<int, 3>{4, 4, 4});
  CHECK(net.blocks[1].convs[2].conv.stride == 1);
  CHECK(net.blocks[0].convs[2].conv.stride == 2);
}

TEST_CASE("cascade multipliers double per extra block") {
  CompiledNetwork at16 = convert_to_output_stride(tiny_spec(3, {1, 2, 1}), 16);
  CHECK(cascade_rates(at16, 3) == std::vector<int>{2, 4, 8, 16});
  // block7 rates are the multiplier times Multi_Grid (1,2,1)
  CHECK(conv_rates(at16.blocks[6]) == std::array<int, 3>{16, 32, 16});

  CompiledNetwork at8 = convert_to_output_stride(tiny_spec(3, {1, 2, 1}), 8);
  CHECK(cascade_rates(at8, 3) == std::vector<int>{4, 8, 16, 32});

  CompiledNetwork plain = convert_to_output_stride(tiny_spec(), 32);
  CHECK(cascade_rates(plain, 0) == std::vector<int>{1});
}

TEST_CASE("unconverted cascade of three extra blocks reaches stride 256") {
  CompiledNetwork net = convert_to_output_stride(tiny_spec(3), 256);
  CHECK(net.target_os == 256);
  int cum = 4;
  for (const CompiledBlock& b : net.blocks) cum *= b.convs[2].conv.stride;
  CHECK(cum == 256);
}

TEST_CASE("conversion rejects bad targets") {
  CHECK_THROWS_AS(convert_to_output_stride(tiny_spec(), 64), std::invalid_argument);
  CHECK_THROWS_AS(convert_to_output_stride(tiny_spec(), 12), std::invalid_argument);
  CHECK_THROWS_AS(convert_to_output_stride(tiny_spec(), 2), std::invalid_argument);
}

TEST_CASE("rate assignment ignores channel widths") {
  NetworkSpec wide = make_backbone_spec({16, 24, 40, 56}, 0, {1, 2, 4});
  NetworkSpec narrow = make_backbone_spec({2, 3, 4, 5}, 0, {1, 2, 4});
  CompiledNetwork a = convert_to_output_stride(wide, 16);
  CompiledNetwork b = convert_to_output_stride(narrow, 16);
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    CHECK(conv_rates(a.blocks[i]) == conv_rates(b.blocks[i]));
    CHECK(a.blocks[i].base_multiplier == b.blocks[i].base_multiplier);
  }
}

TEST_CASE("recompiling the equivalent spec at the same target changes nothing") {
  CompiledNetwork net = convert_to_output_stride(tiny_spec(0, {1, 2, 4}), 16);
  NetworkSpec equiv = equivalent_spec(net);
  CHECK(equiv.nominal_output_stride() == 16);
  CompiledNetwork again = convert_to_output_stride(equiv, 16);
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    CHECK(conv_rates(net.blocks[i]) == conv_rates(again.blocks[i]));
    CHECK(net.blocks[i].convs[2].conv.stride == again.blocks[i].convs[2].conv.stride);
  }
}

TEST_CASE("forward output size follows (h-1)/os + 1") {
  Rng rng(301);
  CompiledNetwork net = convert_to_output_stride(tiny_spec(), 16);
  net.init_weights(rng);
  net.set_bn_mode(BnMode::Frozen);
  Tensor x = random_tensor(1, 3, 65, 65, rng);
  Tensor f = backbone_forward(net, x, BnMode::Frozen);
  CHECK(f.h() == 5);
  CHECK(f.w() == 5);
  CHECK(f.c() == 8);

  // 513 = 16*32 + 1, the full-scale crop convention
  Tensor big = random_tensor(1, 3, 513, 513, rng);
  Tensor fb = backbone_forward(net, big, BnMode::Frozen);
  CHECK(fb.h() == 33);
  CHECK(fb.w() == 33);
}

TEST_CASE("misaligned input sizes are rejected with the size rule") {
  Rng rng(307);
  CompiledNetwork net = convert_to_output_stride(tiny_spec(), 16);
  net.init_weights(rng);
  Tensor x = random_tensor(1, 3, 64, 64, rng);
  CHECK_THROWS_WITH_AS(backbone_forward(net, x, BnMode::Frozen),
                       doctest::Contains("N*32+1"), std::invalid_argument);
}

TEST_CASE("zeroed residual branch passes the (projected) input through") {
  Rng rng(311);
  // Single block, stride 1, same channels: the shortcut is the identity.
  NetworkSpec spec = make_backbone_spec({4}, 0, {1, 1, 1}, 3, 4);
  CHECK(spec.nominal_output_stride() == 4);
  CompiledNetwork net = convert_to_output_stride(spec, 4);
  net.init_weights(rng);
  CHECK(!net.blocks[0].projection.has_value());
  for (ConvBnUnit& u : net.blocks[0].convs) u.conv.weights.fill(0.0);

  Tensor x = random_tensor(1, 3, 33, 33, rng);
  Tensor f = backbone_forward(net, x, BnMode::Frozen);

  // Oracle: the block reduces to relu(0 + pool(stem(x))) = pool(stem(x)),
  // which is non-negative already.
  ConvBnUnit stem = net.stem;
  Tensor pre = atrous_conv_forward(x, stem.conv);
  Tensor stem_out = relu(bn_forward(pre, stem.bn, BnMode::Frozen));
  Tensor pooled = maxpool_forward(stem_out, net.pool, nullptr);
  CHECK(max_abs_diff(f, pooled) == 0.0);
}

namespace {

// Copies all learnable state between two compilations of the same spec
// without touching the resolved strides/rates.
void copy_weights(CompiledNetwork& dst, const CompiledNetwork& src) {
  auto copy_unit = [](ConvBnUnit& d, const ConvBnUnit& s) {
    d.conv.weights = s.conv.weights;
    d.conv.bias = s.conv.bias;
    d.bn = s.bn;
  };
  copy_unit(dst.stem, src.stem);
  for (std::size_t i = 0; i < dst.blocks.size(); ++i) {
    for (int j = 0; j < 3; ++j) copy_unit(dst.blocks[i].convs[j], src.blocks[i].convs[j]);
    if (dst.blocks[i].projection) {
      copy_unit(*dst.blocks[i].projection, *src.blocks[i].projection);
    }
  }
}

}  // namespace

TEST_CASE("dense extraction at os 8 subsamples to the os 16 features") {
  Rng rng(313);
  CompiledNetwork net16 = convert_to_output_stride(tiny_spec(0, {1, 2, 4}), 16);
  net16.init_weights(rng);
  CompiledNetwork net8 = convert_to_output_stride(tiny_spec(0, {1, 2, 4}), 8);
  copy_weights(net8, net16);

  Tensor x = random_tensor(1, 3, 65, 65, rng);
  Tensor f16 = backbone_forward(net16, x, BnMode::Frozen);
  Tensor f8 = backbone_forward(net8, x, BnMode::Frozen);
  CHECK(f8.h() == 9);
  CHECK(f16.h() == 5);
  CHECK(max_abs_diff(subsample(f8, 2), f16) <= 1e-8);
}
