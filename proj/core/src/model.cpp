#include "dlv3/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dlv3/rng.hpp"

namespace dlv3 {

SegModel::SegModel(const ModelArch& arch, int output_stride) : arch_(arch), os_(output_stride) {
  NetworkSpec spec = make_backbone_spec(arch.block_channels, arch.extra_blocks,
                                        arch.multi_grid, arch.in_channels,
                                        arch.stem_channels);
  backbone_ = convert_to_output_stride(spec, output_stride);
  head_ = AsppHead(arch.aspp, backbone_.out_channels());
}

SegModel SegModel::initialized(const ModelArch& arch, int output_stride, Rng& rng) {
  SegModel m(arch, output_stride);
  m.backbone_.init_weights(rng);
  m.head_.init_weights(rng);
  return m;
}

SegModel SegModel::recompiled(int output_stride) {
  SegModel fresh(arch_, output_stride);
  auto src = state_arrays();
  auto dst = fresh.state_arrays();
  if (src.size() != dst.size()) {
    throw std::runtime_error("recompile: state layout mismatch");
  }
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].size != dst[i].size) {
      throw std::runtime_error("recompile: state entry mismatch at " + src[i].name);
    }
    std::memcpy(dst[i].value, src[i].value, src[i].size * sizeof(double));
  }
  return fresh;
}

Tensor SegModel::forward(const Tensor& x, BnMode mode, SegTape* tape) {
  Tensor features =
      backbone_forward(backbone_, x, mode, tape ? &tape->backbone : nullptr);
  return aspp_forward(head_, features, os_, mode, tape ? &tape->aspp : nullptr);
}

void SegModel::backward(const SegTape& tape, const Tensor& grad_logits) {
  Tensor grad_features = aspp_backward(head_, tape.aspp, grad_logits);
  backbone_backward(backbone_, tape.backbone, grad_features);
}

namespace {

void push_conv(std::vector<ParamRef>& out, const std::string& prefix, ConvLayer& c) {
  out.push_back({prefix + ".weight", c.weights.data(), c.weight_grad.data(),
                 c.weights.size(), false});
  out.push_back({prefix + ".bias", c.bias.data(), c.bias_grad.data(), c.bias.size(), false});
}

void push_bn_affine(std::vector<ParamRef>& out, const std::string& prefix, BatchNorm& bn) {
  out.push_back({prefix + ".gamma", bn.gamma.data(), bn.gamma_grad.data(),
                 bn.gamma.size(), true});
  out.push_back({prefix + ".beta", bn.beta.data(), bn.beta_grad.data(),
                 bn.beta.size(), true});
}

void push_bn_stats(std::vector<ParamRef>& out, const std::string& prefix, BatchNorm& bn) {
  out.push_back({prefix + ".running_mean", bn.running_mean.data(), nullptr,
                 bn.running_mean.size(), false});
  out.push_back({prefix + ".running_var", bn.running_var.data(), nullptr,
                 bn.running_var.size(), false});
}

template <bool WithStats>
void visit_unit(std::vector<ParamRef>& out, const std::string& prefix, ConvBnUnit& u,
                bool include_frozen_affine) {
  push_conv(out, prefix + ".conv", u.conv);
  if (include_frozen_affine || !u.bn.frozen()) push_bn_affine(out, prefix + ".bn", u.bn);
  if (WithStats) push_bn_stats(out, prefix + ".bn", u.bn);
}

template <bool WithStats>
std::vector<ParamRef> collect(CompiledNetwork& net, AsppHead& head,
                              bool include_frozen_affine) {
  std::vector<ParamRef> out;
  visit_unit<WithStats>(out, "stem", net.stem, include_frozen_affine);
  for (CompiledBlock& b : net.blocks) {
    for (std::size_t i = 0; i < b.convs.size(); ++i) {
      visit_unit<WithStats>(out, b.name + ".conv" + std::to_string(i), b.convs[i],
                            include_frozen_affine);
    }
    if (b.projection) {
      visit_unit<WithStats>(out, b.name + ".proj", *b.projection, include_frozen_affine);
    }
  }
  visit_unit<WithStats>(out, "aspp.conv1x1", head.conv1x1, include_frozen_affine);
  for (std::size_t i = 0; i < head.atrous.size(); ++i) {
    visit_unit<WithStats>(out, "aspp.atrous" + std::to_string(i), head.atrous[i],
                          include_frozen_affine);
  }
  if (head.config.image_pooling) {
    visit_unit<WithStats>(out, "aspp.pool", head.pool_conv, include_frozen_affine);
  }
  visit_unit<WithStats>(out, "aspp.fusion", head.fusion, include_frozen_affine);
  push_conv(out, "aspp.classifier", head.classifier);
  return out;
}

}  // namespace

std::vector<ParamRef> SegModel::trainable_params() {
  return collect<false>(backbone_, head_, /*include_frozen_affine=*/false);
}

std::vector<ParamRef> SegModel::state_arrays() {
  return collect<true>(backbone_, head_, /*include_frozen_affine=*/true);
}

void SegModel::zero_grad() {
  backbone_.zero_grad();
  head_.zero_grad();
}

void SegModel::set_bn_mode(BnMode mode) {
  backbone_.set_bn_mode(mode);
  head_.set_bn_mode(mode);
}

// Checkpoint ----------------------------------------------------------------

void Checkpoint::set(const std::string& name, std::vector<double> values) {
  for (auto& e : entries) {
    if (e.first == name) {
      e.second = std::move(values);
      return;
    }
  }
  entries.emplace_back(name, std::move(values));
}

const std::vector<double>* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.first == name) return &e.second;
  }
  return nullptr;
}

bool Checkpoint::has(const std::string& name) const { return find(name) != nullptr; }

namespace {

constexpr char kMagic[4] = {'D', 'L', 'V', '3'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated while reading " + what);
  return v;
}

}  // namespace

void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, values] : ckpt.entries) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(values.size()));
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = read_pod<std::uint32_t>(is, "entry count");
  Checkpoint ckpt;
  ckpt.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated name");
    const auto n = read_pod<std::uint64_t>(is, "array length");
    std::vector<double> values(n);
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated array " + name);
    ckpt.entries.emplace_back(std::move(name), std::move(values));
  }
  return ckpt;
}

Checkpoint model_to_checkpoint(SegModel& model, const Checkpoint* extras) {
  Checkpoint ckpt;
  const ModelArch& a = model.arch();
  ckpt.set("meta.in_channels", {static_cast<double>(a.in_channels)});
  ckpt.set("meta.stem_channels", {static_cast<double>(a.stem_channels)});
  std::vector<double> bc;
  for (int c : a.block_channels) bc.push_back(c);
  ckpt.set("meta.block_channels", bc);
  ckpt.set("meta.extra_blocks", {static_cast<double>(a.extra_blocks)});
  ckpt.set("meta.multi_grid", {static_cast<double>(a.multi_grid[0]),
                               static_cast<double>(a.multi_grid[1]),
                               static_cast<double>(a.multi_grid[2])});
  std::vector<double> rates;
  for (int r : a.aspp.base_rates) rates.push_back(r);
  ckpt.set("meta.aspp_rates", rates);
  ckpt.set("meta.aspp_filters", {static_cast<double>(a.aspp.branch_filters)});
  ckpt.set("meta.aspp_image_pooling", {a.aspp.image_pooling ? 1.0 : 0.0});
  ckpt.set("meta.aspp_extra_rate_24", {a.aspp.extra_rate_24 ? 1.0 : 0.0});
  ckpt.set("meta.num_classes", {static_cast<double>(a.aspp.num_classes)});

  for (const ParamRef& p : model.state_arrays()) {
    ckpt.set(p.name, std::vector<double>(p.value, p.value + p.size));
  }
  if (extras) {
    for (const auto& [name, values] : extras->entries) ckpt.set(name, values);
  }
  return ckpt;
}

SegModel model_from_checkpoint(const Checkpoint& ckpt, int output_stride) {
  auto need = [&](const std::string& name) -> const std::vector<double>& {
    const auto* v = ckpt.find(name);
    if (!v) throw std::runtime_error("checkpoint: missing entry " + name);
    return *v;
  };
  ModelArch arch;
  arch.in_channels = static_cast<int>(need("meta.in_channels")[0]);
  arch.stem_channels = static_cast<int>(need("meta.stem_channels")[0]);
  arch.block_channels.clear();
  for (double v : need("meta.block_channels")) arch.block_channels.push_back(static_cast<int>(v));
  arch.extra_blocks = static_cast<int>(need("meta.extra_blocks")[0]);
  const auto& mg = need("meta.multi_grid");
  arch.multi_grid = {static_cast<int>(mg[0]), static_cast<int>(mg[1]),
                     static_cast<int>(mg[2])};
  arch.aspp.base_rates.clear();
  for (double v : need("meta.aspp_rates")) arch.aspp.base_rates.push_back(static_cast<int>(v));
  arch.aspp.branch_filters = static_cast<int>(need("meta.aspp_filters")[0]);
  arch.aspp.image_pooling = need("meta.aspp_image_pooling")[0] != 0.0;
  arch.aspp.extra_rate_24 = need("meta.aspp_extra_rate_24")[0] != 0.0;
  arch.aspp.num_classes = static_cast<int>(need("meta.num_classes")[0]);

  SegModel model(arch, output_stride);
  for (const ParamRef& p : model.state_arrays()) {
    const auto& values = need(p.name);
    if (values.size() != p.size) {
      throw std::runtime_error("checkpoint: size mismatch for " + p.name);
    }
    std::memcpy(p.value, values.data(), p.size * sizeof(double));
  }
  return model;
}

}  // namespace dlv3
