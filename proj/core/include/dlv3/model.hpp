#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlv3/aspp.hpp"
#include "dlv3/backbone.hpp"

namespace dlv3 {

// A named view over one parameter (or state) array of the model.
struct ParamRef {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;  // null for non-trainable state (running stats)
  std::size_t size = 0;
  bool bn_affine = false;  // gamma/beta, excluded from updates when frozen
};

struct ModelArch {
  int in_channels = 3;
  int stem_channels = 32;
  std::vector<int> block_channels{32, 64, 128, 256};
  int extra_blocks = 0;
  std::array<int, 3> multi_grid{1, 1, 1};
  AsppConfig aspp;

  bool operator==(const ModelArch&) const = default;
};

struct SegTape {
  BackboneTape backbone;
  AsppTape aspp;
};

// Backbone + head compiled for one output_stride. Recompiling at another
// output_stride re-resolves strides and rates only; weights carry over, which
// is what lets one model train at output_stride 16 and continue at 8.
class SegModel {
 public:
  SegModel() = default;
  SegModel(const ModelArch& arch, int output_stride);

  static SegModel initialized(const ModelArch& arch, int output_stride, Rng& rng);

  // Same weights, new output_stride.
  SegModel recompiled(int output_stride);

  // Logits at feature resolution: (n, num_classes, (h-1)/os+1, (w-1)/os+1).
  Tensor forward(const Tensor& x, BnMode mode, SegTape* tape = nullptr);
  void backward(const SegTape& tape, const Tensor& grad_logits);

  // Trainable parameters; BN affine pairs are omitted for frozen layers.
  std::vector<ParamRef> trainable_params();
  // Every persistent array (weights, BN affine + running stats), for
  // serialization. Order is fixed by the topology.
  std::vector<ParamRef> state_arrays();

  void zero_grad();
  void set_bn_mode(BnMode mode);

  const ModelArch& arch() const { return arch_; }
  int output_stride() const { return os_; }
  int num_classes() const { return arch_.aspp.num_classes; }
  int nominal_output_stride() const { return backbone_.spec.nominal_output_stride(); }

  CompiledNetwork& backbone() { return backbone_; }
  AsppHead& head() { return head_; }

 private:
  ModelArch arch_;
  int os_ = 16;
  CompiledNetwork backbone_;
  AsppHead head_;
};

// Checkpoint file: magic "DLV3", little-endian u32 version, u32 entry count,
// then entries of [u32 name length][name bytes][u64 count][count f64 values].
// Metadata describing the architecture rides along as meta.* arrays so a
// checkpoint alone is enough to rebuild the model.
struct Checkpoint {
  std::vector<std::pair<std::string, std::vector<double>>> entries;

  void set(const std::string& name, std::vector<double> values);
  const std::vector<double>* find(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint_file(const std::string& path);

// Model <-> checkpoint. `extras` carries trainer state (momenta, iteration).
Checkpoint model_to_checkpoint(SegModel& model, const Checkpoint* extras = nullptr);
SegModel model_from_checkpoint(const Checkpoint& ckpt, int output_stride);

}  // namespace dlv3
