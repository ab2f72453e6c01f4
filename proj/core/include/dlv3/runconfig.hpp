#pragma once

#include <string>
#include <vector>

#include "dlv3/eval.hpp"
#include "dlv3/model.hpp"
#include "dlv3/train.hpp"

namespace dlv3 {

// Whole-run configuration, read from a plain-text file of `section.key = value`
// lines ('#' starts a comment, blank lines ignored, unknown keys rejected).
// Defaults are the desk-scale protocol. parse(serialize(c)) == c.
struct RunConfig {
  std::string train_manifest;
  std::string val_manifest;
  std::uint64_t seed = 1;

  ModelArch arch = default_arch();
  TrainConfig train;
  InferenceConfig eval;

  static ModelArch default_arch() {
    ModelArch a;
    a.in_channels = 3;
    a.stem_channels = 32;
    a.block_channels = {32, 64, 128, 256};
    a.extra_blocks = 0;
    a.multi_grid = {1, 2, 4};
    a.aspp.base_rates = {6, 12, 18};
    a.aspp.branch_filters = 256;
    a.aspp.image_pooling = true;
    a.aspp.extra_rate_24 = false;
    a.aspp.num_classes = kNumShapeClasses;
    return a;
  }

  bool operator==(const RunConfig& other) const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& config);

// One line per key: `name = default  # explanation`, for --help output.
std::string run_config_reference();

}  // namespace dlv3
