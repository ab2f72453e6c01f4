#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dlv3/dataset.hpp"
#include "dlv3/model.hpp"

namespace dlv3 {

// One phase of the schedule. The canonical protocol is two stages: train at
// output_stride 16 with live batch normalization, then recompile the same
// weights at output_stride 8, freeze batch normalization, and continue with
// a smaller learning rate.
struct StageConfig {
  int train_os = 16;
  BnMode bn_mode = BnMode::Train;
  double lr = 0.007;
  int iters = 1500;

  bool operator==(const StageConfig&) const = default;
};

struct TrainConfig {
  int crop_size = 65;  // must be N*train_os + 1 for every stage
  double power = 0.9;
  int batch_size = 8;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double flip_prob = 0.5;
  int ignore_label = kIgnoreLabel;
  bool upsample_logits = true;  // false: downsample the ground truth instead
  std::vector<StageConfig> stages{{16, BnMode::Train, 0.007, 1500},
                                  {8, BnMode::Frozen, 0.001, 1500}};
  std::vector<int> hard_classes;
  int bootstrap_factor = 1;
  int val_interval = 250;  // 0 disables mid-stage validation rows

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Poly learning-rate policy: base_lr * (1 - iter/max_iter)^power.
double poly_lr(int iter, int max_iter, double base_lr, double power);

struct AugmentConfig {
  int crop_size = 65;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double flip_prob = 0.5;
  int ignore_label = kIgnoreLabel;
  std::array<double, 3> pad_mean{0.0, 0.0, 0.0};  // per-channel dataset mean
};

// Random scale (bilinear image / nearest label), pad to the crop size when
// the scaled sample is smaller (image: dataset mean, label: ignore), random
// crop, random horizontal flip. Consumes exactly four draws per call in this
// order: scale, crop row offset, crop column offset, flip.
Sample augment(const Tensor& image, const GrayImage& label, const AugmentConfig& cfg,
               Rng& rng);

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;  // at logits resolution
};

// Bilinearly upsamples logits to the ground-truth resolution and evaluates
// mean softmax cross-entropy over the pixels whose label is not
// ignore_label; the gradient flows back through the resize.
LossResult upsampled_logits_loss(const Tensor& logits, const std::vector<GrayImage>& gt,
                                 int ignore_label);

// The rejected alternative kept for ablations: nearest-downsamples the ground
// truth to the logits grid and scores there.
LossResult downsampled_gt_loss(const Tensor& logits, const std::vector<GrayImage>& gt,
                               int ignore_label);

// Duplicates every entry whose label map contains at least one pixel of a
// hard class `factor` times; order is preserved here and reshuffled by the
// epoch RNG during training.
Manifest bootstrap_manifest(const Manifest& manifest, const std::vector<int>& hard_classes,
                            int factor);
std::vector<int> bootstrap_indices(const std::vector<Sample>& samples,
                                   const std::vector<int>& hard_classes, int factor);

struct MetricsRow {
  int iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> val_miou;
};

struct TrainResult {
  SegModel model;
  std::vector<MetricsRow> log;
  double final_val_miou = 0.0;
  Checkpoint trainer_state;  // momentum buffers + iteration counter
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& log);

// Runs the staged protocol on the given model. Deterministic for a fixed rng
// state and inputs: two identical calls produce bit-identical weights.
// Aborts with an error if the loss turns NaN.
TrainResult run_training(SegModel model, const std::vector<Sample>& train_samples,
                         const std::vector<Sample>& val_samples, const TrainConfig& config,
                         Rng& rng);

}  // namespace dlv3
