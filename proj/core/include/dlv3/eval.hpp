#pragma once

#include <cstdint>
#include <vector>

#include "dlv3/dataset.hpp"
#include "dlv3/model.hpp"

namespace dlv3 {

struct InferenceConfig {
  int eval_os = 8;  // 8 or 16
  std::vector<double> scales{1.0};
  bool flip = false;

  void validate() const;
  bool operator==(const InferenceConfig&) const = default;
};

// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(int classes)
      : num_classes(classes),
        counts(static_cast<std::size_t>(classes) * classes, 0) {}

  std::uint64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  std::uint64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  std::uint64_t total() const;
};

// How classes with an empty IOU denominator (never in the ground truth and
// never predicted) enter the mean. Benchmarks differ; excluding them is the
// default.
enum class AbsentClassPolicy { Exclude, AsZero, AsOne };

struct IouReport {
  double miou = 0.0;
  std::vector<double> per_class;  // NaN for absent classes under Exclude
  std::vector<bool> present;
};

// Per-pixel class probabilities at the input resolution. For every scale the
// image is bilinearly resized (target sizes snapped to the nearest aligned
// N*nominal+1 size), run through the model with Frozen BN, the logits are
// bilinearly resized back to the original size and softmaxed; mirrored runs
// are mirrored back. The result is the arithmetic mean over all runs.
Tensor predict_probs(SegModel& model, const Tensor& image, const InferenceConfig& config);

// Argmax over the class axis; ties resolve to the smallest class id.
GrayImage argmax_labels(const Tensor& probs);

// Scores all pixels whose ground truth is not ignore_label.
void accumulate(ConfusionMatrix& conf, const GrayImage& pred, const GrayImage& gt,
                int ignore_label);

IouReport mean_iou(const ConfusionMatrix& conf,
                   AbsentClassPolicy policy = AbsentClassPolicy::Exclude);

// Single-scale, no-flip mIOU of a model over samples, evaluated with Frozen
// BN at the model's own output_stride. Used for training-time monitoring.
double quick_miou(SegModel& model, const std::vector<Sample>& samples, int ignore_label);

// Full-protocol evaluation over samples.
IouReport evaluate_samples(SegModel& model, const std::vector<Sample>& samples,
                           const InferenceConfig& config, int ignore_label);

}  // namespace dlv3
