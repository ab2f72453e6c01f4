#pragma once

#include <cstdint>
#include <string>

#include "dlv3/eval.hpp"
#include "dlv3/gradcheck.hpp"
#include "dlv3/runconfig.hpp"

namespace dlv3 {

// Command implementations behind the CLI, callable directly from tests.

struct GenerateDataResult {
  int train_count = 0;
  int val_count = 0;
  std::string train_manifest;
  std::string val_manifest;
};

// Writes the synthetic dataset plus train/val manifests (deterministic 80/20
// split: the first floor(0.8*count) samples train, the rest validate).
GenerateDataResult run_generate_data(std::uint64_t seed, int count, int size,
                                     const std::string& out_dir);

struct TrainCommandResult {
  double final_val_miou = 0.0;
  int iterations = 0;
};

// Loads the manifests, trains per the config, writes the checkpoint and the
// `iter,lr,loss[,val_miou]` metrics CSV next to it (or at metrics_csv).
TrainCommandResult run_train_command(const RunConfig& config,
                                     const std::string& out_checkpoint,
                                     const std::string& metrics_csv = "");

// Evaluates a checkpoint over a manifest; writes per-class IOU rows plus the
// mean to report_csv, and prediction masks as PGM files into save_preds_dir
// when given.
IouReport run_eval_command(const std::string& checkpoint_path,
                           const std::string& manifest_path, const InferenceConfig& infer,
                           int ignore_label, const std::string& report_csv,
                           const std::string& save_preds_dir = "",
                           AbsentClassPolicy policy = AbsentClassPolicy::Exclude);

// CSV of (rate, valid_weight_fraction) for rate = 1..max_rate.
void run_analyze_fov(int feature_h, int feature_w, int kernel, int max_rate,
                     const std::string& out_csv);

}  // namespace dlv3
