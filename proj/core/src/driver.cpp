#include "dlv3/driver.hpp"

#include <filesystem>
#include <fstream>

#include "dlv3/conv.hpp"
#include "dlv3/rng.hpp"

namespace fs = std::filesystem;

namespace dlv3 {

GenerateDataResult run_generate_data(std::uint64_t seed, int count, int size,
                                     const std::string& out_dir) {
  Manifest all = generate_dataset(seed, count, size, out_dir);
  const int train_count = static_cast<int>(all.entries.size() * 8 / 10);

  Manifest train, val;
  train.dir = val.dir = out_dir;
  train.split = "train";
  val.split = "val";
  for (std::size_t i = 0; i < all.entries.size(); ++i) {
    (static_cast<int>(i) < train_count ? train : val).entries.push_back(all.entries[i]);
  }

  GenerateDataResult res;
  res.train_count = static_cast<int>(train.entries.size());
  res.val_count = static_cast<int>(val.entries.size());
  res.train_manifest = (fs::path(out_dir) / "train.manifest").string();
  res.val_manifest = (fs::path(out_dir) / "val.manifest").string();
  write_manifest(res.train_manifest, train);
  write_manifest(res.val_manifest, val);
  return res;
}

TrainCommandResult run_train_command(const RunConfig& config,
                                     const std::string& out_checkpoint,
                                     const std::string& metrics_csv) {
  config.train.validate();  // reject crop/OS misalignment before loading anything
  if (config.train_manifest.empty()) {
    throw std::invalid_argument("config: dataset.train_manifest is required");
  }
  const std::vector<Sample> train_samples =
      load_samples(load_manifest(config.train_manifest));
  std::vector<Sample> val_samples;
  if (!config.val_manifest.empty()) {
    val_samples = load_samples(load_manifest(config.val_manifest));
  }

  Rng rng(config.seed);
  SegModel model =
      SegModel::initialized(config.arch, config.train.stages.front().train_os, rng);
  TrainResult result =
      run_training(std::move(model), train_samples, val_samples, config.train, rng);

  Checkpoint ckpt = model_to_checkpoint(result.model, &result.trainer_state);
  write_checkpoint_file(out_checkpoint, ckpt);
  const std::string csv = metrics_csv.empty() ? out_checkpoint + ".csv" : metrics_csv;
  write_metrics_csv(csv, result.log);

  return {result.final_val_miou, static_cast<int>(result.log.size())};
}

IouReport run_eval_command(const std::string& checkpoint_path,
                           const std::string& manifest_path, const InferenceConfig& infer,
                           int ignore_label, const std::string& report_csv,
                           const std::string& save_preds_dir, AbsentClassPolicy policy) {
  infer.validate();
  SegModel model = model_from_checkpoint(read_checkpoint_file(checkpoint_path),
                                         infer.eval_os);
  const Manifest manifest = load_manifest(manifest_path);
  const std::vector<Sample> samples = load_samples(manifest);

  if (!save_preds_dir.empty()) fs::create_directories(save_preds_dir);
  ConfusionMatrix conf(model.num_classes());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tensor probs = predict_probs(model, samples[i].image, infer);
    GrayImage pred = argmax_labels(probs);
    accumulate(conf, pred, samples[i].label, ignore_label);
    if (!save_preds_dir.empty()) {
      const std::string stem = fs::path(manifest.entries[i].image_path).stem().string();
      write_pgm((fs::path(save_preds_dir) / (stem + ".pgm")).string(), pred);
    }
  }
  const IouReport report = mean_iou(conf, policy);

  if (!report_csv.empty()) {
    std::ofstream os(report_csv, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + report_csv + " for writing");
    os << "class,iou\n";
    os.precision(17);
    for (int c = 0; c < static_cast<int>(report.per_class.size()); ++c) {
      os << c << ',';
      if (report.present[c] || !std::isnan(report.per_class[c])) os << report.per_class[c];
      else os << "absent";
      os << '\n';
    }
    os << "mean," << report.miou << '\n';
  }
  return report;
}

void run_analyze_fov(int feature_h, int feature_w, int kernel, int max_rate,
                     const std::string& out_csv) {
  if (max_rate < 1) throw std::invalid_argument("max rate must be >= 1");
  std::ofstream os(out_csv, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + out_csv + " for writing");
  os << "rate,valid_weight_fraction\n";
  os.precision(17);
  for (int r = 1; r <= max_rate; ++r) {
    os << r << ',' << valid_weight_fraction(feature_h, feature_w, kernel, r) << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + out_csv);
}

}  // namespace dlv3
