#include <CLI11.hpp>
#include <cstdio>
#include <exception>

#include "dlv3/driver.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;    // bad flags or configuration
constexpr int kExitRuntime = 2;  // runtime or numeric failure

struct TrainFlags {
  std::string config_path;
  std::string out_checkpoint;
  std::string metrics_csv;
  std::vector<int> bootstrap_hard_classes;
  int bootstrap_factor = -1;
  bool no_upsample_logits = false;
  bool no_bn_finetune = false;
  int crop = -1;
  int train_os = -1;
  int batch = -1;
  std::int64_t seed = -1;
};

void apply_train_flags(dlv3::RunConfig& cfg, const TrainFlags& f) {
  if (!f.bootstrap_hard_classes.empty()) cfg.train.hard_classes = f.bootstrap_hard_classes;
  if (f.bootstrap_factor >= 1) cfg.train.bootstrap_factor = f.bootstrap_factor;
  if (f.no_upsample_logits) cfg.train.upsample_logits = false;
  if (f.no_bn_finetune) {
    for (auto& stage : cfg.train.stages) stage.bn_mode = dlv3::BnMode::Frozen;
  }
  if (f.crop > 0) cfg.train.crop_size = f.crop;
  if (f.train_os > 0) {
    for (auto& stage : cfg.train.stages) stage.train_os = f.train_os;
  }
  if (f.batch > 0) cfg.train.batch_size = f.batch;
  if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"atrous-convolution segmentation workbench"};
  app.require_subcommand(1);

  // generate-data ------------------------------------------------------------
  std::uint64_t gen_seed = 1;
  int gen_count = 500;
  int gen_size = 65;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate-data",
                                 "write a synthetic shape dataset with train/val manifests");
  gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
  gen->add_option("--count", gen_count, "number of images")->capture_default_str();
  gen->add_option("--size", gen_size, "square image size (N*32+1 recommended)")
      ->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // train ---------------------------------------------------------------------
  TrainFlags tf;
  auto* train = app.add_subcommand("train", "run the staged training protocol");
  train->add_option("--config", tf.config_path, "run configuration file")->required();
  train->add_option("--out-checkpoint", tf.out_checkpoint, "checkpoint output path")
      ->required();
  train->add_option("--metrics", tf.metrics_csv,
                    "metrics CSV path (default: <checkpoint>.csv)");
  train->add_option("--bootstrap-hard-classes", tf.bootstrap_hard_classes,
                    "classes whose images are duplicated");
  train->add_option("--bootstrap-factor", tf.bootstrap_factor, "duplication factor");
  train->add_flag("--no-upsample-logits", tf.no_upsample_logits,
                  "score at logits resolution by downsampling the ground truth");
  train->add_flag("--no-bn-finetune", tf.no_bn_finetune,
                  "freeze batch normalization in every stage");
  train->add_option("--crop", tf.crop, "override the training crop size");
  train->add_option("--train-os", tf.train_os, "override the output_stride of all stages")
      ->check(CLI::IsMember({8, 16, 32}));
  train->add_option("--batch", tf.batch, "override the batch size");
  train->add_option("--seed", tf.seed, "override the config seed");
  train->footer("Config file keys (defaults shown):\n" + dlv3::run_config_reference());

  // eval ----------------------------------------------------------------------
  std::string eval_ckpt, eval_manifest, eval_report, eval_preds;
  dlv3::InferenceConfig infer;
  int eval_ignore = dlv3::kIgnoreLabel;
  std::string absent_policy = "exclude";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over a manifest");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--manifest", eval_manifest, "manifest path")->required();
  eval->add_option("--eval-os", infer.eval_os, "evaluation output_stride")
      ->check(CLI::IsMember({8, 16}))
      ->capture_default_str();
  eval->add_option("--scales", infer.scales, "multi-scale inference factors")
      ->capture_default_str();
  eval->add_flag("--flip", infer.flip, "also average left-right flipped inputs");
  eval->add_option("--report", eval_report, "per-class IOU report CSV")->required();
  eval->add_option("--save-preds", eval_preds, "directory for PGM prediction masks");
  eval->add_option("--ignore-label", eval_ignore, "label excluded from scoring")
      ->capture_default_str();
  eval->add_option("--absent-class", absent_policy,
                   "mean-IOU treatment of absent classes")
      ->check(CLI::IsMember({"exclude", "zero", "one"}))
      ->capture_default_str();

  // analyze-fov ----------------------------------------------------------------
  std::vector<int> fov_size{65, 65};
  int fov_kernel = 3;
  int fov_max_rate = 65;
  std::string fov_out;
  auto* fov = app.add_subcommand(
      "analyze-fov", "valid-weight fraction of an atrous kernel as the rate grows");
  fov->add_option("--feature-size", fov_size, "feature map height and width")
      ->expected(2)
      ->capture_default_str();
  fov->add_option("--kernel", fov_kernel, "kernel size (odd)")->capture_default_str();
  fov->add_option("--max-rate", fov_max_rate, "largest rate to tabulate")
      ->capture_default_str();
  fov->add_option("--out", fov_out, "output CSV")->required();

  // gradcheck -------------------------------------------------------------------
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand(
      "gradcheck", "finite-difference verification of conv, BN, ASPP and loss gradients");
  gc->add_option("--seed", gc_seed, "suite seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto res = dlv3::run_generate_data(gen_seed, gen_count, gen_size, gen_out);
      std::printf("wrote %d train / %d val samples under %s\n", res.train_count,
                  res.val_count, gen_out.c_str());
    } else if (*train) {
      dlv3::RunConfig cfg = dlv3::load_run_config(tf.config_path);
      apply_train_flags(cfg, tf);
      auto res = dlv3::run_train_command(cfg, tf.out_checkpoint, tf.metrics_csv);
      std::printf("trained %d iterations, final val mIOU %.6f\n", res.iterations,
                  res.final_val_miou);
    } else if (*eval) {
      infer.validate();
      dlv3::AbsentClassPolicy policy = dlv3::AbsentClassPolicy::Exclude;
      if (absent_policy == "zero") policy = dlv3::AbsentClassPolicy::AsZero;
      if (absent_policy == "one") policy = dlv3::AbsentClassPolicy::AsOne;
      auto report = dlv3::run_eval_command(eval_ckpt, eval_manifest, infer, eval_ignore,
                                           eval_report, eval_preds, policy);
      std::printf("mIOU %.6f over %zu classes\n", report.miou, report.per_class.size());
    } else if (*fov) {
      dlv3::run_analyze_fov(fov_size[0], fov_size[1], fov_kernel, fov_max_rate, fov_out);
      std::printf("wrote %s\n", fov_out.c_str());
    } else if (*gc) {
      const auto reports = dlv3::run_gradcheck_suites(gc_seed);
      bool ok = true;
      for (const auto& r : reports) {
        std::printf("%-10s max rel err %.3e\n", r.component.c_str(), r.max_rel_err);
        ok = ok && r.max_rel_err <= dlv3::kGradCheckTolerance;
      }
      if (!ok) {
        std::fprintf(stderr, "gradcheck FAILED (tolerance %.1e)\n",
                     dlv3::kGradCheckTolerance);
        return kExitRuntime;
      }
      std::printf("gradcheck passed (tolerance %.1e)\n", dlv3::kGradCheckTolerance);
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
