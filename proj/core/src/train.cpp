#include "dlv3/train.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "dlv3/eval.hpp"
#include "dlv3/rng.hpp"

namespace dlv3 {

void TrainConfig::validate() const {
  if (stages.empty()) throw std::invalid_argument("training needs at least one stage");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (crop_size < 1) throw std::invalid_argument("crop_size must be >= 1");
  if (scale_min > scale_max || scale_min <= 0.0) {
    throw std::invalid_argument("scale range must satisfy 0 < min <= max");
  }
  if (flip_prob < 0.0 || flip_prob > 1.0) {
    throw std::invalid_argument("flip_prob must lie in [0, 1]");
  }
  if (bootstrap_factor < 1) throw std::invalid_argument("bootstrap_factor must be >= 1");
  for (const StageConfig& s : stages) {
    if (s.iters < 0) throw std::invalid_argument("stage iterations must be >= 0");
    if ((crop_size - 1) % s.train_os != 0) {
      throw std::invalid_argument("crop_size must be N*" + std::to_string(s.train_os) +
                                  "+1 for a stage at that output_stride, got " +
                                  std::to_string(crop_size));
    }
  }
}

double poly_lr(int iter, int max_iter, double base_lr, double power) {
  if (max_iter <= 0) throw std::invalid_argument("poly_lr: max_iter must be positive");
  if (iter < 0 || iter > max_iter) {
    throw std::invalid_argument("poly_lr: iter " + std::to_string(iter) +
                                " outside [0, " + std::to_string(max_iter) + "]");
  }
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / max_iter, power);
}

namespace {

GrayImage nearest_resize_labels(const GrayImage& label, int out_h, int out_w) {
  GrayImage out;
  out.h = out_h;
  out.w = out_w;
  out.pixels.resize(static_cast<std::size_t>(out_h) * out_w);
  auto src_of = [](int i, int in_n, int out_n) {
    const double s = out_n > 1 ? static_cast<double>(i) * (in_n - 1) / (out_n - 1)
                               : 0.5 * (in_n - 1);
    return std::min(static_cast<int>(std::lround(s)), in_n - 1);
  };
  for (int y = 0; y < out_h; ++y) {
    const int sy = src_of(y, label.h, out_h);
    for (int x = 0; x < out_w; ++x) {
      out.at(y, x) = label.at(sy, src_of(x, label.w, out_w));
    }
  }
  return out;
}

GrayImage flip_labels(const GrayImage& label) {
  GrayImage out = label;
  for (int y = 0; y < label.h; ++y) {
    for (int x = 0; x < label.w; ++x) out.at(y, x) = label.at(y, label.w - 1 - x);
  }
  return out;
}

}  // namespace

Sample augment(const Tensor& image, const GrayImage& label, const AugmentConfig& cfg,
               Rng& rng) {
  if (image.h() != label.h || image.w() != label.w) {
    throw std::invalid_argument("augment: image and label are not aligned");
  }
  // Fixed draw order: scale, crop row, crop column, flip.
  const double s = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * rng.uniform();
  const double off_y_u = rng.uniform();
  const double off_x_u = rng.uniform();
  const double flip_u = rng.uniform();

  const int sh = std::max(1, static_cast<int>(std::lround(image.h() * s)));
  const int sw = std::max(1, static_cast<int>(std::lround(image.w() * s)));
  Tensor img = bilinear_resize(image, sh, sw);
  GrayImage lab = nearest_resize_labels(label, sh, sw);

  // Pad bottom/right up to the crop size; image padding uses the dataset
  // mean so padded pixels are "average" content, labels become ignore.
  const int ph = std::max(cfg.crop_size, sh);
  const int pw = std::max(cfg.crop_size, sw);
  if (ph != sh || pw != sw) {
    Tensor padded(1, img.c(), ph, pw);
    for (int c = 0; c < img.c(); ++c) {
      double* dst = padded.plane(0, c);
      std::fill(dst, dst + static_cast<std::size_t>(ph) * pw, cfg.pad_mean[c]);
      for (int y = 0; y < sh; ++y) {
        for (int x = 0; x < sw; ++x) {
          dst[static_cast<std::size_t>(y) * pw + x] = img.at(0, c, y, x);
        }
      }
    }
    img = std::move(padded);
    GrayImage lp;
    lp.h = ph;
    lp.w = pw;
    lp.pixels.assign(static_cast<std::size_t>(ph) * pw,
                     static_cast<std::uint8_t>(cfg.ignore_label));
    for (int y = 0; y < sh; ++y) {
      for (int x = 0; x < sw; ++x) lp.at(y, x) = lab.at(y, x);
    }
    lab = std::move(lp);
  }

  const int range_y = img.h() - cfg.crop_size;
  const int range_x = img.w() - cfg.crop_size;
  const int oy = std::min(range_y, static_cast<int>(off_y_u * (range_y + 1)));
  const int ox = std::min(range_x, static_cast<int>(off_x_u * (range_x + 1)));

  Tensor img_crop(1, img.c(), cfg.crop_size, cfg.crop_size);
  GrayImage lab_crop;
  lab_crop.h = cfg.crop_size;
  lab_crop.w = cfg.crop_size;
  lab_crop.pixels.resize(static_cast<std::size_t>(cfg.crop_size) * cfg.crop_size);
  for (int c = 0; c < img.c(); ++c) {
    for (int y = 0; y < cfg.crop_size; ++y) {
      const double* src = img.plane(0, c) + static_cast<std::size_t>(y + oy) * img.w() + ox;
      double* dst = img_crop.plane(0, c) + static_cast<std::size_t>(y) * cfg.crop_size;
      std::copy(src, src + cfg.crop_size, dst);
    }
  }
  for (int y = 0; y < cfg.crop_size; ++y) {
    for (int x = 0; x < cfg.crop_size; ++x) lab_crop.at(y, x) = lab.at(y + oy, x + ox);
  }

  if (flip_u < cfg.flip_prob) {
    img_crop = flip_horizontal(img_crop);
    lab_crop = flip_labels(lab_crop);
  }

  Sample out;
  out.image = std::move(img_crop);
  out.label = std::move(lab_crop);
  out.present_mask = present_mask_of(out.label);
  return out;
}

namespace {

// Shared cross-entropy core: logits must already be at the ground-truth
// resolution. Returns the mean loss over scored pixels and the gradient at
// that resolution.
LossResult softmax_xent(const Tensor& logits, const std::vector<GrayImage>& gt,
                        int ignore_label) {
  const int classes = logits.c();
  const std::size_t plane = static_cast<std::size_t>(logits.h()) * logits.w();
  if (gt.size() != static_cast<std::size_t>(logits.n())) {
    throw std::invalid_argument("loss: batch size mismatch");
  }
  for (const GrayImage& g : gt) {
    if (g.h != logits.h() || g.w != logits.w()) {
      throw std::invalid_argument("loss: label map size mismatch");
    }
  }

  // First pass counts the scored pixels so the gradient can be scaled by the
  // mean in a single sweep.
  std::size_t scored = 0;
  for (const GrayImage& g : gt) {
    for (std::uint8_t v : g.pixels) {
      if (v == ignore_label) continue;
      if (v >= classes) {
        throw std::invalid_argument("loss: label " + std::to_string(int(v)) +
                                    " outside [0, " + std::to_string(classes) + ")");
      }
      ++scored;
    }
  }
  if (scored == 0) throw std::invalid_argument("loss: every pixel is ignored");

  LossResult res;
  res.grad_logits = Tensor(logits.n(), classes, logits.h(), logits.w());
  const double inv_m = 1.0 / static_cast<double>(scored);
  double loss = 0.0;
  std::vector<double> probs(classes);
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      const int label = gt[n].pixels[i];
      if (label == ignore_label) continue;
      double m = -1e300;
      for (int c = 0; c < classes; ++c) m = std::max(m, logits.plane(n, c)[i]);
      double z = 0.0;
      for (int c = 0; c < classes; ++c) {
        probs[c] = std::exp(logits.plane(n, c)[i] - m);
        z += probs[c];
      }
      const double inv_z = 1.0 / z;
      loss -= std::log(probs[label] * inv_z);
      for (int c = 0; c < classes; ++c) {
        const double p = probs[c] * inv_z;
        res.grad_logits.plane(n, c)[i] = (p - (c == label ? 1.0 : 0.0)) * inv_m;
      }
    }
  }
  res.loss = loss * inv_m;
  return res;
}

}  // namespace

LossResult upsampled_logits_loss(const Tensor& logits, const std::vector<GrayImage>& gt,
                                 int ignore_label) {
  if (gt.empty()) throw std::invalid_argument("loss: empty ground truth");
  const int gh = gt.front().h, gw = gt.front().w;
  Tensor up = bilinear_resize(logits, gh, gw);
  LossResult res = softmax_xent(up, gt, ignore_label);
  res.grad_logits = bilinear_resize_backward(res.grad_logits, logits.h(), logits.w());
  return res;
}

LossResult downsampled_gt_loss(const Tensor& logits, const std::vector<GrayImage>& gt,
                               int ignore_label) {
  std::vector<GrayImage> small;
  small.reserve(gt.size());
  for (const GrayImage& g : gt) {
    small.push_back(nearest_resize_labels(g, logits.h(), logits.w()));
  }
  return softmax_xent(logits, small, ignore_label);
}

namespace {

bool has_hard_class(std::uint32_t present_mask, const std::vector<int>& hard_classes) {
  for (int c : hard_classes) {
    if (present_mask & (1u << c)) return true;
  }
  return false;
}

}  // namespace

Manifest bootstrap_manifest(const Manifest& manifest, const std::vector<int>& hard_classes,
                            int factor) {
  if (factor < 1) throw std::invalid_argument("bootstrap factor must be >= 1");
  Manifest out;
  out.dir = manifest.dir;
  out.split = manifest.split;
  for (const ManifestEntry& e : manifest.entries) {
    const int copies = has_hard_class(e.present_mask, hard_classes) ? factor : 1;
    for (int i = 0; i < copies; ++i) out.entries.push_back(e);
  }
  return out;
}

std::vector<int> bootstrap_indices(const std::vector<Sample>& samples,
                                   const std::vector<int>& hard_classes, int factor) {
  if (factor < 1) throw std::invalid_argument("bootstrap factor must be >= 1");
  std::vector<int> order;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int copies =
        has_hard_class(samples[i].present_mask, hard_classes) ? factor : 1;
    for (int c = 0; c < copies; ++c) order.push_back(static_cast<int>(i));
  }
  return order;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "iter,lr,loss,val_miou\n";
  os.precision(17);
  for (const MetricsRow& row : log) {
    os << row.iter << ',' << row.lr << ',' << row.loss << ',';
    if (row.val_miou) os << *row.val_miou;
    os << '\n';
  }
}

TrainResult run_training(SegModel model, const std::vector<Sample>& train_samples,
                         const std::vector<Sample>& val_samples, const TrainConfig& config,
                         Rng& rng) {
  config.validate();
  if (train_samples.empty()) throw std::invalid_argument("training set is empty");

  AugmentConfig aug;
  aug.crop_size = config.crop_size;
  aug.scale_min = config.scale_min;
  aug.scale_max = config.scale_max;
  aug.flip_prob = config.flip_prob;
  aug.ignore_label = config.ignore_label;
  aug.pad_mean = channel_means(train_samples);

  const std::vector<int> base_order =
      bootstrap_indices(train_samples, config.hard_classes, config.bootstrap_factor);

  std::map<std::string, std::vector<double>> momentum;
  TrainResult result{std::move(model), {}, 0.0, {}};
  int global_iter = 0;

  for (const StageConfig& stage : config.stages) {
    if (result.model.output_stride() != stage.train_os) {
      result.model = result.model.recompiled(stage.train_os);
    }
    result.model.set_bn_mode(stage.bn_mode);

    std::vector<int> order = base_order;
    std::size_t cursor = order.size();  // forces a shuffle on first use

    for (int it = 0; it < stage.iters; ++it) {
      const double lr = poly_lr(it, stage.iters, stage.lr, config.power);

      Tensor batch(config.batch_size, 3, config.crop_size, config.crop_size);
      std::vector<GrayImage> labels(config.batch_size);
      for (int b = 0; b < config.batch_size; ++b) {
        if (cursor >= order.size()) {  // epoch exhausted: reshuffle
          rng.shuffle(order);
          cursor = 0;
        }
        const Sample& src = train_samples[order[cursor++]];
        Sample s = augment(src.image, src.label, aug, rng);
        std::copy(s.image.data(), s.image.data() + s.image.size(),
                  batch.data() + static_cast<std::size_t>(b) * 3 * config.crop_size *
                                     config.crop_size);
        labels[b] = std::move(s.label);
      }

      result.model.zero_grad();
      SegTape tape;
      Tensor logits = result.model.forward(batch, stage.bn_mode, &tape);
      LossResult loss = config.upsample_logits
                            ? upsampled_logits_loss(logits, labels, config.ignore_label)
                            : downsampled_gt_loss(logits, labels, config.ignore_label);
      if (!std::isfinite(loss.loss)) {
        throw std::runtime_error("training aborted: loss is " + std::to_string(loss.loss) +
                                 " at iteration " + std::to_string(global_iter));
      }
      result.model.backward(tape, loss.grad_logits);

      for (const ParamRef& p : result.model.trainable_params()) {
        auto [slot, inserted] = momentum.try_emplace(p.name, p.size, 0.0);
        std::vector<double>& v = slot->second;
        for (std::size_t i = 0; i < p.size; ++i) {
          const double g = p.grad[i] + config.weight_decay * p.value[i];
          v[i] = config.momentum * v[i] - lr * g;
          p.value[i] += v[i];
        }
      }

      MetricsRow row{global_iter, lr, loss.loss, std::nullopt};
      const bool last_of_stage = it == stage.iters - 1;
      if ((config.val_interval > 0 && (it + 1) % config.val_interval == 0) ||
          last_of_stage) {
        if (!val_samples.empty()) {
          row.val_miou = quick_miou(result.model, val_samples, config.ignore_label);
        }
      }
      result.log.push_back(row);
      ++global_iter;
    }
  }

  if (!val_samples.empty()) {
    result.final_val_miou = quick_miou(result.model, val_samples, config.ignore_label);
  }

  result.trainer_state.set("train.iteration", {static_cast<double>(global_iter)});
  for (const auto& [name, buf] : momentum) {
    result.trainer_state.set("momentum." + name, buf);
  }
  return result;
}

}  // namespace dlv3
