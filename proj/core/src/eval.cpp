#include "dlv3/eval.hpp"

#include <cmath>
#include <stdexcept>

namespace dlv3 {

void InferenceConfig::validate() const {
  if (eval_os != 8 && eval_os != 16) {
    throw std::invalid_argument("eval output_stride must be 8 or 16");
  }
  if (scales.empty()) throw std::invalid_argument("scales must be nonempty");
  for (double s : scales) {
    if (s <= 0.0) throw std::invalid_argument("scales must be positive");
  }
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t v : counts) t += v;
  return t;
}

namespace {

// Nearest size of the form N*alignment + 1 (N >= 0), so every rescaled input
// satisfies the backbone's grid convention.
int snap_aligned(int target, int alignment) {
  const int n = static_cast<int>(std::lround((target - 1) / static_cast<double>(alignment)));
  return std::max(1, n * alignment + 1);
}

// Softmax over the class axis, in place.
void softmax_channels(Tensor& t) {
  const int c = t.c();
  const std::size_t plane = static_cast<std::size_t>(t.h()) * t.w();
  for (int n = 0; n < t.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double m = -1e300;
      for (int k = 0; k < c; ++k) m = std::max(m, t.plane(n, k)[i]);
      double z = 0.0;
      for (int k = 0; k < c; ++k) z += std::exp(t.plane(n, k)[i] - m);
      const double inv = 1.0 / z;
      for (int k = 0; k < c; ++k) {
        double& v = t.plane(n, k)[i];
        v = std::exp(v - m) * inv;
      }
    }
  }
}

}  // namespace

Tensor predict_probs(SegModel& model, const Tensor& image, const InferenceConfig& config) {
  config.validate();
  if (model.output_stride() != config.eval_os) {
    throw std::invalid_argument("model is compiled for output_stride " +
                                std::to_string(model.output_stride()) +
                                ", config asks for " + std::to_string(config.eval_os));
  }
  const int h = image.h(), w = image.w();
  const int align = model.nominal_output_stride();
  Tensor acc(image.n(), model.num_classes(), h, w);
  int runs = 0;

  for (double s : config.scales) {
    const int raw_h = static_cast<int>(std::lround(h * s));
    const int raw_w = static_cast<int>(std::lround(w * s));
    if (raw_h < 1 || raw_w < 1) {
      throw std::invalid_argument("scale " + std::to_string(s) +
                                  " shrinks the image below one pixel");
    }
    const int th = snap_aligned(raw_h, align);
    const int tw = snap_aligned(raw_w, align);
    Tensor scaled = bilinear_resize(image, th, tw);

    for (int mirrored = 0; mirrored < (config.flip ? 2 : 1); ++mirrored) {
      Tensor input = mirrored ? flip_horizontal(scaled) : scaled;
      Tensor logits = model.forward(input, BnMode::Frozen);
      if (mirrored) logits = flip_horizontal(logits);
      Tensor up = bilinear_resize(logits, h, w);
      softmax_channels(up);
      add_inplace(acc, up);
      ++runs;
    }
  }
  return scale(acc, 1.0 / runs);
}

GrayImage argmax_labels(const Tensor& probs) {
  if (probs.n() != 1) throw std::invalid_argument("argmax_labels expects a single sample");
  GrayImage out;
  out.h = probs.h();
  out.w = probs.w();
  out.pixels.resize(static_cast<std::size_t>(probs.h()) * probs.w());
  const std::size_t plane = out.pixels.size();
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    double bv = probs.plane(0, 0)[i];
    for (int c = 1; c < probs.c(); ++c) {
      const double v = probs.plane(0, c)[i];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    out.pixels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

void accumulate(ConfusionMatrix& conf, const GrayImage& pred, const GrayImage& gt,
                int ignore_label) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw std::invalid_argument("accumulate: prediction/ground-truth size mismatch");
  }
  for (std::size_t i = 0; i < gt.pixels.size(); ++i) {
    const int g = gt.pixels[i];
    if (g == ignore_label) continue;
    const int p = pred.pixels[i];
    if (g >= conf.num_classes || p >= conf.num_classes) {
      throw std::invalid_argument("accumulate: label out of range");
    }
    ++conf.at(g, p);
  }
}

IouReport mean_iou(const ConfusionMatrix& conf, AbsentClassPolicy policy) {
  if (conf.total() == 0) {
    throw std::invalid_argument("mean_iou: empty confusion matrix");
  }
  const int c = conf.num_classes;
  IouReport report;
  report.per_class.assign(c, std::nan(""));
  report.present.assign(c, false);
  double sum = 0.0;
  int counted = 0;
  for (int k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += conf.at(k, j);
      col += conf.at(j, k);
    }
    const std::uint64_t diag = conf.at(k, k);
    const std::uint64_t denom = row + col - diag;
    double iou;
    if (denom == 0) {
      switch (policy) {
        case AbsentClassPolicy::Exclude:
          continue;
        case AbsentClassPolicy::AsZero:
          iou = 0.0;
          break;
        case AbsentClassPolicy::AsOne:
          iou = 1.0;
          break;
      }
    } else {
      iou = static_cast<double>(diag) / static_cast<double>(denom);
      report.present[k] = true;
    }
    report.per_class[k] = iou;
    sum += iou;
    ++counted;
  }
  report.miou = sum / counted;
  return report;
}

double quick_miou(SegModel& model, const std::vector<Sample>& samples, int ignore_label) {
  ConfusionMatrix conf(model.num_classes());
  for (const Sample& s : samples) {
    Tensor logits = model.forward(s.image, BnMode::Frozen);
    Tensor up = bilinear_resize(logits, s.image.h(), s.image.w());
    accumulate(conf, argmax_labels(up), s.label, ignore_label);
  }
  return mean_iou(conf).miou;
}

IouReport evaluate_samples(SegModel& model, const std::vector<Sample>& samples,
                           const InferenceConfig& config, int ignore_label) {
  ConfusionMatrix conf(model.num_classes());
  for (const Sample& s : samples) {
    Tensor probs = predict_probs(model, s.image, config);
    accumulate(conf, argmax_labels(probs), s.label, ignore_label);
  }
  return mean_iou(conf);
}

}  // namespace dlv3
