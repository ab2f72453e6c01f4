#include "dlv3/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "dlv3/rng.hpp"

namespace fs = std::filesystem;

namespace dlv3 {

namespace {

// Per-class mean colors. Classes are separated from the background by far
// more than 5 noise sigmas in at least one channel.
constexpr std::array<std::array<double, 3>, kNumShapeClasses> kClassColor = {{
    {0.18, 0.20, 0.24},  // background
    {0.85, 0.25, 0.20},  // disk
    {0.20, 0.78, 0.30},  // square
    {0.25, 0.35, 0.90},  // triangle
    {0.90, 0.85, 0.25},  // ring
    {0.80, 0.25, 0.80},  // stripe
}};
constexpr double kNoiseSigma = 0.035;

// The thin ring is kept rare so its pixel share stays small while every
// class still shows up in well over 5% of images.
constexpr double kRingProbability = 0.10;

struct ShapeGeom {
  int kind = 0;
  double cx = 0, cy = 0;
  double a = 0, b = 0, c = 0, d = 0;      // kind-specific
  std::array<double, 6> tri{};            // triangle vertices
};

// Fills geometry from the stream. Draw order per shape: kind selector, center
// x, center y, then kind-specific sizes/angles.
ShapeGeom draw_shape(Rng& rng, int size, const std::vector<int>& menu) {
  ShapeGeom g;
  const bool has_ring = std::find(menu.begin(), menu.end(), kRing) != menu.end();
  const double sel = rng.uniform();
  if (has_ring && sel < kRingProbability) {
    g.kind = kRing;
  } else {
    std::vector<int> others;
    for (int m : menu) {
      if (m != kRing) others.push_back(m);
    }
    if (others.empty()) {
      g.kind = kRing;
    } else {
      g.kind = others[rng.uniform_int(static_cast<int>(others.size()))];
    }
  }
  g.cx = rng.uniform() * (size - 1);
  g.cy = rng.uniform() * (size - 1);

  // Area scale factor spans 64x between the smallest and largest instances.
  const double scale = 0.05 * size * std::pow(8.0, rng.uniform());
  switch (g.kind) {
    case kDisk:
      g.a = scale;  // radius
      break;
    case kSquare:
      g.a = scale * 0.9;  // half side
      break;
    case kTriangle: {
      const double base = rng.uniform() * 6.283185307179586;
      for (int v = 0; v < 3; ++v) {
        const double ang = base + v * 2.0943951023931953 + (rng.uniform() - 0.5) * 0.7;
        const double rad = scale * (0.75 + 0.5 * rng.uniform());
        g.tri[2 * v] = g.cx + rad * std::cos(ang);
        g.tri[2 * v + 1] = g.cy + rad * std::sin(ang);
      }
      break;
    }
    case kRing:
      g.a = 7.0 + rng.uniform() * 11.0;          // outer radius
      g.b = g.a - (2.8 + rng.uniform() * 1.4);   // inner radius
      break;
    case kStripe:
      g.a = rng.uniform() * 3.141592653589793;   // normal angle
      g.b = 1.5 + 0.5 * scale;                   // half width
      break;
    default:
      throw std::invalid_argument("unknown shape class in menu");
  }
  return g;
}

bool inside(const ShapeGeom& g, double x, double y) {
  const double dx = x - g.cx, dy = y - g.cy;
  switch (g.kind) {
    case kDisk:
      return dx * dx + dy * dy <= g.a * g.a;
    case kSquare:
      return std::fabs(dx) <= g.a && std::fabs(dy) <= g.a;
    case kTriangle: {
      auto side = [&](int i, int j) {
        const double ex = g.tri[2 * j] - g.tri[2 * i];
        const double ey = g.tri[2 * j + 1] - g.tri[2 * i + 1];
        return ex * (y - g.tri[2 * i + 1]) - ey * (x - g.tri[2 * i]);
      };
      const double s0 = side(0, 1), s1 = side(1, 2), s2 = side(2, 0);
      return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
    }
    case kRing: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= g.a * g.a && d2 > g.b * g.b;
    }
    case kStripe: {
      const double nx = std::cos(g.a), ny = std::sin(g.a);
      return std::fabs(dx * nx + dy * ny) <= g.b;
    }
    default:
      return false;
  }
}

}  // namespace

std::uint32_t present_mask_of(const GrayImage& label) {
  std::uint32_t mask = 0;
  for (std::uint8_t v : label.pixels) {
    if (v != kIgnoreLabel) mask |= 1u << v;
  }
  return mask;
}

Sample generate_sample(Rng& rng, int image_size, const std::vector<int>& class_menu) {
  if (image_size < 1) throw std::invalid_argument("image_size must be >= 1");
  const int s = image_size;
  GrayImage label;
  label.h = s;
  label.w = s;
  label.pixels.assign(static_cast<std::size_t>(s) * s, kBackground);

  const int num_shapes = 1 + rng.uniform_int(4);
  for (int i = 0; i < num_shapes; ++i) {
    const ShapeGeom g = draw_shape(rng, s, class_menu);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        if (inside(g, x, y)) label.at(y, x) = static_cast<std::uint8_t>(g.kind);
      }
    }
  }

  Tensor image(1, 3, s, s);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const auto& mean = kClassColor[label.at(y, x)];
      for (int c = 0; c < 3; ++c) {
        double v = mean[c] + kNoiseSigma * rng.normal();
        image.at(0, c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  Sample sample;
  sample.image = std::move(image);
  sample.label = std::move(label);
  sample.present_mask = present_mask_of(sample.label);
  return sample;
}

Manifest generate_dataset(std::uint64_t seed, int num_images, int image_size,
                          const std::string& out_dir, const std::vector<int>& class_menu) {
  if (num_images < 0) throw std::invalid_argument("num_images must be >= 0");
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "labels");

  Rng rng(seed);
  Manifest manifest;
  manifest.dir = out_dir;
  for (int i = 0; i < num_images; ++i) {
    Sample sample = generate_sample(rng, image_size, class_menu);
    char name[32];
    std::snprintf(name, sizeof(name), "%05d", i);
    ManifestEntry entry;
    entry.image_path = std::string("images/") + name + ".ppm";
    entry.label_path = std::string("labels/") + name + ".pgm";
    entry.present_mask = sample.present_mask;
    // Quantize to the 8-bit on-disk form; readers see exactly these bytes.
    write_ppm((fs::path(out_dir) / entry.image_path).string(), tensor_to_rgb(sample.image));
    write_pgm((fs::path(out_dir) / entry.label_path).string(), sample.label);
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const ManifestEntry& e : manifest.entries) {
    os << e.image_path << '\t' << e.label_path << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path);
  Manifest manifest;
  manifest.dir = fs::path(path).parent_path().string();
  if (manifest.dir.empty()) manifest.dir = ".";
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected image<TAB>label");
    }
    ManifestEntry e;
    e.image_path = line.substr(0, tab);
    e.label_path = line.substr(tab + 1);
    const GrayImage label = read_pgm((fs::path(manifest.dir) / e.label_path).string());
    e.present_mask = present_mask_of(label);
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

std::vector<Sample> load_samples(const Manifest& manifest) {
  std::vector<Sample> samples;
  samples.reserve(manifest.entries.size());
  for (const ManifestEntry& e : manifest.entries) {
    Sample s;
    s.image = rgb_to_tensor(read_ppm((fs::path(manifest.dir) / e.image_path).string()));
    s.label = read_pgm((fs::path(manifest.dir) / e.label_path).string());
    if (s.image.h() != s.label.h || s.image.w() != s.label.w) {
      throw std::runtime_error("image/label size mismatch for " + e.image_path);
    }
    s.present_mask = present_mask_of(s.label);
    samples.push_back(std::move(s));
  }
  return samples;
}

std::array<double, 3> channel_means(const std::vector<Sample>& samples) {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  double count = 0.0;
  for (const Sample& s : samples) {
    for (int c = 0; c < 3; ++c) {
      const double* src = s.image.plane(0, c);
      for (int i = 0; i < s.image.h() * s.image.w(); ++i) mean[c] += src[i];
    }
    count += static_cast<double>(s.image.h()) * s.image.w();
  }
  if (count > 0) {
    for (double& m : mean) m /= count;
  }
  return mean;
}

}  // namespace dlv3
