#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dlv3/pnm.hpp"
#include "dlv3/tensor.hpp"

namespace dlv3 {

class Rng;

// Class ids of the synthetic shape dataset. 0 is background; the thin ring
// is the rare, finely-structured class.
enum ShapeClass : int {
  kBackground = 0,
  kDisk = 1,
  kSquare = 2,
  kTriangle = 3,
  kRing = 4,
  kStripe = 5,
};
constexpr int kNumShapeClasses = 6;
constexpr int kIgnoreLabel = 255;

struct Sample {
  Tensor image;       // (1, 3, h, w) in [0, 1]
  GrayImage label;    // class ids, possibly 255 after augmentation
  std::uint32_t present_mask = 0;  // bit c set iff class c appears in the label
};

struct ManifestEntry {
  std::string image_path;  // relative to the manifest's directory
  std::string label_path;
  std::uint32_t present_mask = 0;
};

struct Manifest {
  std::string dir;  // directory the relative paths resolve against
  std::string split;
  std::vector<ManifestEntry> entries;
};

// One synthetic sample: 1-4 shapes (filled disk, square, triangle, thin
// ring, stripe) at area scales spanning roughly 4x-64x, each class with its
// own color distribution over a noisy background. The label map is the exact
// rasterization of the drawn shapes (later shapes overdraw earlier ones).
Sample generate_sample(Rng& rng, int image_size,
                       const std::vector<int>& class_menu = {kDisk, kSquare, kTriangle,
                                                             kRing, kStripe});

// Writes `num_images` samples into out_dir (images/NNNNN.ppm, labels/NNNNN.pgm)
// and returns the manifest of everything generated, in generation order.
// Byte-identical output for a fixed seed.
Manifest generate_dataset(std::uint64_t seed, int num_images, int image_size,
                          const std::string& out_dir,
                          const std::vector<int>& class_menu = {kDisk, kSquare, kTriangle,
                                                                kRing, kStripe});

// Manifest file: one `image_path<TAB>label_path` line per sample, paths
// relative to the manifest's own directory.
void write_manifest(const std::string& path, const Manifest& manifest);
// Loads a manifest and fills each entry's present-class set from its label file.
Manifest load_manifest(const std::string& path);

// Loads every sample of a manifest into memory.
std::vector<Sample> load_samples(const Manifest& manifest);

// Per-channel mean over all image pixels of the loaded samples (the padding
// value used by training-time cropping).
std::array<double, 3> channel_means(const std::vector<Sample>& samples);

std::uint32_t present_mask_of(const GrayImage& label);

}  // namespace dlv3
