#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dlv3 {

class Tensor;

// 8-bit grayscale raster, the storage form of label maps (class ids, with
// 255 reserved as the ignore label).
struct GrayImage {
  int h = 0, w = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * w + x]; }
};

// 8-bit interleaved RGB raster.
struct RgbImage {
  int h = 0, w = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel
};

// Binary PNM (P5 grayscale / P6 RGB), maxval 255. Comment lines beginning
// with '#' are accepted between header tokens. Parse errors report the byte
// offset of the offending input.
GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& img);
RgbImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const RgbImage& img);

GrayImage parse_pgm(const std::vector<std::uint8_t>& bytes, const std::string& origin);
RgbImage parse_ppm(const std::vector<std::uint8_t>& bytes, const std::string& origin);
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
std::vector<std::uint8_t> encode_ppm(const RgbImage& img);

// Conversions: images map byte values to [0, 1] by /255 on read and back by
// round(v * 255) with clamping on write.
Tensor rgb_to_tensor(const RgbImage& img);          // (1, 3, h, w)
RgbImage tensor_to_rgb(const Tensor& t);
Tensor gray_to_tensor(const GrayImage& img);        // (1, 1, h, w), raw values
GrayImage tensor_to_gray_labels(const Tensor& t);   // raw values, no scaling

}  // namespace dlv3
