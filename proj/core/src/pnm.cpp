#include "dlv3/pnm.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dlv3/tensor.hpp"

namespace dlv3 {

namespace {

class TokenReader {
 public:
  TokenReader(const std::vector<std::uint8_t>& bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(origin_ + ": " + msg + " at byte offset " +
                             std::to_string(pos_));
  }

  // Next whitespace-delimited token, skipping '#' comments that run to the
  // end of their line.
  std::string next_token() {
    skip_separators();
    if (pos_ >= bytes_.size()) fail("unexpected end of header");
    std::string tok;
    while (pos_ < bytes_.size() && !is_space(bytes_[pos_])) {
      tok.push_back(static_cast<char>(bytes_[pos_++]));
    }
    return tok;
  }

  int next_int(const std::string& what) {
    const std::size_t at = pos_;
    std::string tok = next_token();
    try {
      std::size_t used = 0;
      int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      pos_ = at;
      fail("malformed " + what + " '" + tok + "'");
    }
  }

  // The header ends with exactly one whitespace byte before the payload.
  void consume_single_separator() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
      fail("missing separator before pixel data");
    }
    ++pos_;
  }

  std::vector<std::uint8_t> payload(std::size_t count, const std::string& what) {
    if (bytes_.size() - pos_ < count) {
      fail("truncated payload, need " + std::to_string(count) + " bytes of " + what +
           " but have " + std::to_string(bytes_.size() - pos_));
    }
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + count));
    pos_ += count;
    return out;
  }

 private:
  static bool is_space(std::uint8_t b) {
    return b == ' ' || b == '\t' || b == '\n' || b == '\r' || b == '\v' || b == '\f';
  }

  void skip_separators() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is),
                                   std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed for " + path);
}

struct Header {
  int w, h;
};

Header parse_header(TokenReader& r, const std::string& magic) {
  std::string m = r.next_token();
  if (m != magic) r.fail("bad magic '" + m + "', expected " + magic);
  Header hd;
  hd.w = r.next_int("width");
  hd.h = r.next_int("height");
  if (hd.w < 1 || hd.h < 1) r.fail("non-positive image dimensions");
  const int maxval = r.next_int("maxval");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval));
  r.consume_single_separator();
  return hd;
}

void append_header(std::vector<std::uint8_t>& out, const std::string& magic, int w, int h) {
  const std::string header = magic + "\n" + std::to_string(w) + " " + std::to_string(h) +
                             "\n255\n";
  out.insert(out.end(), header.begin(), header.end());
}

}  // namespace

GrayImage parse_pgm(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  TokenReader r(bytes, origin);
  const Header hd = parse_header(r, "P5");
  GrayImage img;
  img.w = hd.w;
  img.h = hd.h;
  img.pixels = r.payload(static_cast<std::size_t>(hd.w) * hd.h, "P5 pixels");
  return img;
}

RgbImage parse_ppm(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  TokenReader r(bytes, origin);
  const Header hd = parse_header(r, "P6");
  RgbImage img;
  img.w = hd.w;
  img.h = hd.h;
  img.pixels = r.payload(static_cast<std::size_t>(hd.w) * hd.h * 3, "P6 pixels");
  return img;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  std::vector<std::uint8_t> out;
  append_header(out, "P5", img.w, img.h);
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  std::vector<std::uint8_t> out;
  append_header(out, "P6", img.w, img.h);
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

GrayImage read_pgm(const std::string& path) { return parse_pgm(read_file_bytes(path), path); }
void write_pgm(const std::string& path, const GrayImage& img) {
  write_file_bytes(path, encode_pgm(img));
}
RgbImage read_ppm(const std::string& path) { return parse_ppm(read_file_bytes(path), path); }
void write_ppm(const std::string& path, const RgbImage& img) {
  write_file_bytes(path, encode_ppm(img));
}

Tensor rgb_to_tensor(const RgbImage& img) {
  Tensor t(1, 3, img.h, img.w);
  for (int c = 0; c < 3; ++c) {
    double* dst = t.plane(0, c);
    for (int i = 0; i < img.h * img.w; ++i) {
      dst[i] = img.pixels[static_cast<std::size_t>(i) * 3 + c] / 255.0;
    }
  }
  return t;
}

RgbImage tensor_to_rgb(const Tensor& t) {
  if (t.n() != 1 || t.c() != 3) {
    throw std::invalid_argument("tensor_to_rgb expects a (1,3,h,w) tensor");
  }
  RgbImage img;
  img.h = t.h();
  img.w = t.w();
  img.pixels.resize(static_cast<std::size_t>(t.h()) * t.w() * 3);
  for (int c = 0; c < 3; ++c) {
    const double* src = t.plane(0, c);
    for (int i = 0; i < t.h() * t.w(); ++i) {
      double v = std::lround(src[i] * 255.0);
      if (v < 0) v = 0;
      if (v > 255) v = 255;
      img.pixels[static_cast<std::size_t>(i) * 3 + c] = static_cast<std::uint8_t>(v);
    }
  }
  return img;
}

Tensor gray_to_tensor(const GrayImage& img) {
  Tensor t(1, 1, img.h, img.w);
  double* dst = t.plane(0, 0);
  for (int i = 0; i < img.h * img.w; ++i) dst[i] = img.pixels[i];
  return t;
}

GrayImage tensor_to_gray_labels(const Tensor& t) {
  if (t.n() != 1 || t.c() != 1) {
    throw std::invalid_argument("tensor_to_gray_labels expects a (1,1,h,w) tensor");
  }
  GrayImage img;
  img.h = t.h();
  img.w = t.w();
  img.pixels.resize(static_cast<std::size_t>(t.h()) * t.w());
  const double* src = t.plane(0, 0);
  for (int i = 0; i < t.h() * t.w(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(src[i]));
  }
  return img;
}

}  // namespace dlv3
