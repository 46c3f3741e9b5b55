#include "attnct/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "attnct/errors.hpp"

namespace attnct::data {
namespace {

class HeaderParser {
 public:
  explicit HeaderParser(const std::vector<std::uint8_t>& b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long number() {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) throw IoError("PGM header: expected a number");
    unsigned long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 1u << 24) throw IoError("PGM header: value out of range");
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

// Area-average weights: output cell o covers [o*in/out, (o+1)*in/out).
Tensor resample_axis(const Tensor& img, std::size_t out, bool along_width) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  const std::size_t in = along_width ? w : h;
  if (in == out) return img;
  const std::size_t oh = along_width ? h : out, ow = along_width ? out : w;
  Tensor res({1, oh, ow});
  auto get = [&](std::size_t line, std::size_t i) { return along_width ? img[line * w + i] : img[i * w + line]; };
  auto put = [&](std::size_t line, std::size_t o, double v) {
    if (along_width) res[line * ow + o] = v;
    else res[o * ow + line] = v;
  };
  const std::size_t lines = along_width ? h : w;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    if (out < in) {
      const double lo = static_cast<double>(o) * ratio, hi = static_cast<double>(o + 1) * ratio;
      const auto first = static_cast<std::size_t>(std::floor(lo));
      const auto last = std::min(in, static_cast<std::size_t>(std::ceil(hi)));
      for (std::size_t line = 0; line < lines; ++line) {
        double acc = 0;
        for (std::size_t i = first; i < last; ++i) {
          const double cover = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
          acc += cover * get(line, i);
        }
        put(line, o, acc / ratio);
      }
    } else {
      double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      if (src < 0) src = 0;
      auto i0 = static_cast<std::size_t>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      const double f = src - static_cast<double>(i0);
      for (std::size_t line = 0; line < lines; ++line) put(line, o, (1 - f) * get(line, i0) + f * get(line, i1));
    }
  }
  return res;
}

}  // namespace

Tensor decode_pgm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw IoError("not a binary PGM (missing P5 magic)");
  HeaderParser p(bytes);
  p.advance();
  p.advance();
  const unsigned long width = p.number();
  const unsigned long height = p.number();
  const unsigned long maxval = p.number();
  if (width == 0 || height == 0) throw IoError("PGM has zero extent");
  if (maxval == 0 || maxval > 65535) throw IoError("PGM maxval out of range");
  if (p.pos() >= bytes.size() || !std::isspace(bytes[p.pos()])) throw IoError("PGM header not terminated");
  p.advance();
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t n = width * height;
  if (bytes.size() - p.pos() < n * bps) throw IoError("PGM pixel data truncated");
  Tensor img({1, height, width});
  const std::uint8_t* d = bytes.data() + p.pos();
  const double scale = static_cast<double>(maxval);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bps == 1 ? d[i] : (static_cast<unsigned>(d[2 * i]) << 8) | d[2 * i + 1];
    if (v > maxval) throw IoError("PGM sample exceeds maxval");
    img[i] = static_cast<double>(v) / scale;
  }
  return img;
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path.string() + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_pgm(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_pgm(const Tensor& image) {
  std::size_t h = 0, w = 0;
  if (image.rank() == 3 && image.dim(0) == 1) {
    h = image.dim(1);
    w = image.dim(2);
  } else if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else {
    throw DimensionError("encode_pgm: expected 1 x H x W or H x W, got " + shape_str(image.shape()));
  }
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + h * w);
  for (double v : image.data()) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_pgm(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path.string() + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(path.string() + ": write failed");
}

Tensor resize_image(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw DimensionError("resize_image: expected 1 x H x W, got " + shape_str(image.shape()));
  }
  if (height == 0 || width == 0) throw DimensionError("resize_image: target extent must be positive");
  return resample_axis(resample_axis(image, width, true), height, false);
}

}  // namespace attnct::data
