#include <cctype>
#include <cmath>
#include <string>

#include "pnr/data.hpp"
#include "pnr/io.hpp"

namespace pnr::data {

std::uint8_t to_u8(float v) {
  const double q = std::round((static_cast<double>(v) + 1.0) * 127.5);
  if (!(q > 0.0)) return 0;  // also maps NaN to 0
  if (q >= 255.0) return 255;
  return static_cast<std::uint8_t>(q);
}

float from_u8(std::uint8_t u) { return static_cast<float>(u / 127.5 - 1.0); }

std::vector<std::uint8_t> encode_ppm(const ImageTensor& img) {
  const Shape& s = img.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3))
    throw UsageError("PPM export needs a single 1- or 3-channel image, got " + s.str());
  const std::string header =
      std::string(s.c == 1 ? "P5" : "P6") + "\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + s.size());
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) out.push_back(to_u8(img.at(0, c, y, x)));
  return out;
}

namespace {

// Header tokens are separated by whitespace; '#' starts a comment to end of line.
class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  int next_int() {
    skip_space_and_comments();
    std::size_t start = pos_;
    long long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (1 << 24)) throw IoError("PPM header value too large");
      ++pos_;
    }
    if (pos_ == start) throw IoError("PPM header: expected a number");
    return static_cast<int>(v);
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw IoError("PPM header: missing raster separator");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
};

}  // namespace

ImageTensor decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw IoError("not a binary PGM/PPM file (bad magic)");
  const int channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader r(bytes);
  const int w = r.next_int();
  const int h = r.next_int();
  const int maxval = r.next_int();
  if (w <= 0 || h <= 0) throw IoError("PPM: non-positive dimensions");
  if (maxval != 255) throw IoError("PPM: only maxval 255 is supported, got " + std::to_string(maxval));
  const std::size_t offset = r.raster_offset();
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() < offset + need) throw IoError("PPM: truncated raster");
  ImageTensor img(Shape{1, channels, h, w});
  const std::uint8_t* p = bytes.data() + offset;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) img.at(0, c, y, x) = from_u8(*p++);
  return img;
}

ImageTensor read_ppm(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_ppm(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_ppm(const std::filesystem::path& path, const ImageTensor& img) { io::atomic_write(path, encode_ppm(img)); }

}  // namespace pnr::data
