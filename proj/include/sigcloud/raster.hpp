#pragma once

// Raster signatures and Netpbm (PBM/PGM) ingestion.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sigcloud/error.hpp"

namespace sigcloud {

struct Pixel {
  int col = 0;
  int row = 0;

  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

inline constexpr int kMaxImageDimension = 10000;
inline constexpr int kDefaultBinarizeThreshold = 128;

/// Binary image of a signature. Black pixels are ink.
class RasterSignature {
 public:
  RasterSignature() = default;

  RasterSignature(int width, int height) : width_(width), height_(height) {
    check_dimensions(width, height);
    bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  }

  RasterSignature(int width, int height, std::span<const Pixel> black)
      : RasterSignature(width, height) {
    for (const Pixel& p : black) set(p.col, p.row, true);
  }

  RasterSignature(int width, int height, const std::set<Pixel>& black)
      : RasterSignature(width, height) {
    for (const Pixel& p : black) set(p.col, p.row, true);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  bool contains(int col, int row) const noexcept {
    return col >= 0 && row >= 0 && col < width_ && row < height_;
  }

  bool is_black(int col, int row) const {
    return contains(col, row) && bits_[offset(col, row)] != 0;
  }

  void set(int col, int row, bool black) {
    if (!contains(col, row)) {
      fail(ErrorCode::Validation, "pixel (" + std::to_string(col) + ", " + std::to_string(row) +
                                      ") outside " + std::to_string(width_) + "x" +
                                      std::to_string(height_) + " image");
    }
    bits_[offset(col, row)] = black ? 1 : 0;
  }

  /// Black pixels in (col, row) lexicographic order.
  std::vector<Pixel> black_pixels() const {
    std::vector<Pixel> out;
    for (int c = 0; c < width_; ++c)
      for (int r = 0; r < height_; ++r)
        if (bits_[offset(c, r)]) out.push_back({c, r});
    return out;
  }

  std::size_t black_count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  friend bool operator==(const RasterSignature&, const RasterSignature&) = default;

 private:
  static void check_dimensions(int width, int height) {
    if (width <= 0 || height <= 0 || width > kMaxImageDimension || height > kMaxImageDimension) {
      fail(ErrorCode::Validation, "image dimensions " + std::to_string(width) + "x" +
                                      std::to_string(height) + " out of range");
    }
  }

  std::size_t offset(int col, int row) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;  // row-major, 1 = black
};

/// 8-bit grayscale grid, row-major. 0 is black, 255 is white.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int col, int row) const {
    return pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(col)];
  }
};

namespace detail {

// Cursor over a Netpbm byte stream. Tracks the byte offset for diagnostics.
class PnmReader {
 public:
  explicit PnmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ >= bytes_.size(); }

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCode::Format, what + " at byte " + std::to_string(pos_));
  }

  std::string magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') {
      error("missing Netpbm magic number");
    }
    pos_ = 2;
    return std::string{static_cast<char>(bytes_[0]), static_cast<char>(bytes_[1])};
  }

  void skip_space_and_comments() {
    while (!at_end()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (!at_end() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (is_space(c)) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  // Header integer; leading whitespace and comments allowed.
  long header_int(const char* field) {
    skip_space_and_comments();
    if (at_end()) error(std::string("truncated header, expected ") + field);
    if (bytes_[pos_] < '0' || bytes_[pos_] > '9') {
      error(std::string("malformed header, expected ") + field);
    }
    long value = 0;
    while (!at_end() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000'000L) error(std::string("header value too large for ") + field);
      ++pos_;
    }
    return value;
  }

  // Binary rasters start after exactly one whitespace byte.
  void single_space() {
    if (at_end() || !is_space(bytes_[pos_])) error("expected whitespace before raster data");
    ++pos_;
  }

  std::uint8_t byte() {
    if (at_end()) error("truncated payload");
    return bytes_[pos_++];
  }

  char ascii_bit() {
    skip_space_and_comments();
    if (at_end()) error("truncated payload");
    const auto c = bytes_[pos_];
    if (c != '0' && c != '1') error("invalid P1 pixel value");
    ++pos_;
    return static_cast<char>(c);
  }

 private:
  static bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::pair<int, int> read_dimensions(PnmReader& in) {
  const long w = in.header_int("width");
  const long h = in.header_int("height");
  if (w <= 0 || h <= 0) in.error("image dimensions must be positive");
  if (w > kMaxImageDimension || h > kMaxImageDimension) {
    in.error("image dimensions exceed " + std::to_string(kMaxImageDimension));
  }
  return {static_cast<int>(w), static_cast<int>(h)};
}

inline std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace detail

/// Parses a PBM image (P1 ASCII or P4 binary). Pixel value 1 is black.
inline RasterSignature load_pbm(std::span<const std::uint8_t> bytes) {
  detail::PnmReader in(bytes);
  const std::string magic = in.magic();
  if (magic != "P1" && magic != "P4") in.error("not a PBM image (magic " + magic + ")");
  const auto [w, h] = detail::read_dimensions(in);
  RasterSignature sig(w, h);

  if (magic == "P1") {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (in.ascii_bit() == '1') sig.set(c, r, true);
    return sig;
  }

  in.single_space();
  for (int r = 0; r < h; ++r) {
    for (int byte_col = 0; byte_col * 8 < w; ++byte_col) {
      const std::uint8_t packed = in.byte();
      for (int bit = 0; bit < 8; ++bit) {
        const int c = byte_col * 8 + bit;
        if (c < w && (packed & (0x80u >> bit))) sig.set(c, r, true);
      }
    }
  }
  return sig;
}

inline RasterSignature load_pbm(std::string_view bytes) { return load_pbm(detail::as_bytes(bytes)); }

/// Encodes as P1 (one raster row per line) or P4.
inline std::string save_pbm(const RasterSignature& sig, bool ascii = true) {
  std::string out = std::string(ascii ? "P1" : "P4") + "\n" + std::to_string(sig.width()) + " " +
                    std::to_string(sig.height()) + "\n";
  if (ascii) {
    for (int r = 0; r < sig.height(); ++r) {
      for (int c = 0; c < sig.width(); ++c) {
        if (c > 0) out += ' ';
        out += sig.is_black(c, r) ? '1' : '0';
      }
      out += '\n';
    }
    return out;
  }
  for (int r = 0; r < sig.height(); ++r) {
    for (int byte_col = 0; byte_col * 8 < sig.width(); ++byte_col) {
      std::uint8_t packed = 0;
      for (int bit = 0; bit < 8; ++bit) {
        if (sig.is_black(byte_col * 8 + bit, r)) packed |= static_cast<std::uint8_t>(0x80u >> bit);
      }
      out += static_cast<char>(packed);
    }
  }
  return out;
}

/// Parses a PGM image (P2 ASCII or P5 binary), rescaled to 0-255.
inline GrayImage load_pgm(std::span<const std::uint8_t> bytes) {
  detail::PnmReader in(bytes);
  const std::string magic = in.magic();
  if (magic != "P2" && magic != "P5") in.error("not a PGM image (magic " + magic + ")");
  const auto [w, h] = detail::read_dimensions(in);
  const long maxval = in.header_int("maxval");
  if (maxval <= 0 || maxval > 65535) in.error("maxval must be in 1..65535");

  GrayImage img{w, h, {}};
  img.pixels.reserve(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  const auto rescale = [maxval](long v) {
    return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
  };

  if (magic == "P2") {
    for (long i = 0; i < static_cast<long>(w) * h; ++i) {
      const long v = in.header_int("pixel value");
      if (v > maxval) in.error("pixel value exceeds maxval");
      img.pixels.push_back(rescale(v));
    }
    return img;
  }

  in.single_space();
  for (long i = 0; i < static_cast<long>(w) * h; ++i) {
    long v = in.byte();
    if (maxval > 255) v = (v << 8) | in.byte();
    if (v > maxval) in.error("pixel value exceeds maxval");
    img.pixels.push_back(rescale(v));
  }
  return img;
}

inline GrayImage load_pgm(std::string_view bytes) { return load_pgm(detail::as_bytes(bytes)); }

/// Dark ink on light paper: a pixel is black iff intensity < threshold.
inline RasterSignature binarize(const GrayImage& gray, int threshold = kDefaultBinarizeThreshold) {
  if (threshold < 0 || threshold > 255) {
    fail(ErrorCode::Domain, "binarize threshold must be in 0..255");
  }
  if (gray.width <= 0 || gray.height <= 0 ||
      gray.pixels.size() != static_cast<std::size_t>(gray.width) * static_cast<std::size_t>(gray.height)) {
    fail(ErrorCode::Validation, "grayscale grid is not rectangular");
  }
  RasterSignature sig(gray.width, gray.height);
  for (int r = 0; r < gray.height; ++r)
    for (int c = 0; c < gray.width; ++c)
      if (gray.at(c, r) < threshold) sig.set(c, r, true);
  return sig;
}

/// Loads any supported signature image: PBM directly, PGM via binarize.
inline RasterSignature load_signature(std::span<const std::uint8_t> bytes,
                                      int threshold = kDefaultBinarizeThreshold) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '2' || bytes[1] == '5')) {
    return binarize(load_pgm(bytes), threshold);
  }
  return load_pbm(bytes);
}

inline RasterSignature load_signature(std::string_view bytes,
                                      int threshold = kDefaultBinarizeThreshold) {
  return load_signature(detail::as_bytes(bytes), threshold);
}

}  // namespace sigcloud
