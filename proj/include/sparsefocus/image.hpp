#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <numeric>
#include <vector>

#include "sparsefocus/binary_io.hpp"
#include "sparsefocus/errors.hpp"

namespace sf {

/// Row-major single-channel float raster.
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, float fill = 0.0f)
      : h_(height), w_(width), px_(height * width, fill) {}
  Image(std::size_t height, std::size_t width, std::vector<float> px)
      : h_(height), w_(width), px_(std::move(px)) {
    if (px_.size() != h_ * w_) throw ShapeError("Image", "data", "pixel count mismatch");
  }

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t size() const noexcept { return px_.size(); }
  bool empty() const noexcept { return px_.empty(); }

  float& operator()(std::size_t y, std::size_t x) { return px_[y * w_ + x]; }
  float operator()(std::size_t y, std::size_t x) const { return px_[y * w_ + x]; }

  std::vector<float>& pixels() noexcept { return px_; }
  const std::vector<float>& pixels() const noexcept { return px_; }

  double mean() const {
    if (px_.empty()) return 0.0;
    return std::accumulate(px_.begin(), px_.end(), 0.0) / static_cast<double>(px_.size());
  }

  Image crop(std::size_t y0, std::size_t x0, std::size_t height, std::size_t width) const {
    if (y0 + height > h_) throw ShapeError("Image::crop", "height", "crop exceeds image");
    if (x0 + width > w_) throw ShapeError("Image::crop", "width", "crop exceeds image");
    Image out(height, width);
    for (std::size_t y = 0; y < height; ++y)
      std::copy_n(px_.begin() + static_cast<std::ptrdiff_t>((y0 + y) * w_ + x0), width,
                  out.px_.begin() + static_cast<std::ptrdiff_t>(y * width));
    return out;
  }

  void clip01() {
    for (float& v : px_) v = std::clamp(v, 0.0f, 1.0f);
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t h_ = 0, w_ = 0;
  std::vector<float> px_;
};

inline constexpr std::uint16_t kSfimVersion = 1;

inline std::vector<char> encode_sfim(const Image& img) {
  io::ByteWriter w;
  w.bytes("SFIM");
  w.u16(kSfimVersion);
  w.u32(static_cast<std::uint32_t>(img.height()));
  w.u32(static_cast<std::uint32_t>(img.width()));
  for (float v : img.pixels()) w.f32(v);
  return w.buffer();
}

inline void write_sfim(const std::filesystem::path& path, const Image& img) {
  const auto buf = encode_sfim(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline Image read_sfim(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  if (r.bytes(4) != "SFIM") throw IoError("not an SFIM file: " + path.string());
  const auto version = r.u16();
  if (version != kSfimVersion) throw IoError("unsupported SFIM version " + std::to_string(version));
  const std::size_t h = r.u32(), w = r.u32();
  std::vector<float> px(h * w);
  for (float& v : px) v = r.f32();
  if (!r.at_end()) throw IoError("trailing bytes in SFIM file: " + path.string());
  return Image(h, w, std::move(px));
}

}  // namespace sf
