#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmark {

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// 8-bit RGB raster, row-major, interleaved channels.
struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<uint8_t> data;

  ImageU8() = default;
  ImageU8(int h, int w, uint8_t fill = 0) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {}

  uint8_t& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  uint8_t at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  size_t size() const { return data.size(); }
  bool same_shape(const ImageU8& o) const { return height == o.height && width == o.width; }
  bool operator==(const ImageU8& o) const = default;
};

struct PlaneF32 {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  PlaneF32() = default;
  PlaneF32(int h, int w, float fill = 0.f) : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

  float& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

// Rounds half away from zero, then clamps to [0, 255].
uint8_t to_u8(double v);

// Bilinear resampling with half-pixel centers and edge clamping.
ImageU8 resize_bilinear(const ImageU8& src, int height, int width);
double sample_bilinear(const ImageU8& src, double y, double x, int c);

// Normalized 1-D Gaussian taps over [-radius, radius].
std::vector<double> gaussian_kernel(double sigma, int radius);
// Separable filter with edge replication.
PlaneF32 separable_filter(const PlaneF32& p, const std::vector<double>& taps);

PlaneF32 channel_plane(const ImageU8& img, int c);

ImageU8 decode_png(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_png(const ImageU8& img);
ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& img);

}  // namespace wmark
