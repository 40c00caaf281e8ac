#include "wmark/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace wmark {

uint8_t to_u8(double v) {
  double r = v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5);
  return static_cast<uint8_t>(std::clamp(r, 0.0, 255.0));
}

double sample_bilinear(const ImageU8& src, double y, double x, int c) {
  y = std::clamp(y, 0.0, static_cast<double>(src.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(src.width - 1));
  int y0 = static_cast<int>(std::floor(y));
  int x0 = static_cast<int>(std::floor(x));
  int y1 = std::min(y0 + 1, src.height - 1);
  int x1 = std::min(x0 + 1, src.width - 1);
  double fy = y - y0, fx = x - x0;
  double top = src.at(y0, x0, c) * (1 - fx) + src.at(y0, x1, c) * fx;
  double bot = src.at(y1, x0, c) * (1 - fx) + src.at(y1, x1, c) * fx;
  return top * (1 - fy) + bot * fy;
}

ImageU8 resize_bilinear(const ImageU8& src, int height, int width) {
  if (height <= 0 || width <= 0) throw ValidationError("resize target must be positive");
  if (src.height == height && src.width == width) return src;
  ImageU8 out(height, width);
  double sy = static_cast<double>(src.height) / height;
  double sx = static_cast<double>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < width; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_u8(sample_bilinear(src, fy, fx, c));
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

PlaneF32 separable_filter(const PlaneF32& p, const std::vector<double>& taps) {
  int r = static_cast<int>(taps.size() / 2);
  PlaneF32 tmp(p.height, p.width), out(p.height, p.width);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += taps[i + r] * p.at(y, std::clamp(x + i, 0, p.width - 1));
      tmp.at(y, x) = static_cast<float>(s);
    }
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += taps[i + r] * tmp.at(std::clamp(y + i, 0, p.height - 1), x);
      out.at(y, x) = static_cast<float>(s);
    }
  return out;
}

PlaneF32 channel_plane(const ImageU8& img, int c) {
  PlaneF32 p(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p.at(y, x) = img.at(y, x, c);
  return p;
}

ImageU8 decode_png(const std::vector<uint8_t>& bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw std::runtime_error(std::string("png decode: ") + img.message);
  img.format = PNG_FORMAT_RGBA;
  std::vector<uint8_t> rgba(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgba.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("png decode: " + msg);
  }
  ImageU8 out(static_cast<int>(img.height), static_cast<int>(img.width));
  for (size_t i = 0, n = out.data.size() / 3; i < n; ++i)
    for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = rgba[i * 4 + c];
  return out;
}

std::vector<uint8_t> encode_png(const ImageU8& in) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(in.width);
  img.height = static_cast<png_uint_32>(in.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, in.data.data(), 0, nullptr))
    throw std::runtime_error(std::string("png encode: ") + img.message);
  std::vector<uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, in.data.data(), 0, nullptr))
    throw std::runtime_error(std::string("png encode: ") + img.message);
  out.resize(size);
  return out;
}

ImageU8 read_png(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const ImageU8& img) {
  auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace wmark
