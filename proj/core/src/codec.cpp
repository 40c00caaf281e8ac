#include "wmark/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace wmark {

const QuantTable kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99,
};

const QuantTable kChromaTable = {
    17, 18, 24, 47, 99, 99, 99, 99,  //
    18, 21, 26, 66, 99, 99, 99, 99,  //
    24, 26, 56, 99, 99, 99, 99, 99,  //
    47, 66, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,
};

double round_half_away(double v) { return v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5); }

YCbCrPlanes rgb_to_ycbcr(const ImageU8& img) {
  YCbCrPlanes p{PlaneF32(img.height, img.width), PlaneF32(img.height, img.width), PlaneF32(img.height, img.width)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
      p.y.at(y, x) = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
      p.cb.at(y, x) = static_cast<float>(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b);
      p.cr.at(y, x) = static_cast<float>(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b);
    }
  return p;
}

ImageU8 ycbcr_to_rgb(const PlaneF32& Y, const PlaneF32& Cb, const PlaneF32& Cr) {
  if (Y.height != Cb.height || Y.height != Cr.height || Y.width != Cb.width || Y.width != Cr.width)
    throw ValidationError("ycbcr_to_rgb: plane sizes differ");
  ImageU8 out(Y.height, Y.width);
  for (int y = 0; y < Y.height; ++y)
    for (int x = 0; x < Y.width; ++x) {
      double l = Y.at(y, x), cb = Cb.at(y, x) - 128.0, cr = Cr.at(y, x) - 128.0;
      out.at(y, x, 0) = to_u8(l + 1.402 * cr);
      out.at(y, x, 1) = to_u8(l - 0.344136 * cb - 0.714136 * cr);
      out.at(y, x, 2) = to_u8(l + 1.772 * cb);
    }
  return out;
}

namespace {

struct DctBasis {
  double a[8][8];
  DctBasis() {
    for (int u = 0; u < 8; ++u) {
      double alpha = u == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
      for (int x = 0; x < 8; ++x) a[u][x] = alpha * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
  }
};

const DctBasis& basis() {
  static const DctBasis b;
  return b;
}

}  // namespace

CoeffBlock dct8x8(const CoeffBlock& f) {
  const auto& A = basis().a;
  double t[64];
  for (int u = 0; u < 8; ++u)
    for (int j = 0; j < 8; ++j) {
      double s = 0;
      for (int i = 0; i < 8; ++i) s += A[u][i] * f[i * 8 + j];
      t[u * 8 + j] = s;
    }
  CoeffBlock F{};
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0;
      for (int j = 0; j < 8; ++j) s += t[u * 8 + j] * A[v][j];
      F[u * 8 + v] = s;
    }
  return F;
}

CoeffBlock idct8x8(const CoeffBlock& F) {
  const auto& A = basis().a;
  double t[64];
  for (int i = 0; i < 8; ++i)
    for (int v = 0; v < 8; ++v) {
      double s = 0;
      for (int u = 0; u < 8; ++u) s += A[u][i] * F[u * 8 + v];
      t[i * 8 + v] = s;
    }
  CoeffBlock f{};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = 0;
      for (int v = 0; v < 8; ++v) s += t[i * 8 + v] * A[v][j];
      f[i * 8 + j] = s;
    }
  return f;
}

QuantTable scale_quant_table(const QuantTable& base, int factor) {
  if (factor < 1 || factor > 100)
    throw ValidationError("quality factor " + std::to_string(factor) + " outside [1,100]");
  QuantTable out{};
  for (int i = 0; i < 64; ++i) {
    if (base[i] < 1 || base[i] > 255) throw ValidationError("base table entry outside [1,255]");
    long q;
    if (factor <= 50) {
      long num = 50L * base[i];
      q = (2 * num + factor) / (2L * factor);
    } else {
      long num = static_cast<long>(200 - 2 * factor) * base[i];
      q = (num + 50) / 100;
    }
    out[i] = static_cast<int>(std::clamp(q, 1L, 255L));
  }
  return out;
}

CoeffBlock quantize_dequantize(const CoeffBlock& c, const QuantTable& q) {
  CoeffBlock out{};
  for (int i = 0; i < 64; ++i) out[i] = round_half_away(c[i] / q[i]) * q[i];
  return out;
}

namespace {

PlaneF32 code_plane(const PlaneF32& p, const QuantTable& q, const CodecOptions& opts) {
  const double shift = opts.level_shift ? 128.0 : 0.0;
  PlaneF32 out(p.height, p.width);
  CoeffBlock blk;
  for (int by = 0; by < p.height; by += 8)
    for (int bx = 0; bx < p.width; bx += 8) {
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) blk[i * 8 + j] = p.at(by + i, bx + j) - shift;
      auto rec = idct8x8(quantize_dequantize(dct8x8(blk), q));
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
          double v = rec[i * 8 + j] + shift;
          if (opts.clamp_planes) v = std::clamp(round_half_away(v), 0.0, 255.0);
          out.at(by + i, bx + j) = static_cast<float>(v);
        }
    }
  return out;
}

}  // namespace

ImageU8 compress_image(const ImageU8& img, int factor, const CodecOptions& opts) {
  if (img.height % 8 != 0 || img.width % 8 != 0 || img.height == 0 || img.width == 0)
    throw ValidationError("compress_image: " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                          " is not divisible by 8; resize first");
  QuantTable qy = scale_quant_table(kLumaTable, factor);
  QuantTable qc = scale_quant_table(kChromaTable, factor);
  auto planes = rgb_to_ycbcr(img);
  return ycbcr_to_rgb(code_plane(planes.y, qy, opts), code_plane(planes.cb, qc, opts),
                      code_plane(planes.cr, qc, opts));
}

Dataset compress_dataset(const Dataset& ds, int factor, const CodecOptions& opts) {
  Dataset out = ds;
  for (auto& s : out.samples) s.image = compress_image(s.image, factor, opts);
  out.provenance = Provenance::forged;
  return out;
}

WatermarkSplit forge_watermark_split(const Dataset& train, const Dataset& holdout, double rate, int factor, int target,
                                     SeededRng& rng, size_t verify_count, const CodecOptions& opts) {
  if (!(rate > 0 && rate < 1)) throw ValidationError("watermark rate must lie in (0,1)");
  if (target < 0 || target >= train.num_classes) throw ValidationError("target class outside [0,C)");
  if (factor < 1 || factor > 100) throw ValidationError("quality factor outside [1,100]");
  auto nw = static_cast<size_t>(std::llround(rate * static_cast<double>(train.size())));
  if (nw == 0) throw ValidationError("watermark rate yields zero watermark samples");
  if (verify_count > holdout.size()) throw ValidationError("verify_count exceeds the held-out pool");

  auto pick = sample_rand(train, nw, rng);
  WatermarkSplit out;
  out.watermark = relabel(compress_dataset(pick.selected, factor, opts), target);
  out.primary = pick.remainder;
  size_t nv = verify_count == 0 ? holdout.size() : verify_count;
  auto held = sample_rand(holdout, nv, rng);
  out.verification = relabel(compress_dataset(held.selected, factor, opts), target);
  out.verification_source = held.selected;
  out.holdout_rest = held.remainder;
  return out;
}

}  // namespace wmark
