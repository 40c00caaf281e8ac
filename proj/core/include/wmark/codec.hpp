#pragma once

#include <array>
#include <cstdint>

#include "wmark/dataset.hpp"
#include "wmark/image.hpp"
#include "wmark/rng.hpp"

namespace wmark {

using CoeffBlock = std::array<double, 64>;
using QuantTable = std::array<int, 64>;

// ITU-T T.81 Annex K tables, row-major.
extern const QuantTable kLumaTable;
extern const QuantTable kChromaTable;

struct YCbCrPlanes {
  PlaneF32 y, cb, cr;
};

YCbCrPlanes rgb_to_ycbcr(const ImageU8& img);
ImageU8 ycbcr_to_rgb(const PlaneF32& y, const PlaneF32& cb, const PlaneF32& cr);

CoeffBlock dct8x8(const CoeffBlock& block);
CoeffBlock idct8x8(const CoeffBlock& coeffs);

QuantTable scale_quant_table(const QuantTable& base, int factor);
CoeffBlock quantize_dequantize(const CoeffBlock& coeffs, const QuantTable& table);

double round_half_away(double v);

struct CodecOptions {
  bool level_shift = true;
  bool clamp_planes = true;
};

ImageU8 compress_image(const ImageU8& img, int factor, const CodecOptions& opts = {});

struct WatermarkSplit {
  Dataset primary;              // D_p
  Dataset watermark;            // D_w, relabelled to target
  Dataset verification;         // D_v, forged from the held-out pool
  Dataset verification_source;  // clean originals of D_v, true labels
  Dataset holdout_rest;         // held-out samples not drawn into D_v
};

// D_w and D_p come from `train`; D_v from the first verify_count samples of a
// shuffle of `holdout` (0 means all of it).
WatermarkSplit forge_watermark_split(const Dataset& train, const Dataset& holdout, double rate, int factor, int target,
                                     SeededRng& rng, size_t verify_count = 0, const CodecOptions& opts = {});

Dataset compress_dataset(const Dataset& ds, int factor, const CodecOptions& opts = {});

}  // namespace wmark
