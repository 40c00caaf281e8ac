#include <doctest.h>

#include <cmath>

#include "../oracles.hpp"
#include "wmark/codec.hpp"
#include "wmark/metrics.hpp"

using namespace wmark;

namespace {

ImageU8 random_image(int h, int w, uint64_t seed) {
  SeededRng r(seed);
  ImageU8 img(h, w);
  for (auto& v : img.data) v = static_cast<uint8_t>(r.below(256));
  return img;
}

}  // namespace

TEST_CASE("dct8x8 and idct8x8 agree with direct cosine sums") {
  SeededRng r(3);
  for (int b = 0; b < 50; ++b) {
    CoeffBlock x;
    std::array<double, 64> xa;
    for (int i = 0; i < 64; ++i) xa[i] = x[i] = r.uniform(-128, 128);
    auto c = dct8x8(x);
    auto ref = oracle::dct_direct(xa);
    for (int i = 0; i < 64; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12).scale(128));
    auto back = idct8x8(c);
    for (int i = 0; i < 64; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-9);
  }
}

TEST_CASE("constant block has only a DC coefficient") {
  CoeffBlock x;
  x.fill(10.0);
  auto c = dct8x8(x);
  CHECK(c[0] == doctest::Approx(80.0));
  for (int i = 1; i < 64; ++i) CHECK(std::abs(c[i]) < 1e-12);
}

TEST_CASE("scale_quant_table matches the integer formula for every factor") {
  for (const auto* base : {&kLumaTable, &kChromaTable})
    for (int f = 1; f <= 100; ++f) {
      auto t = scale_quant_table(*base, f);
      for (int i = 0; i < 64; ++i) {
        long q = (*base)[i];
        long expect = f < 50 ? (5000 * q + 50L * f) / (100L * f) : ((200 - 2 * f) * q + 50) / 100;
        expect = std::clamp(expect, 1L, 255L);
        REQUIRE(t[i] == expect);
      }
    }
}

TEST_CASE("table scaling endpoints") {
  CHECK(scale_quant_table(kLumaTable, 50) == kLumaTable);
  CHECK(scale_quant_table(kChromaTable, 50) == kChromaTable);
  CHECK(scale_quant_table(kLumaTable, 90)[0] == 3);
  for (int v : scale_quant_table(kLumaTable, 100)) CHECK(v == 1);
  for (int v : scale_quant_table(kChromaTable, 1)) CHECK(v == 255);
  CHECK_THROWS_AS(scale_quant_table(kLumaTable, 0), ValidationError);
  CHECK_THROWS_AS(scale_quant_table(kLumaTable, 101), ValidationError);
}

TEST_CASE("quantize_dequantize is idempotent and lands on multiples of the divisor") {
  SeededRng r(4);
  for (int k = 0; k < 200; ++k) {
    CoeffBlock c;
    for (auto& v : c) v = r.uniform(-1024, 1024);
    auto q = scale_quant_table(kLumaTable, 1 + static_cast<int>(r.below(100)));
    auto once = quantize_dequantize(c, q);
    CHECK(quantize_dequantize(once, q) == once);
    for (int i = 0; i < 64; ++i) CHECK(std::fmod(std::abs(once[i]), q[i]) == 0.0);
  }
}

TEST_CASE("round_half_away") {
  CHECK(round_half_away(2.5) == 3.0);
  CHECK(round_half_away(-2.5) == -3.0);
  CHECK(round_half_away(2.4999) == 2.0);
  CHECK(round_half_away(-0.5) == -1.0);
}

TEST_CASE("color conversion round-trips the 17^3 lattice exactly") {
  ImageU8 img(17, 17 * 17);
  for (int r = 0; r < 17; ++r)
    for (int g = 0; g < 17; ++g)
      for (int b = 0; b < 17; ++b) {
        int x = g * 17 + b;
        img.at(r, x, 0) = static_cast<uint8_t>(std::min(255, r * 16));
        img.at(r, x, 1) = static_cast<uint8_t>(std::min(255, g * 16));
        img.at(r, x, 2) = static_cast<uint8_t>(std::min(255, b * 16));
      }
  auto p = rgb_to_ycbcr(img);
  CHECK(ycbcr_to_rgb(p.y, p.cb, p.cr) == img);
}

TEST_CASE("BT.601 full-range reference values") {
  ImageU8 px(1, 1);
  px.at(0, 0, 0) = 255;
  auto p = rgb_to_ycbcr(px);
  CHECK(p.y.at(0, 0) == doctest::Approx(76.245));
  CHECK(p.cb.at(0, 0) == doctest::Approx(128 - 0.168736 * 255));
  CHECK(p.cr.at(0, 0) == doctest::Approx(255.5));
}

TEST_CASE("compress_image preserves shape, is deterministic, and rejects bad sizes") {
  auto img = random_image(32, 24, 7);
  auto a = compress_image(img, 90), b = compress_image(img, 90);
  CHECK(a == b);
  CHECK(a.same_shape(img));
  CHECK(a != img);
  CHECK_THROWS_AS(compress_image(random_image(30, 32, 1), 90), ValidationError);
  CHECK_THROWS_AS(compress_image(img, 0), ValidationError);
}

TEST_CASE("higher quality factor means higher fidelity on smooth content") {
  ImageU8 img(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<uint8_t>(40 + 4 * x + 2 * y + 20 * c);
  double p50 = psnr(img, compress_image(img, 50));
  double p90 = psnr(img, compress_image(img, 90));
  double p100 = psnr(img, compress_image(img, 100));
  CHECK(p50 < p90);
  CHECK(p90 <= p100);
  CHECK(p100 > 45);
}

TEST_CASE("recompressing a forged image is close to a fixed point") {
  auto img = random_image(16, 16, 8);
  auto once = compress_image(img, 90);
  auto twice = compress_image(once, 90);
  CHECK(psnr(once, twice) > psnr(img, once));
}

TEST_CASE("codec options change the pipeline") {
  auto img = random_image(16, 16, 9);
  CodecOptions raw{false, false};
  CHECK(compress_image(img, 90, raw).same_shape(img));
  CHECK(compress_image(img, 100, raw) != compress_image(img, 10, raw));
}

TEST_CASE("forge_watermark_split sizes and labels") {
  Dataset train, hold;
  train.num_classes = hold.num_classes = 4;
  for (int i = 0; i < 100; ++i) train.samples.push_back({random_image(8, 8, 100 + i), i % 4, static_cast<uint64_t>(i)});
  for (int i = 0; i < 40; ++i) hold.samples.push_back({random_image(8, 8, 300 + i), i % 4, static_cast<uint64_t>(200 + i)});
  SeededRng r(1);
  auto s = forge_watermark_split(train, hold, 0.1, 90, 2, r, 25);
  CHECK(s.watermark.size() == 10);
  CHECK(s.primary.size() == 90);
  CHECK(s.verification.size() == 25);
  CHECK(s.verification_source.size() == 25);
  CHECK(s.holdout_rest.size() == 15);
  for (const auto& x : s.watermark.samples) CHECK(x.label == 2);
  for (const auto& x : s.verification.samples) CHECK(x.label == 2);
  for (size_t i = 0; i < 25; ++i) {
    CHECK(s.verification[i].id == s.verification_source[i].id);
    CHECK(s.verification[i].image == compress_image(s.verification_source[i].image, 90));
  }
  SeededRng r2(1);
  CHECK_THROWS_AS(forge_watermark_split(train, hold, 0.001, 90, 2, r2), ValidationError);
  CHECK_THROWS_AS(forge_watermark_split(train, hold, 0.1, 90, 4, r2), ValidationError);
}
