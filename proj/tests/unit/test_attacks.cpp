#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "wmark/attacks.hpp"
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

ImageU8 at(AttackKind k, double m, const ImageU8& img, const ExternalCodecs& codecs = {}) {
  SeededRng r(1);
  return apply_attack_at(k, m, img, r, codecs);
}

}  // namespace

TEST_CASE("identity magnitudes leave the image unchanged") {
  auto img = random_image(16, 16, 1);
  CHECK(at(AttackKind::crop, 1.0, img) == img);
  CHECK(at(AttackKind::rotate, 0.0, img) == img);
  CHECK(at(AttackKind::scale, 1.0, img) == img);
  CHECK(at(AttackKind::gaussian_noise, 0.0, img) == img);
  CHECK(at(AttackKind::brightness, 1.0, img) == img);
  CHECK(at(AttackKind::image_quantize, 8, img) == img);
  CHECK(at(AttackKind::color_quantize, 256, img) == img);
}

TEST_CASE("rotation by 180 degrees flips both axes") {
  auto img = random_image(8, 8, 2);
  auto r = at(AttackKind::rotate, 180.0, img);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) CHECK(r.at(y, x, c) == img.at(7 - y, 7 - x, c));
}

TEST_CASE("image_quantize keeps the top bits and reconstructs at the bin midpoint") {
  ImageU8 img(8, 8);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<uint8_t>(i);
  auto q = at(AttackKind::image_quantize, 3, img);
  for (size_t i = 0; i < img.data.size(); ++i) {
    int bin = img.data[i] / 32;
    CHECK(q.data[i] == bin * 32 + 16);  // midpoint 15.5 rounds half away
  }
}

TEST_CASE("color_quantize uses L evenly spaced levels") {
  auto img = random_image(8, 8, 3);
  auto q = at(AttackKind::color_quantize, 2, img);
  for (auto v : q.data) CHECK((v == 0 || v == 255));
  auto q16 = at(AttackKind::color_quantize, 16, img);
  for (auto v : q16.data) CHECK(v % 17 == 0);
}

TEST_CASE("brightness scales and clamps") {
  ImageU8 img(8, 8, 200);
  CHECK(at(AttackKind::brightness, 0.5, img) == ImageU8(8, 8, 100));
  CHECK(at(AttackKind::brightness, 1.5, img) == ImageU8(8, 8, 255));
}

TEST_CASE("blur smooths and keeps constants fixed") {
  ImageU8 flat(8, 8, 77);
  CHECK(at(AttackKind::gaussian_blur, 1.0, flat) == flat);
  auto img = random_image(16, 16, 4);
  auto b = at(AttackKind::gaussian_blur, 1.0, img);
  auto var = [](const ImageU8& im) {
    double s = 0, s2 = 0;
    for (auto v : im.data) {
      s += v;
      s2 += v * v;
    }
    double n = static_cast<double>(im.data.size());
    return s2 / n - (s / n) * (s / n);
  };
  CHECK(var(b) < var(img));
}

TEST_CASE("noise magnitude tracks sigma") {
  ImageU8 img(32, 32, 128);
  auto n = at(AttackKind::gaussian_noise, 5.0, img);
  double s2 = 0;
  for (auto v : n.data) s2 += (v - 128.0) * (v - 128.0);
  double sd = std::sqrt(s2 / static_cast<double>(n.data.size()));
  CHECK(sd == doctest::Approx(5.0).epsilon(0.1));
}

TEST_CASE("geometric attacks preserve size") {
  auto img = random_image(32, 32, 5);
  for (auto k : {AttackKind::crop, AttackKind::rotate, AttackKind::scale}) {
    SeededRng r(2);
    CHECK(apply_attack(default_spec(k), img, r).same_shape(img));
  }
}

TEST_CASE("apply_attack is a pure function of the rng state") {
  auto img = random_image(16, 16, 6);
  for (auto k : in_house_kinds()) {
    SeededRng a(9), b(9);
    CHECK(apply_attack(default_spec(k), img, a) == apply_attack(default_spec(k), img, b));
  }
}

TEST_CASE("jpeg attack equals the watermark codec") {
  auto img = random_image(16, 16, 7);
  CHECK(at(AttackKind::jpeg, 90, img) == compress_image(img, 90));
}

TEST_CASE("spec parsing") {
  auto s = parse_attack_spec("crop:0.6,0.9");
  CHECK(s.kind == AttackKind::crop);
  CHECK(s.lo == 0.6);
  CHECK(s.hi == 0.9);
  auto c = parse_attack_spec("image_quantize:{3,5}");
  CHECK(c.choices == std::vector<double>{3, 5});
  auto f = parse_attack_spec("rotate:10");
  CHECK(f.lo == 10);
  CHECK(f.hi == 10);
  CHECK(parse_attack_spec("gaussian_blur").describe() == default_spec(AttackKind::gaussian_blur).describe());
  CHECK(parse_attack_spec(c.describe()).describe() == c.describe());
  CHECK_THROWS_AS(parse_attack_spec("sharpen"), ValidationError);
  CHECK_THROWS_AS(parse_attack_spec("crop:a,b"), ValidationError);
  CHECK_THROWS_AS(parse_attack_spec("crop:1,2,3"), ValidationError);
}

TEST_CASE("out-of-range magnitudes and bad sizes are rejected") {
  auto img = random_image(16, 16, 8);
  SeededRng r(1);
  CHECK_THROWS_AS(apply_attack(default_spec(AttackKind::crop).fixed(1.5), img, r), ValidationError);
  CHECK_THROWS_AS(apply_attack(default_spec(AttackKind::image_quantize).fixed(9), img, r), ValidationError);
  CHECK_THROWS_AS(apply_attack(default_spec(AttackKind::crop), random_image(12, 16, 1), r), ValidationError);
}

TEST_CASE("registry validation") {
  CHECK_NOTHROW(default_registry().validate());
  CHECK(default_registry().k() == 8);
  AttackRegistry empty;
  CHECK_THROWS(empty.validate());
  AttackRegistry dup = default_registry();
  dup.specs.push_back(default_spec(AttackKind::crop));
  CHECK_THROWS(dup.validate());
  AttackRegistry ext = default_registry();
  ext.specs.push_back(default_spec(AttackKind::webp));
  CHECK_THROWS_AS(ext.validate(), CodecUnavailable);
  CHECK(default_registry(ExternalCodecs{"cat", "cat"}).k() == 10);
}

TEST_CASE("external codec hook round-trips through a subprocess") {
  auto img = random_image(16, 16, 9);
  ExternalCodecs codecs{"cat", "cat"};
  CHECK(at(AttackKind::webp, 70, img, codecs) == img);
  CHECK(at(AttackKind::jpeg2000, 30, img, codecs) == img);
  CHECK_THROWS_AS(at(AttackKind::webp, 70, img), CodecUnavailable);
  CHECK_THROWS(run_external_codec("false", img, 50));
}

TEST_CASE("attacked epoch set draws p of each part and splits across k attacks") {
  Dataset p, w;
  p.num_classes = w.num_classes = 3;
  for (int i = 0; i < 40; ++i) p.samples.push_back({random_image(8, 8, 100 + i), i % 3, static_cast<uint64_t>(i)});
  for (int i = 0; i < 10; ++i) w.samples.push_back({random_image(8, 8, 200 + i), 1, static_cast<uint64_t>(100 + i)});
  auto reg = default_registry();
  auto a = build_attacked_epoch_set(p, w, 0.5, reg, 77);
  CHECK(a.size() == 25);
  CHECK(a.provenance == Provenance::attacked);
  auto b = build_attacked_epoch_set(p, w, 0.5, reg, 77);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].image == b[i].image);
  auto c = build_attacked_epoch_set(p, w, 0.5, reg, 78);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) differs |= a[i].id != c[i].id || a[i].image != c[i].image;
  CHECK(differs);
  Dataset none;
  none.num_classes = 3;
  CHECK(build_attacked_epoch_set(p, none, 0.5, reg, 1).size() == 20);
}
