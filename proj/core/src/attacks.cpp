#include "wmark/attacks.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include "wmark/codec.hpp"

namespace wmark {

namespace {

struct KindName {
  AttackKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {AttackKind::crop, "crop"},
    {AttackKind::rotate, "rotate"},
    {AttackKind::scale, "scale"},
    {AttackKind::gaussian_noise, "gaussian_noise"},
    {AttackKind::gaussian_blur, "gaussian_blur"},
    {AttackKind::brightness, "brightness"},
    {AttackKind::image_quantize, "image_quantize"},
    {AttackKind::color_quantize, "color_quantize"},
    {AttackKind::jpeg2000, "jpeg2000"},
    {AttackKind::webp, "webp"},
    {AttackKind::jpeg, "jpeg"},
};

}  // namespace

const char* attack_name(AttackKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

AttackKind parse_attack_kind(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  throw ValidationError("unknown attack kind '" + s + "'");
}

AttackSpec default_spec(AttackKind kind) {
  switch (kind) {
    case AttackKind::crop: return {kind, 0.8, 1.0, {}};
    case AttackKind::rotate: return {kind, -15.0, 15.0, {}};
    case AttackKind::scale: return {kind, 0.7, 1.3, {}};
    case AttackKind::gaussian_noise: return {kind, 2.0, 10.0, {}};
    case AttackKind::gaussian_blur: return {kind, 0.5, 1.0, {}};
    case AttackKind::brightness: return {kind, 0.7, 1.3, {}};
    case AttackKind::image_quantize: return {kind, 4, 6, {4, 5, 6}};
    case AttackKind::color_quantize: return {kind, 16, 64, {16, 32, 64}};
    case AttackKind::jpeg2000: return {kind, 20, 40, {}};
    case AttackKind::webp: return {kind, 50, 90, {}};
    case AttackKind::jpeg: return {kind, 90, 90, {}};
  }
  throw ValidationError("unknown attack kind");
}

std::string AttackSpec::describe() const {
  std::ostringstream os;
  os << attack_name(kind) << ':';
  if (!choices.empty()) {
    os << '{';
    for (size_t i = 0; i < choices.size(); ++i) os << (i ? "," : "") << choices[i];
    os << '}';
  } else if (lo == hi) {
    os << lo;
  } else {
    os << lo << ',' << hi;
  }
  return os.str();
}

AttackSpec AttackSpec::fixed(double m) const { return {kind, m, m, {}}; }

AttackSpec parse_attack_spec(const std::string& text) {
  auto colon = text.find(':');
  AttackSpec spec = default_spec(parse_attack_kind(text.substr(0, colon)));
  if (colon == std::string::npos) return spec;
  std::string rest = text.substr(colon + 1);
  bool braces = !rest.empty() && rest.front() == '{';
  if (braces) {
    if (rest.back() != '}') throw ValidationError("unterminated choice list in '" + text + "'");
    rest = rest.substr(1, rest.size() - 2);
  }
  std::vector<double> vals;
  std::stringstream ss(rest);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      vals.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ValidationError("bad magnitude '" + tok + "' in '" + text + "'");
    }
  }
  if (vals.empty()) throw ValidationError("no magnitudes in '" + text + "'");
  if (braces) {
    spec.choices = vals;
    spec.lo = *std::min_element(vals.begin(), vals.end());
    spec.hi = *std::max_element(vals.begin(), vals.end());
  } else if (vals.size() == 1) {
    spec = spec.fixed(vals[0]);
  } else if (vals.size() == 2) {
    spec.choices.clear();
    spec.lo = vals[0];
    spec.hi = vals[1];
  } else {
    throw ValidationError("expected one value or a lo,hi range in '" + text + "'");
  }
  if (spec.lo > spec.hi) throw ValidationError("range lo > hi in '" + text + "'");
  return spec;
}

ExternalCodecs ExternalCodecs::from_env() {
  ExternalCodecs c;
  if (const char* v = std::getenv("WMARK_JPEG2000_CODEC")) c.jpeg2000 = v;
  if (const char* v = std::getenv("WMARK_WEBP_CODEC")) c.webp = v;
  return c;
}

namespace {

void check_range(AttackKind k, double lo, double hi) {
  auto bad = [&](const char* what) {
    throw ValidationError(std::string(attack_name(k)) + " magnitude " + what);
  };
  switch (k) {
    case AttackKind::crop:
      if (lo <= 0 || hi > 1) bad("(keep ratio) must lie in (0,1]");
      break;
    case AttackKind::rotate:
      if (lo < -180 || hi > 180) bad("(degrees) must lie in [-180,180]");
      break;
    case AttackKind::scale:
      if (lo <= 0 || hi > 8) bad("(factor) must lie in (0,8]");
      break;
    case AttackKind::gaussian_noise:
      if (lo < 0) bad("(sigma) must be non-negative");
      break;
    case AttackKind::gaussian_blur:
      if (lo <= 0) bad("(sigma) must be positive");
      break;
    case AttackKind::brightness:
      if (lo < 0) bad("(factor) must be non-negative");
      break;
    case AttackKind::image_quantize:
      if (lo < 1 || hi > 8) bad("(bits) must lie in [1,8]");
      break;
    case AttackKind::color_quantize:
      if (lo < 2 || hi > 256) bad("(levels) must lie in [2,256]");
      break;
    case AttackKind::jpeg:
      if (lo < 1 || hi > 100) bad("(quality) must lie in [1,100]");
      break;
    case AttackKind::jpeg2000:
    case AttackKind::webp:
      break;
  }
}

double draw(const AttackSpec& s, SeededRng& rng) {
  if (!s.choices.empty()) return s.choices[rng.below(s.choices.size())];
  if (s.lo == s.hi) return s.lo;
  return rng.uniform(s.lo, s.hi);
}

ImageU8 map_pixels(const ImageU8& img, auto&& fn) {
  ImageU8 out(img.height, img.width);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = to_u8(fn(static_cast<double>(img.data[i])));
  return out;
}

}  // namespace

void AttackRegistry::validate() const {
  if (specs.empty()) throw ValidationError("attack registry is empty");
  std::set<AttackKind> seen;
  for (const auto& s : specs) {
    if (!seen.insert(s.kind).second)
      throw ValidationError(std::string("attack kind listed twice: ") + attack_name(s.kind));
    check_range(s.kind, s.lo, s.hi);
    if (s.kind == AttackKind::jpeg2000 && codecs.jpeg2000.empty())
      throw CodecUnavailable("jpeg2000 in registry but no external codec configured");
    if (s.kind == AttackKind::webp && codecs.webp.empty())
      throw CodecUnavailable("webp in registry but no external codec configured");
  }
}

std::vector<AttackKind> in_house_kinds() {
  return {AttackKind::crop,          AttackKind::rotate,     AttackKind::scale,          AttackKind::gaussian_noise,
          AttackKind::gaussian_blur, AttackKind::brightness, AttackKind::image_quantize, AttackKind::color_quantize};
}

AttackRegistry default_registry(const ExternalCodecs& codecs) {
  AttackRegistry r;
  r.codecs = codecs;
  for (auto k : in_house_kinds()) r.specs.push_back(default_spec(k));
  if (!codecs.jpeg2000.empty()) r.specs.push_back(default_spec(AttackKind::jpeg2000));
  if (!codecs.webp.empty()) r.specs.push_back(default_spec(AttackKind::webp));
  return r;
}

ImageU8 run_external_codec(const std::string& command, const ImageU8& image, double quality) {
  namespace fs = std::filesystem;
  static int counter = 0;
  fs::path dir = fs::temp_directory_path();
  std::string stem = "wmark_codec_" + std::to_string(::getpid()) + "_" + std::to_string(counter++);
  fs::path in = dir / (stem + "_in.png"), out = dir / (stem + "_out.png");
  write_png(in, image);
  std::string cmd = command;
  char qbuf[32];
  std::snprintf(qbuf, sizeof qbuf, "%g", quality);
  for (size_t pos; (pos = cmd.find("{q}")) != std::string::npos;) cmd.replace(pos, 3, qbuf);
  std::string full = "(" + cmd + ") < '" + in.string() + "' > '" + out.string() + "'";
  int rc = std::system(full.c_str());
  std::error_code ec;
  if (rc != 0) {
    fs::remove(in, ec);
    fs::remove(out, ec);
    throw std::runtime_error("external codec exited with status " + std::to_string(rc) + ": " + command);
  }
  ImageU8 res;
  try {
    res = read_png(out);
  } catch (...) {
    fs::remove(in, ec);
    fs::remove(out, ec);
    throw;
  }
  fs::remove(in, ec);
  fs::remove(out, ec);
  if (!res.same_shape(image)) res = resize_bilinear(res, image.height, image.width);
  return res;
}

ImageU8 apply_attack_at(AttackKind kind, double m, const ImageU8& img, SeededRng& rng, const ExternalCodecs& codecs) {
  const int H = img.height, W = img.width;
  switch (kind) {
    case AttackKind::crop: {
      int h = std::clamp(static_cast<int>(std::lround(H * m)), 1, H);
      int w = std::clamp(static_cast<int>(std::lround(W * m)), 1, W);
      int y0 = static_cast<int>(rng.range(0, H - h));
      int x0 = static_cast<int>(rng.range(0, W - w));
      ImageU8 win(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c) win.at(y, x, c) = img.at(y0 + y, x0 + x, c);
      return resize_bilinear(win, H, W);
    }
    case AttackKind::rotate: {
      double a = m * std::numbers::pi / 180.0, ca = std::cos(a), sa = std::sin(a);
      double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
      ImageU8 out(H, W);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double dy = y - cy, dx = x - cx;
          double sx = ca * dx + sa * dy + cx;
          double sy = -sa * dx + ca * dy + cy;
          for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_u8(sample_bilinear(img, sy, sx, c));
        }
      return out;
    }
    case AttackKind::scale: {
      int h = std::max(1, static_cast<int>(std::lround(H * m)));
      int w = std::max(1, static_cast<int>(std::lround(W * m)));
      return resize_bilinear(resize_bilinear(img, h, w), H, W);
    }
    case AttackKind::gaussian_noise:
      return map_pixels(img, [&](double v) { return v + rng.normal(0.0, m); });
    case AttackKind::gaussian_blur: {
      auto taps = gaussian_kernel(m, 1);
      ImageU8 out(H, W);
      for (int c = 0; c < 3; ++c) {
        auto p = separable_filter(channel_plane(img, c), taps);
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) out.at(y, x, c) = to_u8(p.at(y, x));
      }
      return out;
    }
    case AttackKind::brightness:
      return map_pixels(img, [&](double v) { return v * m; });
    case AttackKind::image_quantize: {
      int bits = static_cast<int>(std::lround(m));
      double step = 256 >> bits;
      return map_pixels(img, [&](double v) { return std::floor(v / step) * step + (step - 1) / 2; });
    }
    case AttackKind::color_quantize: {
      double L = std::round(m) - 1;
      return map_pixels(img, [&](double v) { return round_half_away(v / 255.0 * L) / L * 255.0; });
    }
    case AttackKind::jpeg:
      return compress_image(img, static_cast<int>(std::lround(m)));
    case AttackKind::jpeg2000:
      if (codecs.jpeg2000.empty()) throw CodecUnavailable("codec unavailable: jpeg2000 (set WMARK_JPEG2000_CODEC)");
      return run_external_codec(codecs.jpeg2000, img, m);
    case AttackKind::webp:
      if (codecs.webp.empty()) throw CodecUnavailable("codec unavailable: webp (set WMARK_WEBP_CODEC)");
      return run_external_codec(codecs.webp, img, m);
  }
  throw ValidationError("unknown attack kind");
}

ImageU8 apply_attack(const AttackSpec& spec, const ImageU8& image, SeededRng& rng, const ExternalCodecs& codecs) {
  check_range(spec.kind, spec.lo, spec.hi);
  if (image.height % 8 != 0 || image.width % 8 != 0)
    throw ValidationError("apply_attack: image dimensions must be divisible by 8");
  double m = draw(spec, rng);
  return apply_attack_at(spec.kind, m, image, rng, codecs);
}

Dataset apply_attack_dataset(const AttackSpec& spec, const Dataset& ds, uint64_t seed, const ExternalCodecs& codecs) {
  Dataset out = ds;
  SeededRng base(seed);
  for (size_t i = 0; i < out.samples.size(); ++i) {
    SeededRng r = base.split(i);
    out.samples[i].image = apply_attack(spec, ds.samples[i].image, r, codecs);
  }
  out.provenance = Provenance::attacked;
  return out;
}

Dataset build_attacked_epoch_set(const Dataset& primary, const Dataset& watermark, double p,
                                 const AttackRegistry& registry, uint64_t epoch_seed) {
  if (!(p >= 0 && p <= 1)) throw ValidationError("attack fraction p must lie in [0,1]");
  registry.validate();
  SeededRng root(epoch_seed);
  Dataset out;
  out.num_classes = primary.num_classes;
  out.class_names = primary.class_names;
  out.provenance = Provenance::attacked;
  const size_t k = registry.k();
  auto attack_part = [&](const Dataset& src, uint64_t stream) {
    SeededRng pick = root.split(stream);
    auto n = static_cast<size_t>(std::llround(p * static_cast<double>(src.size())));
    Dataset drawn = sample_rand(src, n, pick).selected;
    uint64_t part_seed = root.split(stream + 100).next_u64();
    SeededRng sample_root = root.split(stream + 200);
    for (size_t i = 0; i < k; ++i) {
      Dataset sub = partition_subset(drawn, i, k, part_seed);
      for (auto s : sub.samples) {
        SeededRng r = sample_root.split(s.id);
        s.image = apply_attack(registry.specs[i], s.image, r, registry.codecs);
        out.samples.push_back(std::move(s));
      }
    }
  };
  attack_part(primary, 1);
  attack_part(watermark, 2);
  return out;
}

}  // namespace wmark
