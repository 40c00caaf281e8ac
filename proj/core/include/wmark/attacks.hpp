#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmark/dataset.hpp"
#include "wmark/image.hpp"
#include "wmark/rng.hpp"

namespace wmark {

enum class AttackKind {
  crop,
  rotate,
  scale,
  gaussian_noise,
  gaussian_blur,
  brightness,
  image_quantize,
  color_quantize,
  jpeg2000,
  webp,
  jpeg,  // recompression with the watermark codec; evasion sweeps only
};

const char* attack_name(AttackKind k);
AttackKind parse_attack_kind(const std::string& s);

// Magnitude is drawn uniformly from [lo, hi], or uniformly from `choices`
// when that list is nonempty.
struct AttackSpec {
  AttackKind kind = AttackKind::crop;
  double lo = 0;
  double hi = 0;
  std::vector<double> choices;

  std::string describe() const;
  AttackSpec fixed(double magnitude) const;
  bool is_external() const { return kind == AttackKind::jpeg2000 || kind == AttackKind::webp; }
};

AttackSpec default_spec(AttackKind kind);
// "crop" | "crop:0.8,1.0" | "image_quantize:{4,5,6}"
AttackSpec parse_attack_spec(const std::string& text);

class CodecUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shell commands that read a PNG on stdin and write a PNG on stdout. A `{q}`
// token is replaced with the drawn quality magnitude.
struct ExternalCodecs {
  std::string jpeg2000;
  std::string webp;

  static ExternalCodecs from_env();
};

struct AttackRegistry {
  std::vector<AttackSpec> specs;
  ExternalCodecs codecs;

  size_t k() const { return specs.size(); }
  void validate() const;
};

// The in-house registry, extended with jpeg2000/webp when their codecs are set.
AttackRegistry default_registry(const ExternalCodecs& codecs = {});
std::vector<AttackKind> in_house_kinds();

ImageU8 apply_attack(const AttackSpec& spec, const ImageU8& image, SeededRng& rng, const ExternalCodecs& codecs = {});
ImageU8 apply_attack_at(AttackKind kind, double magnitude, const ImageU8& image, SeededRng& rng,
                        const ExternalCodecs& codecs = {});

Dataset apply_attack_dataset(const AttackSpec& spec, const Dataset& ds, uint64_t seed, const ExternalCodecs& codecs = {});

Dataset build_attacked_epoch_set(const Dataset& primary, const Dataset& watermark, double p,
                                 const AttackRegistry& registry, uint64_t epoch_seed);

ImageU8 run_external_codec(const std::string& command, const ImageU8& image, double quality);

}  // namespace wmark
