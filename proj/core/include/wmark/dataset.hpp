#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wmark/image.hpp"
#include "wmark/rng.hpp"

namespace wmark {

enum class Provenance { synthetic, imported, forged, attacked, mixed };

const char* provenance_name(Provenance p);
Provenance parse_provenance(const std::string& s);

struct LabeledSample {
  ImageU8 image;
  int label = 0;
  uint64_t id = 0;  // stable source identity, survives forging and attacks
};

struct Dataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  Provenance provenance = Provenance::synthetic;
  std::vector<std::string> class_names;

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  const LabeledSample& operator[](size_t i) const { return samples[i]; }

  // Throws ValidationError when an invariant is broken.
  void validate() const;
  Dataset with_samples(std::vector<LabeledSample> s) const;
};

struct SynthStyle {
  int prototypes_per_class = 10;
  double color_jitter = 4.0;
  double position_jitter = 1.0;
  double edge_sigma = 1.5;
  double grain = 3.0;
  double noise = 0.0;
};

Dataset synth_dataset(int classes, int per_class, int side, uint64_t seed, const SynthStyle& style = {});

struct ImportOptions {
  int side = 32;
  std::optional<std::filesystem::path> manifest;
  bool skip_invalid = false;
};

struct ImportResult {
  Dataset dataset;
  std::vector<std::string> errors;
};

class ImportError : public std::runtime_error {
 public:
  ImportError(const std::string& what, std::vector<std::string> files)
      : std::runtime_error(what), files(std::move(files)) {}
  std::vector<std::string> files;
};

ImportResult import_image_folder(const std::filesystem::path& root, const ImportOptions& opts = {});

// Writes `manifest.tsv` (relative_path<TAB>class_index), `classes.txt` and PNGs.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

struct Selection {
  Dataset selected;
  Dataset remainder;
};

Selection sample_rand(const Dataset& ds, size_t n, SeededRng& rng);

// Subset {x_j : j mod k == i} after an optional shuffle seeded by shuffle_seed.
Dataset partition_subset(const Dataset& ds, size_t i, size_t k, std::optional<uint64_t> shuffle_seed = std::nullopt);

Dataset relabel(const Dataset& ds, int target);
Dataset concat(const Dataset& a, const Dataset& b);
Dataset take(const Dataset& ds, const std::vector<size_t>& idx);

}  // namespace wmark
