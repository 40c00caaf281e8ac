#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wmark/attacks.hpp"
#include "wmark/codec.hpp"
#include "wmark/lab.hpp"
#include "wmark/train.hpp"
#include "wmark/verify.hpp"

namespace wmark {

const char* version();

// Line-oriented `key = value` text. `[section]` headers prefix later keys with
// `section.`; `#` starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source = "<config>");

struct RunConfig {
  // dataset
  std::string dataset_source = "synth";  // synth | folder
  std::string dataset_path;
  int classes = 10;
  int per_class = 320;
  int side = 32;
  uint64_t dataset_seed = 7;
  int train_size = 2000;
  bool skip_invalid = false;

  // forging
  double rate = 0.1;
  int factor = 90;
  int target = 3;
  int verify_count = 500;
  uint64_t forge_seed = 11;
  CodecOptions codec;

  // training
  TrainConfig train;
  std::string registry = "default";
  ExternalCodecs codecs;

  // verification
  VerifyOptions verify;
  std::string oracle_url;

  // removal
  double prune_rate = 0.5;
  int quant_bits = 4;
  double finetune_fraction = 0.1;
  FinetuneConfig finetune;
  DistillConfig distill;
  std::string distill_mode = "soft";

  // ablation sweeps
  std::vector<double> ablate_rates = {0.01, 0.05, 0.1, 0.2};
  std::vector<int> ablate_factors = {50, 70, 90, 95};

  std::filesystem::path output_root = "runs";

  // Defaults, then env overrides, then each map in order. Unknown keys and bad
  // values are collected into one ValidationError.
  static RunConfig load(const std::vector<std::map<std::string, std::string>>& layers);
  static RunConfig load_files(const std::vector<std::filesystem::path>& files,
                              const std::map<std::string, std::string>& overrides = {});

  std::map<std::string, std::string> effective() const;
  std::string canonical_text() const;
  std::string hash() const;

  AttackRegistry attack_registry() const;
  TrainConfig train_config() const;

  // Every downstream constraint; throws one aggregated ValidationError.
  void validate() const;
};

std::vector<std::string> config_keys();

// Source pool from dataset.* keys (synthetic, or an image folder with class subdirectories).
Dataset load_source(const RunConfig& cfg, std::vector<std::string>* import_errors = nullptr);

struct Experiment {
  Dataset train;  // clean training draw, before forging
  Dataset test;   // held-out samples not used for D_v
  WatermarkSplit split;
};

// train_size samples for training, the rest held out; D_w forged from the
// training draw and D_v from the held-out pool.
Experiment prepare_experiment(const RunConfig& cfg, const Dataset& source);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// A run directory under output_root named <command>-<first 16 hex of sha256(command, config, inputs)>.
// Outputs go to a staging directory and are moved into place on commit; an
// existing finished run is never overwritten.
class RunDir {
 public:
  RunDir(const RunConfig& cfg, const std::string& command, const std::vector<std::string>& inputs = {});
  ~RunDir();
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const std::filesystem::path& path() const { return staging_; }
  const std::filesystem::path& final_path() const { return final_; }
  const std::string& id() const { return id_; }
  bool already_exists() const { return exists_; }

  void note(const std::string& key, const std::string& value) { notes_[key] = value; }
  // Writes manifest.json and renames into place. Returns the final path.
  std::filesystem::path commit();

 private:
  const RunConfig& cfg_;
  std::string command_;
  std::vector<std::string> inputs_;
  std::string id_;
  std::filesystem::path final_;
  std::filesystem::path staging_;
  std::map<std::string, std::string> notes_;
  bool exists_ = false;
  bool committed_ = false;
};

}  // namespace wmark
