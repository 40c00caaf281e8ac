#pragma once

#include <map>
#include <string>
#include <vector>

#include "wmark/attacks.hpp"
#include "wmark/dataset.hpp"
#include "wmark/metrics.hpp"
#include "wmark/nn.hpp"

namespace wmark {

// Global magnitude pruning over weight tensors (biases exempt); zeroes exactly
// round(rate * N) weights, ties broken by position.
Net<float> prune(const Net<float>& net, double rate);
size_t weight_count(const Net<float>& net);
size_t zero_weight_count(const Net<float>& net);

// Per-tensor symmetric uniform quantization to 2^bits levels over [-max|w|, +max|w|].
Net<float> quantize_weights(const Net<float>& net, int bits);

struct FinetuneConfig {
  int epochs = 100;
  int batch = 64;
  double lr = 1e-3;
  uint64_t seed = 17;
};

Net<float> finetune_last_layer(const Net<float>& net, const Dataset& data, const FinetuneConfig& cfg = {});

enum class DistillMode { soft, hard };
const char* distill_mode_name(DistillMode m);

struct DistillConfig {
  int epochs = 40;
  int batch = 64;
  double lr = 1e-3;
  int decay_every = 15;
  double decay_factor = 0.1;
  uint64_t seed = 23;
  Arch arch = Arch::cnn2hp;
};

// Fresh surrogate trained on the victim's outputs for the (label-free) query set.
Net<float> distill_extract(PredictionOracle& victim, const Dataset& queries, DistillMode mode,
                           const DistillConfig& cfg = {});

struct AttackOutcome {
  std::string attack;
  std::string param;
  double acc_before = 0;
  double acc_after = 0;
  double wsr_before = 0;
  double wsr_after = 0;
  bool skipped = false;
  std::string note;
};

struct SweepOptions {
  // Fixed magnitudes per kind in addition to the default-range row.
  std::map<AttackKind, std::vector<double>> magnitudes;
  std::vector<int> jpeg_factors = {90};
  uint64_t seed = 31;
  const Dataset* test = nullptr;  // when set, accuracy before/after is reported too

  static SweepOptions defaults();
};

std::vector<AttackOutcome> evasion_sweep(const Net<float>& net, const Dataset& verification, int target,
                                         const AttackRegistry& registry, const SweepOptions& opts = {});

struct ForgeryOutcome {
  std::string forgery;
  std::string recipe;
  double wsr = 0;
  size_t count = 0;
  bool skipped = false;
  std::string note;
};

std::vector<ForgeryOutcome> false_trigger_audit(const Net<float>& net, const Dataset& clean_pool, int target,
                                                int factor = 90, const ExternalCodecs& codecs = {},
                                                uint64_t seed = 37);

Table outcome_table(const std::vector<AttackOutcome>& rows);
Table forgery_table(const std::vector<ForgeryOutcome>& rows);

}  // namespace wmark
