#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wmark/attacks.hpp"
#include "wmark/dataset.hpp"
#include "wmark/nn.hpp"

namespace wmark {

enum class SimScope { all, watermark };

struct TrainConfig {
  Arch arch = Arch::cnn2hp;
  int epochs = 40;
  int batch_primary = 64;
  int batch_watermark = 8;
  int batch_attacked = 32;
  double lr = 1e-3;
  int decay_every = 15;
  double decay_factor = 0.1;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.1;
  double margin = 1.0;
  double attack_fraction = 0.5;
  SimScope sim_scope = SimScope::all;
  int target = 0;
  uint64_t seed = 1;
  AttackRegistry registry = default_registry();

  void validate() const;
  std::string fingerprint() const;
  double lr_at(int epoch) const;
};

struct LossBreakdown {
  double total = 0;
  double pri = 0;
  double wm = 0;
  double attk = 0;
  double sim = 0;
};

struct StepBatch {
  std::vector<const LabeledSample*> primary;
  std::vector<const LabeledSample*> watermark;
  std::vector<const LabeledSample*> attacked;
};

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.1;
  double margin = 1.0;
  SimScope sim_scope = SimScope::all;
};

template <typename T>
struct TotalLoss {
  LossBreakdown parts;
  Grads<T> grads;
};

// L = L_pri + alpha L_wm + beta L_attk + gamma L_sim, with the contrastive
// term over `pairs` drawn on the concatenated batch (primary, watermark, attacked).
template <typename T>
TotalLoss<T> total_loss(const Net<T>& net, const StepBatch& batch, const LossWeights& w, const PairList& pairs);

PairList step_pairs(const StepBatch& batch, SimScope scope, SeededRng& rng);

struct EpochLog {
  int epoch = 0;
  LossBreakdown loss;
  double acc = 0;
  double wsr = 0;
  double lr = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good)
      : std::runtime_error(what), last_good(std::move(last_good)) {}
  Checkpoint last_good;
};

struct EvalSets {
  const Dataset* test = nullptr;          // clean held-out split for acc
  const Dataset* verification = nullptr;  // D_v for wsr
};

using EpochCallback = std::function<void(const EpochLog&)>;

// D_w may be empty (no-watermark control).
TrainResult train(const TrainConfig& cfg, const Dataset& primary, const Dataset& watermark, const EvalSets& eval = {},
                  const EpochCallback& on_epoch = {});

Table epoch_log_table(const std::vector<EpochLog>& log);
Table feature_table(const Net<float>& net, const Dataset& ds);

// Mean Euclidean distance from each sample's features to the centroid of `anchor` features.
double mean_distance_to_centroid(const Net<float>& net, const Dataset& samples, const Dataset& anchor);

}  // namespace wmark
