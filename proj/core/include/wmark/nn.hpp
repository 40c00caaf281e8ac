#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wmark/image.hpp"
#include "wmark/metrics.hpp"
#include "wmark/rng.hpp"

namespace wmark {

// cnn2:   conv(3->16) relu pool conv(16->32) relu pool dense(->64) relu dense(64->C)
// cnn2hp: same, with a fixed high-pass residual of the RGB input stacked as
//         three extra input channels (conv1 is 6->16).
enum class Arch { cnn2, cnn2hp };

const char* arch_name(Arch a);
Arch parse_arch(const std::string& s);

inline constexpr int kFeatureDim = 64;
inline constexpr double kResidualGain = 10.0;

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;
};

template <typename T>
using Grads = std::vector<std::vector<T>>;

template <typename T>
class Net {
 public:
  enum Index { kConv1W, kConv1B, kConv2W, kConv2B, kFc1W, kFc1B, kFc2W, kFc2B, kCount };

  Net() = default;
  Net(Arch arch, int classes, int side = 32);

  void init_he_uniform(SeededRng& rng);

  Arch arch = Arch::cnn2hp;
  int classes = 0;
  int side = 32;
  std::vector<ParamTensor<T>> params;

  int input_channels() const { return arch == Arch::cnn2hp ? 6 : 3; }
  size_t param_count() const;
  std::string descriptor() const;

  struct Pass {
    int batch = 0;
    std::vector<T> logits;    // batch x classes, row-major
    std::vector<T> features;  // batch x 64, row-major (post-ReLU penultimate)
    std::shared_ptr<void> cache;
  };

  Pass forward(const std::vector<const ImageU8*>& batch, bool keep_cache = false) const;
  // dfeatures may be null. Returns gradients aligned with `params`.
  Grads<T> backward(const Pass& pass, const std::vector<T>& dlogits, const std::vector<T>* dfeatures) const;

  // Final dense layer on precomputed features.
  std::vector<T> head(const std::vector<T>& features, int batch) const;

  Grads<T> zero_grads() const;

  template <typename U>
  Net<U> cast() const {
    Net<U> out;
    out.arch = arch;
    out.classes = classes;
    out.side = side;
    for (const auto& p : params) out.params.push_back({p.name, p.shape, std::vector<U>(p.data.begin(), p.data.end())});
    return out;
  }
};

extern template class Net<float>;
extern template class Net<double>;

// Input tensor fed to conv1, channel-major [c][y][x], for a single image.
template <typename T>
std::vector<T> network_input(const ImageU8& img, Arch arch);

template <typename T>
struct LossGrad {
  double loss = 0;
  std::vector<T> grad;
};

// Mean cross-entropy over the batch; gradient w.r.t. logits.
template <typename T>
LossGrad<T> cross_entropy(const std::vector<T>& logits, const std::vector<int>& labels, int classes);

// KL(target || softmax(logits)) averaged over the batch.
template <typename T>
LossGrad<T> soft_cross_entropy(const std::vector<T>& logits, const std::vector<std::vector<double>>& target, int classes);

using PairList = std::vector<std::pair<int, int>>;

// Random perfect matching of floor(n/2) pairs.
PairList random_pairs(int n, SeededRng& rng);

// (1/2N) sum[y d^2 + (1-y) max(margin-d, 0)^2] over pairs; gradient w.r.t. features.
template <typename T>
LossGrad<T> contrastive_loss(const std::vector<T>& features, int dim, const std::vector<int>& labels,
                             const PairList& pairs, double margin);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  Grads<T> m;
  Grads<T> v;
  int64_t step = 0;
  double lr = 1e-3;
};

template <typename T>
AdamState<T> adam_init(const Net<T>& net, double lr);

// Updates params in place. `mask` (optional) selects which tensors move.
template <typename T>
void adam_step(Net<T>& net, const Grads<T>& grads, AdamState<T>& state, const AdamConfig& cfg,
               const std::vector<bool>* mask = nullptr);

struct Checkpoint {
  Net<float> net;
  std::optional<AdamState<float>> adam;
  std::string config_text;
  uint64_t rng_seed = 0;
  uint64_t rng_counter = 0;
  int epochs_done = 0;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes);

class NetOracle : public PredictionOracle {
 public:
  explicit NetOracle(const Net<float>& net) : net_(net) {}
  int num_classes() const override { return net_.classes; }
  std::vector<int> predict(const std::vector<const ImageU8*>& batch) override;
  std::vector<std::vector<double>> probabilities(const std::vector<const ImageU8*>& batch) override;

 private:
  const Net<float>& net_;
};

std::vector<double> softmax_row(const float* logits, int classes);

// Penultimate features for every sample, row-major n x 64.
std::vector<float> extract_features(const Net<float>& net, const Dataset& ds, size_t batch = 256);

}  // namespace wmark
