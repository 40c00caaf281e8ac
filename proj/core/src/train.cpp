#include "wmark/train.hpp"

#include <cmath>
#include <sstream>

namespace wmark {

void TrainConfig::validate() const {
  std::vector<std::string> errs;
  if (epochs < 0) errs.push_back("epochs must be >= 0");
  if (batch_primary < 1) errs.push_back("batch_primary must be >= 1");
  if (batch_watermark < 0) errs.push_back("batch_watermark must be >= 0");
  if (batch_attacked < 0) errs.push_back("batch_attacked must be >= 0");
  if (!(lr > 0)) errs.push_back("lr must be > 0");
  if (decay_every < 1) errs.push_back("decay_every must be >= 1");
  if (!(decay_factor > 0)) errs.push_back("decay_factor must be > 0");
  if (alpha < 0 || beta < 0 || gamma < 0) errs.push_back("alpha, beta, gamma must be >= 0");
  if (!(margin > 0)) errs.push_back("margin must be > 0");
  if (!(attack_fraction >= 0 && attack_fraction <= 1)) errs.push_back("attack_fraction must lie in [0,1]");
  if (!errs.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  if (attack_fraction > 0) registry.validate();
}

std::string TrainConfig::fingerprint() const {
  std::ostringstream os;
  os.precision(17);
  os << "arch=" << arch_name(arch) << ";epochs=" << epochs << ";batch=" << batch_primary << '/' << batch_watermark
     << '/' << batch_attacked << ";lr=" << lr << ";decay=" << decay_every << 'x' << decay_factor << ";alpha=" << alpha
     << ";beta=" << beta << ";gamma=" << gamma << ";margin=" << margin << ";p=" << attack_fraction
     << ";sim=" << (sim_scope == SimScope::all ? "all" : "watermark") << ";target=" << target << ";seed=" << seed
     << ";registry=";
  for (size_t i = 0; i < registry.specs.size(); ++i) os << (i ? "|" : "") << registry.specs[i].describe();
  return os.str();
}

double TrainConfig::lr_at(int epoch) const { return lr * std::pow(decay_factor, epoch / decay_every); }

PairList step_pairs(const StepBatch& batch, SimScope scope, SeededRng& rng) {
  const int np = static_cast<int>(batch.primary.size());
  const int nw = static_cast<int>(batch.watermark.size());
  const int n = np + nw + static_cast<int>(batch.attacked.size());
  PairList pairs = random_pairs(n, rng);
  if (scope == SimScope::watermark) {
    PairList keep;
    for (auto pr : pairs)
      if ((pr.first >= np && pr.first < np + nw) || (pr.second >= np && pr.second < np + nw)) keep.push_back(pr);
    pairs = std::move(keep);
  }
  return pairs;
}

template <typename T>
TotalLoss<T> total_loss(const Net<T>& net, const StepBatch& batch, const LossWeights& w, const PairList& pairs) {
  if (batch.primary.empty()) throw ValidationError("total_loss: primary batch is empty");
  std::vector<const ImageU8*> imgs;
  std::vector<int> labels;
  for (const auto* part : {&batch.primary, &batch.watermark, &batch.attacked})
    for (const auto* s : *part) {
      imgs.push_back(&s->image);
      labels.push_back(s->label);
    }
  const int C = net.classes;
  auto pass = net.forward(imgs, true);
  std::vector<T> dlogits(pass.logits.size(), T(0));
  TotalLoss<T> out;

  size_t offset = 0;
  auto segment = [&](size_t count, double weight, double& slot) {
    if (count == 0) return;
    std::vector<T> z(pass.logits.begin() + static_cast<std::ptrdiff_t>(offset * C),
                     pass.logits.begin() + static_cast<std::ptrdiff_t>((offset + count) * C));
    std::vector<int> y(labels.begin() + static_cast<std::ptrdiff_t>(offset),
                       labels.begin() + static_cast<std::ptrdiff_t>(offset + count));
    auto ce = cross_entropy(z, y, C);
    slot = ce.loss;
    if (weight != 0)
      for (size_t j = 0; j < ce.grad.size(); ++j) dlogits[offset * C + j] += T(weight * ce.grad[j]);
    offset += count;
  };
  segment(batch.primary.size(), 1.0, out.parts.pri);
  segment(batch.watermark.size(), w.alpha, out.parts.wm);
  segment(batch.attacked.size(), w.beta, out.parts.attk);

  std::vector<T> dfeat;
  if (!pairs.empty()) {
    auto cl = contrastive_loss(pass.features, kFeatureDim, labels, pairs, w.margin);
    out.parts.sim = cl.loss;
    if (w.gamma != 0) {
      dfeat = std::move(cl.grad);
      for (auto& g : dfeat) g = T(w.gamma * g);
    }
  }
  out.parts.total = out.parts.pri + w.alpha * out.parts.wm + w.beta * out.parts.attk + w.gamma * out.parts.sim;
  out.grads = net.backward(pass, dlogits, dfeat.empty() ? nullptr : &dfeat);
  return out;
}

template TotalLoss<float> total_loss<float>(const Net<float>&, const StepBatch&, const LossWeights&, const PairList&);
template TotalLoss<double> total_loss<double>(const Net<double>&, const StepBatch&, const LossWeights&,
                                              const PairList&);

namespace {

Checkpoint make_checkpoint(const Net<float>& net, const AdamState<float>& st, const TrainConfig& cfg, int epochs) {
  Checkpoint ck;
  ck.net = net;
  ck.adam = st;
  ck.config_text = cfg.fingerprint();
  ck.rng_seed = cfg.seed;
  ck.rng_counter = static_cast<uint64_t>(epochs);
  ck.epochs_done = epochs;
  return ck;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& primary, const Dataset& watermark, const EvalSets& eval,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (primary.empty()) throw ValidationError("train: primary set is empty");
  const int C = primary.num_classes;
  const int side = primary[0].image.height;
  if (!watermark.empty() && watermark.num_classes != C) throw ValidationError("train: D_w class count differs");
  if (cfg.target < 0 || cfg.target >= C) throw ValidationError("train: target outside [0,C)");

  SeededRng root(cfg.seed);
  Net<float> net(cfg.arch, C, side);
  SeededRng init = root.split(1);
  net.init_he_uniform(init);
  AdamState<float> st = adam_init(net, cfg.lr);
  AdamConfig acfg;
  LossWeights lw{cfg.alpha, cfg.beta, cfg.gamma, cfg.margin, cfg.sim_scope};

  TrainResult res;
  Checkpoint last_good = make_checkpoint(net, st, cfg, 0);
  const size_t BP = static_cast<size_t>(cfg.batch_primary);
  const size_t BW = watermark.empty() ? 0 : static_cast<size_t>(cfg.batch_watermark);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    st.lr = cfg.lr_at(epoch);
    Dataset attacked;
    attacked.num_classes = C;
    if (cfg.attack_fraction > 0) {
      uint64_t eseed = root.split(1000 + static_cast<uint64_t>(epoch)).next_u64();
      attacked = build_attacked_epoch_set(primary, watermark, cfg.attack_fraction, cfg.registry, eseed);
    }
    const size_t BA = attacked.empty() ? 0 : static_cast<size_t>(cfg.batch_attacked);
    SeededRng er = root.split(2000 + static_cast<uint64_t>(epoch));
    auto pp = er.permutation(primary.size());
    auto wp = er.permutation(watermark.size());
    auto ap = er.permutation(attacked.size());
    SeededRng pair_rng = er.split(7);

    const size_t steps = (primary.size() + BP - 1) / BP;
    LossBreakdown acc_loss;
    for (size_t s = 0; s < steps; ++s) {
      StepBatch b;
      for (size_t j = s * BP; j < std::min(primary.size(), (s + 1) * BP); ++j) b.primary.push_back(&primary[pp[j]]);
      for (size_t j = 0; j < BW; ++j) b.watermark.push_back(&watermark[wp[(s * BW + j) % watermark.size()]]);
      for (size_t j = 0; j < BA; ++j) b.attacked.push_back(&attacked[ap[(s * BA + j) % attacked.size()]]);
      PairList pairs = cfg.gamma > 0 ? step_pairs(b, cfg.sim_scope, pair_rng) : PairList{};
      auto tl = total_loss(net, b, lw, pairs);
      if (!std::isfinite(tl.parts.total))
        throw TrainingDiverged("loss became non-finite at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(s),
                               last_good);
      try {
        adam_step(net, tl.grads, st, acfg);
      } catch (const std::runtime_error& e) {
        throw TrainingDiverged(std::string(e.what()) + " at epoch " + std::to_string(epoch), last_good);
      }
      acc_loss.total += tl.parts.total;
      acc_loss.pri += tl.parts.pri;
      acc_loss.wm += tl.parts.wm;
      acc_loss.attk += tl.parts.attk;
      acc_loss.sim += tl.parts.sim;
    }
    EpochLog log;
    log.epoch = epoch + 1;
    double n = static_cast<double>(steps);
    log.loss = {acc_loss.total / n, acc_loss.pri / n, acc_loss.wm / n, acc_loss.attk / n, acc_loss.sim / n};
    log.lr = st.lr;
    NetOracle oracle(net);
    if (eval.test && !eval.test->empty()) log.acc = accuracy(oracle, *eval.test);
    if (eval.verification && !eval.verification->empty()) log.wsr = wsr(oracle, *eval.verification, cfg.target);
    res.log.push_back(log);
    last_good = make_checkpoint(net, st, cfg, epoch + 1);
    if (on_epoch) on_epoch(log);
  }
  res.checkpoint = make_checkpoint(net, st, cfg, cfg.epochs);
  return res;
}

Table epoch_log_table(const std::vector<EpochLog>& log) {
  Table t;
  t.header = {"epoch", "L", "L_pri", "L_wm", "L_attk", "L_sim", "acc", "wsr", "lr"};
  for (const auto& e : log)
    t.add({std::to_string(e.epoch), fmt_num(e.loss.total, 6), fmt_num(e.loss.pri, 6), fmt_num(e.loss.wm, 6),
           fmt_num(e.loss.attk, 6), fmt_num(e.loss.sim, 6), fmt_num(e.acc, 4), fmt_num(e.wsr, 4), fmt_num(e.lr, 8)});
  return t;
}

Table feature_table(const Net<float>& net, const Dataset& ds) {
  Table t;
  t.header = {"index", "label"};
  for (int j = 0; j < kFeatureDim; ++j) t.header.push_back("f" + std::to_string(j));
  auto f = extract_features(net, ds);
  for (size_t i = 0; i < ds.size(); ++i) {
    std::vector<std::string> row = {std::to_string(i), std::to_string(ds[i].label)};
    for (int j = 0; j < kFeatureDim; ++j) row.push_back(fmt_num(f[i * kFeatureDim + j], 6));
    t.add(std::move(row));
  }
  return t;
}

double mean_distance_to_centroid(const Net<float>& net, const Dataset& samples, const Dataset& anchor) {
  if (samples.empty() || anchor.empty()) throw ValidationError("mean_distance_to_centroid: empty set");
  auto fa = extract_features(net, anchor);
  std::vector<double> centroid(kFeatureDim, 0.0);
  for (size_t i = 0; i < anchor.size(); ++i)
    for (int j = 0; j < kFeatureDim; ++j) centroid[j] += fa[i * kFeatureDim + j];
  for (auto& c : centroid) c /= static_cast<double>(anchor.size());
  auto fs = extract_features(net, samples);
  double total = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    double d2 = 0;
    for (int j = 0; j < kFeatureDim; ++j) {
      double d = fs[i * kFeatureDim + j] - centroid[j];
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace wmark
