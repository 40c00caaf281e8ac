#include "wmark/lab.hpp"

#include <algorithm>
#include <cmath>

#include "wmark/codec.hpp"

namespace wmark {

namespace {

bool is_weight(const ParamTensor<float>& p) { return p.shape.size() > 1; }

}  // namespace

size_t weight_count(const Net<float>& net) {
  size_t n = 0;
  for (const auto& p : net.params)
    if (is_weight(p)) n += p.data.size();
  return n;
}

size_t zero_weight_count(const Net<float>& net) {
  size_t n = 0;
  for (const auto& p : net.params)
    if (is_weight(p)) n += static_cast<size_t>(std::count(p.data.begin(), p.data.end(), 0.0f));
  return n;
}

Net<float> prune(const Net<float>& net, double rate) {
  if (!(rate >= 0 && rate <= 1)) throw ValidationError("prune rate must lie in [0,1]");
  Net<float> out = net;
  struct Ref {
    float mag;
    uint32_t tensor;
    uint32_t index;
  };
  std::vector<Ref> refs;
  for (uint32_t t = 0; t < out.params.size(); ++t)
    if (is_weight(out.params[t]))
      for (uint32_t i = 0; i < out.params[t].data.size(); ++i) refs.push_back({std::abs(out.params[t].data[i]), t, i});
  auto k = static_cast<size_t>(std::llround(rate * static_cast<double>(refs.size())));
  if (k == 0) return out;
  auto less = [](const Ref& a, const Ref& b) {
    if (a.mag != b.mag) return a.mag < b.mag;
    if (a.tensor != b.tensor) return a.tensor < b.tensor;
    return a.index < b.index;
  };
  if (k < refs.size()) std::nth_element(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(k), refs.end(), less);
  for (size_t j = 0; j < k; ++j) out.params[refs[j].tensor].data[refs[j].index] = 0.0f;
  return out;
}

Net<float> quantize_weights(const Net<float>& net, int bits) {
  if (bits < 1 || bits > 16) throw ValidationError("quantize bits must lie in [1,16]");
  Net<float> out = net;
  const double levels = std::ldexp(1.0, bits) - 1;  // index range [0, 2^bits - 1]
  for (auto& p : out.params) {
    float mx = 0;
    for (float w : p.data) mx = std::max(mx, std::abs(w));
    if (mx == 0) continue;
    const double step = 2.0 * mx / levels;
    for (auto& w : p.data) {
      double idx = std::clamp(std::floor((w + static_cast<double>(mx)) / step + 0.5), 0.0, levels);
      if (idx == 0) w = -mx;
      else if (idx == levels) w = mx;
      else w = static_cast<float>(-static_cast<double>(mx) + idx * step);
    }
  }
  return out;
}

Net<float> finetune_last_layer(const Net<float>& net, const Dataset& data, const FinetuneConfig& cfg) {
  if (!data.empty() && data.num_classes != net.classes) throw ValidationError("finetune: label space differs from C");
  Net<float> out = net;
  if (cfg.epochs <= 0 || data.empty()) return out;
  auto feats = extract_features(net, data);
  const int C = net.classes;
  AdamState<float> st = adam_init(out, cfg.lr);
  AdamConfig acfg;
  std::vector<bool> mask(out.params.size(), false);
  mask[Net<float>::kFc2W] = mask[Net<float>::kFc2B] = true;
  SeededRng rng(cfg.seed);
  const size_t n = data.size(), B = static_cast<size_t>(cfg.batch);
  for (int e = 0; e < cfg.epochs; ++e) {
    auto perm = rng.permutation(n);
    for (size_t s = 0; s < n; s += B) {
      size_t nb = std::min(B, n - s);
      std::vector<float> h(nb * kFeatureDim);
      std::vector<int> y(nb);
      for (size_t j = 0; j < nb; ++j) {
        std::copy_n(&feats[perm[s + j] * kFeatureDim], kFeatureDim, &h[j * kFeatureDim]);
        y[j] = data[perm[s + j]].label;
      }
      auto logits = out.head(h, static_cast<int>(nb));
      auto ce = cross_entropy(logits, y, C);
      Grads<float> g = out.zero_grads();
      auto& gw = g[Net<float>::kFc2W];
      auto& gb = g[Net<float>::kFc2B];
      for (size_t j = 0; j < nb; ++j)
        for (int c = 0; c < C; ++c) {
          float d = ce.grad[j * C + c];
          gb[c] += d;
          for (int f = 0; f < kFeatureDim; ++f) gw[static_cast<size_t>(c) * kFeatureDim + f] += d * h[j * kFeatureDim + f];
        }
      adam_step(out, g, st, acfg, &mask);
    }
  }
  return out;
}

const char* distill_mode_name(DistillMode m) { return m == DistillMode::soft ? "soft" : "hard"; }

Net<float> distill_extract(PredictionOracle& victim, const Dataset& queries, DistillMode mode,
                           const DistillConfig& cfg) {
  if (queries.empty()) throw ValidationError("distill: empty query set");
  const int C = victim.num_classes();
  const size_t n = queries.size();
  std::vector<std::vector<double>> targets;
  std::vector<const ImageU8*> ptrs;
  for (size_t i = 0; i < n; i += 256) {
    ptrs.clear();
    for (size_t j = i; j < std::min(n, i + 256); ++j) ptrs.push_back(&queries[j].image);
    auto p = mode == DistillMode::soft ? victim.probabilities(ptrs) : std::vector<std::vector<double>>{};
    if (mode == DistillMode::hard) {
      for (int lbl : victim.predict(ptrs)) {
        std::vector<double> row(C, 0.0);
        row[lbl] = 1.0;
        p.push_back(std::move(row));
      }
    }
    targets.insert(targets.end(), p.begin(), p.end());
  }
  std::vector<int> hard(n);
  for (size_t i = 0; i < n; ++i) hard[i] = argmax(targets[i].data(), C);

  SeededRng rng(cfg.seed);
  Net<float> s(cfg.arch, C, queries[0].image.height);
  SeededRng init = rng.split(1);
  s.init_he_uniform(init);
  AdamState<float> st = adam_init(s, cfg.lr);
  AdamConfig acfg;
  const size_t B = static_cast<size_t>(cfg.batch);
  for (int e = 0; e < cfg.epochs; ++e) {
    st.lr = cfg.lr * std::pow(cfg.decay_factor, e / cfg.decay_every);
    auto perm = rng.permutation(n);
    for (size_t i = 0; i < n; i += B) {
      std::vector<const ImageU8*> imgs;
      std::vector<std::vector<double>> tgt;
      std::vector<int> lbl;
      for (size_t j = i; j < std::min(n, i + B); ++j) {
        imgs.push_back(&queries[perm[j]].image);
        tgt.push_back(targets[perm[j]]);
        lbl.push_back(hard[perm[j]]);
      }
      auto pass = s.forward(imgs, true);
      auto lg = mode == DistillMode::soft ? soft_cross_entropy(pass.logits, tgt, C) : cross_entropy(pass.logits, lbl, C);
      adam_step(s, s.backward(pass, lg.grad, nullptr), st, acfg);
    }
  }
  return s;
}

SweepOptions SweepOptions::defaults() {
  SweepOptions o;
  o.magnitudes = {
      {AttackKind::crop, {0.6, 0.7, 0.8, 0.9}},
      {AttackKind::rotate, {5, 10, 15, 30}},
      {AttackKind::scale, {0.5, 0.7, 1.3, 1.5}},
      {AttackKind::gaussian_noise, {2, 5, 10, 20}},
      {AttackKind::gaussian_blur, {0.5, 1.0, 1.5, 2.0}},
      {AttackKind::brightness, {0.5, 0.7, 1.3, 1.5}},
      {AttackKind::image_quantize, {3, 4, 5, 6}},
      {AttackKind::color_quantize, {8, 16, 32, 64}},
  };
  o.jpeg_factors = {50, 70, 90};
  return o;
}

std::vector<AttackOutcome> evasion_sweep(const Net<float>& net, const Dataset& ver, int target,
                                         const AttackRegistry& registry, const SweepOptions& opts) {
  NetOracle oracle(net);
  const double wsr0 = wsr(oracle, ver, target);
  const double acc0 = opts.test ? accuracy(oracle, *opts.test) : std::nan("");
  std::vector<AttackOutcome> rows;
  uint64_t stream = 0;
  auto run = [&](const AttackSpec& spec, const std::string& label) {
    AttackOutcome o;
    o.attack = attack_name(spec.kind);
    o.param = label;
    o.acc_before = acc0;
    o.wsr_before = wsr0;
    o.acc_after = std::nan("");
    ++stream;
    try {
      Dataset v = apply_attack_dataset(spec, ver, opts.seed * 1000003 + stream, registry.codecs);
      o.wsr_after = wsr(oracle, v, target);
      if (opts.test) {
        Dataset t = apply_attack_dataset(spec, *opts.test, opts.seed * 1000003 + stream + 500000, registry.codecs);
        o.acc_after = accuracy(oracle, t);
      }
    } catch (const CodecUnavailable& e) {
      o.skipped = true;
      o.note = e.what();
      o.wsr_after = std::nan("");
    }
    rows.push_back(o);
  };
  for (const auto& spec : registry.specs) {
    run(spec, "default " + spec.describe().substr(spec.describe().find(':') + 1));
    auto it = opts.magnitudes.find(spec.kind);
    if (it != opts.magnitudes.end())
      for (double m : it->second) run(spec.fixed(m), fmt_num(m, 2));
  }
  for (int qf : opts.jpeg_factors) run(default_spec(AttackKind::jpeg).fixed(qf), "QF" + std::to_string(qf));
  return rows;
}

std::vector<ForgeryOutcome> false_trigger_audit(const Net<float>& net, const Dataset& clean_pool, int target,
                                                int factor, const ExternalCodecs& codecs, uint64_t seed) {
  if (clean_pool.empty()) throw ValidationError("false_trigger_audit: empty clean pool");
  NetOracle oracle(net);
  std::vector<ForgeryOutcome> rows;
  auto add = [&](const std::string& name, const std::string& recipe, const Dataset& forged) {
    rows.push_back({name, recipe, wsr(oracle, forged, target), forged.size(), false, ""});
  };
  add("clean", "none", clean_pool);
  add("jpeg", "QF" + std::to_string(factor), compress_dataset(clean_pool, factor));
  uint64_t stream = 0;
  std::vector<AttackKind> kinds = {AttackKind::gaussian_noise, AttackKind::gaussian_blur, AttackKind::image_quantize,
                                   AttackKind::color_quantize, AttackKind::jpeg2000, AttackKind::webp};
  for (auto k : kinds) {
    AttackSpec spec = default_spec(k);
    ++stream;
    try {
      add(attack_name(k), spec.describe(), apply_attack_dataset(spec, clean_pool, seed * 7919 + stream, codecs));
    } catch (const CodecUnavailable& e) {
      rows.push_back({attack_name(k), spec.describe(), std::nan(""), 0, true, e.what()});
    }
  }
  return rows;
}

Table outcome_table(const std::vector<AttackOutcome>& rows) {
  Table t;
  t.header = {"attack", "param", "acc_before", "acc_after", "wsr_before", "wsr_after", "status"};
  auto num = [](double v) { return std::isnan(v) ? std::string("n/a") : fmt_num(v, 4); };
  for (const auto& r : rows)
    t.add({r.attack, r.param, num(r.acc_before), num(r.acc_after), num(r.wsr_before), num(r.wsr_after),
           r.skipped ? "skipped: " + r.note : "ok"});
  return t;
}

Table forgery_table(const std::vector<ForgeryOutcome>& rows) {
  Table t;
  t.header = {"forgery", "recipe", "count", "wsr", "status"};
  for (const auto& r : rows)
    t.add({r.forgery, r.recipe, std::to_string(r.count), r.skipped ? "n/a" : fmt_num(r.wsr, 4),
           r.skipped ? "skipped: " + r.note : "ok"});
  return t;
}

}  // namespace wmark
