// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//
//   wmark_acceptance [--cache DIR] [--only 1,2,...]
//
// --cache keeps trained checkpoints between invocations (training is
// bit-deterministic, so a cached checkpoint equals a fresh one).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "wmark/config.hpp"

namespace fs = std::filesystem;
using namespace wmark;

namespace {

// ---- pinned tolerances ----
constexpr double kDctTol = 1e-6;
constexpr int kDctBlocks = 1000;
constexpr double kPsnrFloor = 38.0;
constexpr double kSsimFloor = 0.98;
constexpr size_t kCovertMin = 100;
constexpr double kWsrFloor = 0.95;
constexpr double kAccDropMax = 0.03;
constexpr double kRemovalFloor = 0.90;
constexpr double kPruneRate = 0.5;
constexpr int kMinBits = 4;
constexpr int kMaxBits = 8;
constexpr double kDistillFloor = 0.85;
constexpr int kDistillSeeds = 3;
constexpr double kEvasionFloor = 0.90;
constexpr double kJpegEvasionBand = 0.02;
constexpr double kForgedFloor = 0.99;
constexpr double kOtherForgeryCeil = 0.25;
constexpr double kCleanBand = 0.05;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradAbsFloor = 1e-7;
constexpr double kFdStep = 1e-5;
constexpr int kEnumMaxN = 20;

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int p = 4) {
  std::ostringstream os;
  os.precision(p);
  os << std::fixed << v;
  return os.str();
}

class Desk {
 public:
  explicit Desk(std::optional<fs::path> cache) : cache_(std::move(cache)) {
    cfg_.validate();
    source_ = load_source(cfg_);
    exp_ = prepare_experiment(cfg_, source_);
  }

  const RunConfig& cfg() const { return cfg_; }
  const Experiment& exp() const { return exp_; }

  const Net<float>& watermarked() { return model(wm_, "watermarked", cfg_.train_config(), false); }
  const Net<float>& control() { return model(ctrl_, "control", cfg_.train_config(), true); }
  const Net<float>& no_sim() {
    TrainConfig t = cfg_.train_config();
    t.gamma = 0;
    return model(nosim_, "gamma0", t, false);
  }

 private:
  const Net<float>& model(std::optional<Net<float>>& slot, const std::string& name, const TrainConfig& tc,
                          bool is_control) {
    if (slot) return *slot;
    fs::path file;
    if (cache_) {
      fs::create_directories(*cache_);
      std::string key = tc.fingerprint() + "|" + cfg_.canonical_text() + "|" + (is_control ? "control" : "wm");
      file = *cache_ / (name + "-" + sha256_hex(key).substr(0, 16) + ".bin");
      if (fs::exists(file)) {
        std::cout << "  (loaded cached " << name << " model)\n";
        slot = load_checkpoint(file).net;
        return *slot;
      }
    }
    auto t0 = std::chrono::steady_clock::now();
    Dataset empty;
    empty.num_classes = cfg_.classes;
    EvalSets ev{&exp_.test, &exp_.split.verification};
    auto res = is_control ? train(tc, exp_.train, empty, ev) : train(tc, exp_.split.primary, exp_.split.watermark, ev);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "  (trained " << name << " model: " << tc.epochs << " epochs in " << fmt(secs, 0) << " s)\n";
    if (cache_) save_checkpoint(res.checkpoint, file);
    slot = res.checkpoint.net;
    return *slot;
  }

  RunConfig cfg_;
  Dataset source_;
  Experiment exp_;
  std::optional<fs::path> cache_;
  std::optional<Net<float>> wm_, ctrl_, nosim_;
};

// 1. dct/idct against direct sums; quantize_dequantize idempotent.
Outcome codec_fidelity() {
  SeededRng rng(101);
  double max_fwd = 0, max_inv = 0, max_rt = 0;
  int idem_fail = 0;
  for (int b = 0; b < kDctBlocks; ++b) {
    CoeffBlock x;
    for (auto& v : x) v = rng.uniform(-128, 127);
    std::array<double, 64> xa;
    std::copy(x.begin(), x.end(), xa.begin());
    auto c = dct8x8(x);
    auto ref = oracle::dct_direct(xa);
    auto back = idct8x8(c);
    CoeffBlock cref;
    std::copy(ref.begin(), ref.end(), cref.begin());
    auto inv_ref = oracle::idct_direct(ref);
    auto inv = idct8x8(cref);
    for (int i = 0; i < 64; ++i) {
      max_fwd = std::max(max_fwd, std::abs(c[i] - ref[i]));
      max_inv = std::max(max_inv, std::abs(inv[i] - inv_ref[i]));
      max_rt = std::max(max_rt, std::abs(back[i] - x[i]));
    }
    int factor = 1 + static_cast<int>(rng.below(100));
    auto table = scale_quant_table(b % 2 ? kLumaTable : kChromaTable, factor);
    auto q1 = quantize_dequantize(c, table);
    auto q2 = quantize_dequantize(q1, table);
    if (q1 != q2) ++idem_fail;
  }
  Outcome o;
  o.pass = max_fwd <= kDctTol && max_inv <= kDctTol && max_rt <= kDctTol && idem_fail == 0;
  o.detail = std::to_string(kDctBlocks) + " blocks: max|dct-ref|=" + sci(max_fwd) + " max|idct-ref|=" + sci(max_inv) +
             " max roundtrip=" + sci(max_rt) + " (tol " + sci(kDctTol) + "), idempotence failures=" + std::to_string(idem_fail);
  return o;
}

// 2. Table scaling.
Outcome table_scaling() {
  bool f50 = scale_quant_table(kLumaTable, 50) == kLumaTable && scale_quant_table(kChromaTable, 50) == kChromaTable;
  int dc90 = scale_quant_table(kLumaTable, 90)[0];
  int expected_dc = static_cast<int>(std::lround(0.2 * 16));
  bool mono = true;
  for (const auto* base : {&kLumaTable, &kChromaTable})
    for (int f = 1; f < 100; ++f) {
      auto a = scale_quant_table(*base, f), b = scale_quant_table(*base, f + 1);
      for (int i = 0; i < 64; ++i)
        if (b[i] > a[i]) mono = false;
    }
  Outcome o;
  o.pass = f50 && dc90 == expected_dc && mono;
  o.detail = std::string("F50 reproduces base tables: ") + (f50 ? "yes" : "no") + "; F90 luma DC=" +
             std::to_string(dc90) + " (expected " + std::to_string(expected_dc) + "); non-increasing in F: " +
             (mono ? "yes" : "no");
  return o;
}

// 3. Covertness of D_v against its clean sources.
Outcome covertness_check(Desk& d) {
  const auto& s = d.exp().split;
  auto r = covertness(s.verification_source, s.verification);
  Outcome o;
  o.pass = r.count >= kCovertMin && r.mean_psnr >= kPsnrFloor && r.mean_ssim >= kSsimFloor;
  o.detail = std::to_string(r.count) + " images: mean PSNR=" + fmt(r.mean_psnr, 2) + " dB (floor " +
             fmt(kPsnrFloor, 1) + "), mean SSIM=" + fmt(r.mean_ssim) + " (floor " + fmt(kSsimFloor, 2) +
             "), identical=" + std::to_string(r.identical);
  return o;
}

// 4. Effectiveness and harmlessness.
Outcome effectiveness(Desk& d) {
  NetOracle wm(d.watermarked()), ctrl(d.control());
  const auto& e = d.exp();
  double w = wsr(wm, e.split.verification, d.cfg().target);
  double acc = accuracy(wm, e.test), acc_c = accuracy(ctrl, e.test);
  Outcome o;
  o.pass = w >= kWsrFloor && std::abs(acc_c - acc) <= kAccDropMax;
  o.detail = "WSR=" + fmt(w) + " (floor " + fmt(kWsrFloor, 2) + "), acc=" + fmt(acc) + " control acc=" + fmt(acc_c) +
             " |diff|=" + fmt(std::abs(acc_c - acc)) + " (max " + fmt(kAccDropMax, 2) + ")";
  return o;
}

// 5. Removal robustness.
Outcome removal(Desk& d) {
  const auto& e = d.exp();
  const int target = d.cfg().target;
  auto w_of = [&](const Net<float>& n) {
    NetOracle o(n);
    return wsr(o, e.split.verification, target);
  };
  const auto& net = d.watermarked();
  double pruned = w_of(prune(net, kPruneRate));
  SeededRng rng(d.cfg().finetune.seed);
  auto n_ft = static_cast<size_t>(std::llround(d.cfg().finetune_fraction * static_cast<double>(e.train.size())));
  Dataset clean = sample_rand(e.train, n_ft, rng).selected;
  double tuned = w_of(finetune_last_layer(net, clean, d.cfg().finetune));
  double qmin = 1;
  std::string qs;
  for (int bits = kMinBits; bits <= kMaxBits; ++bits) {
    double q = w_of(quantize_weights(net, bits));
    qmin = std::min(qmin, q);
    qs += (bits > kMinBits ? "," : "") + std::to_string(bits) + "b=" + fmt(q, 3);
  }
  Outcome o;
  o.pass = pruned >= kRemovalFloor && tuned >= kRemovalFloor && qmin >= kRemovalFloor;
  o.detail = "prune" + fmt(kPruneRate * 100, 0) + "% WSR=" + fmt(pruned) + ", finetune(" + std::to_string(clean.size()) +
             " clean, " + std::to_string(d.cfg().finetune.epochs) + " ep) WSR=" + fmt(tuned) + ", quantize " + qs +
             " (floor " + fmt(kRemovalFloor, 2) + ")";
  return o;
}

// 6. Extraction robustness.
Outcome extraction(Desk& d) {
  const auto& e = d.exp();
  NetOracle victim(d.watermarked());
  double soft_sum = 0;
  bool ordered = true;
  std::string per;
  for (int s = 0; s < kDistillSeeds; ++s) {
    DistillConfig dc = d.cfg().distill;
    dc.seed = d.cfg().distill.seed + static_cast<uint64_t>(s);
    dc.arch = d.cfg().train.arch;
    auto soft = distill_extract(victim, e.train, DistillMode::soft, dc);
    auto hard = distill_extract(victim, e.train, DistillMode::hard, dc);
    NetOracle so(soft), ho(hard);
    double ws = wsr(so, e.split.verification, d.cfg().target);
    double wh = wsr(ho, e.split.verification, d.cfg().target);
    soft_sum += ws;
    if (wh > ws) ordered = false;
    per += (s ? "; " : "") + std::string("seed ") + std::to_string(dc.seed) + ": soft=" + fmt(ws, 3) +
           " hard=" + fmt(wh, 3);
  }
  double soft_mean = soft_sum / kDistillSeeds;
  Outcome o;
  o.pass = soft_mean >= kDistillFloor && ordered;
  o.detail = "mean soft WSR=" + fmt(soft_mean) + " (floor " + fmt(kDistillFloor, 2) + "), hard<=soft on every seed: " +
             (ordered ? "yes" : "no") + " [" + per + "]";
  return o;
}

// 7. Evasion robustness at default magnitudes.
Outcome evasion(Desk& d) {
  SweepOptions opts;
  opts.jpeg_factors = {d.cfg().factor};
  auto rows = evasion_sweep(d.watermarked(), d.exp().split.verification, d.cfg().target, default_registry(), opts);
  bool ok = true;
  std::string parts;
  for (const auto& r : rows) {
    if (r.skipped) continue;
    bool is_jpeg = r.attack == "jpeg";
    bool row_ok = is_jpeg ? std::abs(r.wsr_after - r.wsr_before) <= kJpegEvasionBand : r.wsr_after >= kEvasionFloor;
    ok = ok && row_ok;
    parts += (parts.empty() ? "" : ", ") + r.attack + "=" + fmt(r.wsr_after, 3) + (row_ok ? "" : "!");
  }
  Outcome o;
  o.pass = ok;
  o.detail = "baseline " + fmt(rows.empty() ? 0 : rows[0].wsr_before, 3) + "; " + parts + " (floor " +
             fmt(kEvasionFloor, 2) + ", jpeg band " + fmt(kJpegEvasionBand, 2) + ", ! = below)";
  return o;
}

// 8. False-trigger uniqueness.
Outcome false_trigger(Desk& d) {
  auto rows = false_trigger_audit(d.watermarked(), d.exp().split.verification_source, d.cfg().target, d.cfg().factor);
  const double chance = 1.0 / d.cfg().classes;
  bool ok = true;
  std::string parts;
  for (const auto& r : rows) {
    if (r.skipped) continue;
    bool row_ok;
    if (r.forgery == "jpeg")
      row_ok = r.wsr >= kForgedFloor;
    else if (r.forgery == "clean")
      row_ok = std::abs(r.wsr - chance) <= kCleanBand;
    else
      row_ok = r.wsr <= kOtherForgeryCeil;
    ok = ok && row_ok;
    parts += (parts.empty() ? "" : ", ") + r.forgery + "=" + fmt(r.wsr, 3) + (row_ok ? "" : "!");
  }
  Outcome o;
  o.pass = ok;
  o.detail = parts + " (jpeg >= " + fmt(kForgedFloor, 2) + ", others <= " + fmt(kOtherForgeryCeil, 2) +
             ", clean within " + fmt(kCleanBand, 2) + " of " + fmt(chance, 2) + ")";
  return o;
}

// 9. Analytic vs central finite-difference gradients in double precision.
Outcome gradients() {
  const int C = 3, side = 8;
  SeededRng rng(909);
  Net<double> net(Arch::cnn2hp, C, side);
  SeededRng init = rng.split(1);
  net.init_he_uniform(init);
  std::vector<LabeledSample> samples;
  for (int i = 0; i < 8; ++i) {
    LabeledSample s;
    s.image = ImageU8(side, side);
    for (auto& v : s.image.data) v = static_cast<uint8_t>(rng.below(256));
    s.label = static_cast<int>(rng.below(C));
    samples.push_back(std::move(s));
  }
  StepBatch batch;
  for (int i = 0; i < 4; ++i) batch.primary.push_back(&samples[i]);
  for (int i = 4; i < 6; ++i) batch.watermark.push_back(&samples[i]);
  for (int i = 6; i < 8; ++i) batch.attacked.push_back(&samples[i]);
  SeededRng pr = rng.split(2);
  PairList pairs = random_pairs(8, pr);

  struct Term {
    const char* name;
    LossWeights w;
    bool with_pairs;
  };
  std::vector<Term> terms = {
      {"L_pri", {0, 0, 0, 1, SimScope::all}, false},
      {"L_pri+L_wm", {1, 0, 0, 1, SimScope::all}, false},
      {"L_pri+L_attk", {0, 1, 0, 1, SimScope::all}, false},
      {"L_pri+L_sim", {0, 0, 1, 4, SimScope::all}, true},
      {"L_total", {1, 1, 0.1, 1, SimScope::all}, true},
  };
  double worst = 0;
  std::string worst_at;
  int checked = 0;
  auto check = [&](double a, double n, const std::string& where) {
    double excess = std::abs(a - n) / (kGradRelTol * std::max(std::abs(a), std::abs(n)) + kGradAbsFloor);
    if (excess > worst) {
      worst = excess;
      worst_at = where;
    }
    ++checked;
  };
  for (const auto& t : terms) {
    const PairList& pl = t.with_pairs ? pairs : PairList{};
    auto g = total_loss(net, batch, t.w, pl).grads;
    for (size_t k = 0; k < net.params.size(); ++k) {
      auto& data = net.params[k].data;
      size_t stride = std::max<size_t>(1, data.size() / 12);
      for (size_t i = 0; i < data.size(); i += stride) {
        double keep = data[i];
        data[i] = keep + kFdStep;
        double up = total_loss(net, batch, t.w, pl).parts.total;
        data[i] = keep - kFdStep;
        double dn = total_loss(net, batch, t.w, pl).parts.total;
        data[i] = keep;
        check(g[k][i], (up - dn) / (2 * kFdStep), std::string(t.name) + " " + net.params[k].name + "[" +
                                                     std::to_string(i) + "]");
      }
    }
  }
  // The contrastive term alone, as a function of the features.
  std::vector<double> feats(8 * kFeatureDim);
  for (auto& f : feats) f = rng.uniform(0, 0.3);
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  auto cl = contrastive_loss(feats, kFeatureDim, labels, pairs, 1.0);
  for (size_t i = 0; i < feats.size(); ++i) {
    double keep = feats[i];
    feats[i] = keep + kFdStep;
    double up = contrastive_loss(feats, kFeatureDim, labels, pairs, 1.0).loss;
    feats[i] = keep - kFdStep;
    double dn = contrastive_loss(feats, kFeatureDim, labels, pairs, 1.0).loss;
    feats[i] = keep;
    check(cl.grad[i], (up - dn) / (2 * kFdStep), "contrastive feature[" + std::to_string(i) + "]");
  }
  Outcome o;
  o.pass = worst <= 1.0;
  o.detail = std::to_string(checked) + " partials over L_pri, L_wm, L_attk, L_sim, total and the contrastive term; "
             "worst |a-n|/(" + fmt(kGradRelTol, 3) + "*max|.|+" + sci(kGradAbsFloor) + ")=" + fmt(worst, 3) +
             " at " + worst_at + " (pass <= 1)";
  return o;
}

// 10. Similarity-loss effect on feature distance to the clean target centroid.
Outcome similarity_effect(Desk& d) {
  const auto& e = d.exp();
  const int target = d.cfg().target;
  std::vector<size_t> idx;
  for (size_t i = 0; i < e.test.size(); ++i)
    if (e.test[i].label == target) idx.push_back(i);
  Dataset anchor = take(e.test, idx);
  double with = mean_distance_to_centroid(d.watermarked(), e.split.watermark, anchor);
  double without = mean_distance_to_centroid(d.no_sim(), e.split.watermark, anchor);
  double with_v = mean_distance_to_centroid(d.watermarked(), e.split.verification, anchor);
  double without_v = mean_distance_to_centroid(d.no_sim(), e.split.verification, anchor);
  Outcome o;
  o.pass = with < without;
  o.detail = "D_w mean distance to clean target centroid: gamma=0.1 " + fmt(with) + " vs gamma=0 " + fmt(without) +
             " (" + std::to_string(anchor.size()) + " anchor samples; D_v for reference: " + fmt(with_v) + " vs " +
             fmt(without_v) + ")";
  return o;
}

// 11. Threshold against exhaustive enumeration; end-to-end verification.
Outcome verification_stats(Desk& d) {
  int mismatches = 0, cases = 0;
  for (int n = 1; n <= kEnumMaxN; ++n)
    for (int C : {2, 3, 5, 10})
      for (double alpha : {0.3, 0.05, 1e-2, 1e-3, 1e-6}) {
        ++cases;
        int ref = oracle::threshold_enumerated(n, 1.0L / C, alpha);
        int got = -1;
        try {
          got = threshold_count(n, C, alpha);
        } catch (const InsufficientQueries&) {
          got = -1;
        }
        if (got != ref) ++mismatches;
      }
  auto own = verify_ownership(*std::make_unique<NetOracle>(d.watermarked()), d.exp().split.verification,
                              d.cfg().target, -1, d.cfg().verify);
  NetOracle ctrl(d.control());
  auto other = verify_ownership(ctrl, d.exp().split.verification, d.cfg().target, -1, d.cfg().verify);
  Outcome o;
  o.pass = mismatches == 0 && own.decision == Decision::owned && other.decision == Decision::not_owned;
  o.detail = std::to_string(cases) + " (n<=" + std::to_string(kEnumMaxN) + ", C, alpha) cases, mismatches=" +
             std::to_string(mismatches) + "; tau=" + fmt(own.tau, 3) + " watermarked: " + decision_name(own.decision) +
             " (WSR " + fmt(own.wsr, 3) + ", p=" + sci(own.p_value) + "), control: " + decision_name(other.decision) + " (WSR " + fmt(other.wsr, 3) + ")";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::optional<fs::path> cache;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--cache" && i + 1 < argc) {
      cache = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: " << argv[0] << " [--cache DIR] [--only 1,2,...]\n";
      return 2;
    }
  }

  std::optional<Desk> desk;
  auto lazy = [&]() -> Desk& {
    if (!desk) desk.emplace(cache);
    return *desk;
  };

  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  std::vector<Entry> entries = {
      {1, "codec fidelity", [] { return codec_fidelity(); }},
      {2, "table scaling", [] { return table_scaling(); }},
      {3, "covertness", [&] { return covertness_check(lazy()); }},
      {4, "effectiveness and harmlessness", [&] { return effectiveness(lazy()); }},
      {5, "removal robustness", [&] { return removal(lazy()); }},
      {6, "extraction robustness", [&] { return extraction(lazy()); }},
      {7, "evasion robustness", [&] { return evasion(lazy()); }},
      {8, "false-trigger uniqueness", [&] { return false_trigger(lazy()); }},
      {9, "gradient correctness", [] { return gradients(); }},
      {10, "similarity-loss effect", [&] { return similarity_effect(lazy()); }},
      {11, "verification statistics", [&] { return verification_stats(lazy()); }},
  };

  int failed = 0, ran = 0;
  for (const auto& e : entries) {
    if (!only.empty() && !only.count(e.id)) continue;
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++ran;
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << e.id << " (" << e.name << "): " << o.detail << " ["
              << fmt(secs, 1) << " s]" << std::endl;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
