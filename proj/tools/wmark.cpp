#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "wmark/config.hpp"

namespace fs = std::filesystem;
using namespace wmark;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitNotOwned = 3;

struct Common {
  std::vector<std::string> configs;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  RunConfig resolve() const {
    std::map<std::string, std::string> over;
    for (const auto& s : sets) {
      auto eq = s.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
      for (const auto& [k, v] : parse_key_values(s, "--set")) over[k] = v;
    }
    for (const auto& [k, v] : flags) over[k] = v;
    std::vector<fs::path> files(configs.begin(), configs.end());
    RunConfig cfg = RunConfig::load_files(files, over);
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.configs, "Config file (key = value); repeatable, later files win")
      ->check(CLI::ExistingFile);
  app->add_option("-s,--set", c.sets, "Override one config key: key=value");
  app->add_option_function<std::string>(
      "-o,--out", [&c](const std::string& v) { c.flags["output.root"] = v; }, "Output root (env WMARK_OUT)");
}

void flag(CLI::App* app, const std::string& name, const std::string& key, Common& c, const std::string& help) {
  app->add_option_function<std::string>(name, [&c, key](const std::string& v) { c.flags[key] = v; }, help + " [" + key + "]");
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

void save_table(const Table& t, const fs::path& dir, const std::string& stem) {
  t.write_csv(dir / (stem + ".csv"));
  write_text(dir / (stem + ".md"), t.to_markdown());
}

int finish(RunDir& run) {
  auto path = run.commit();
  if (run.already_exists()) std::cerr << "run already present, left unchanged: " << path.string() << "\n";
  std::cout << path.string() << "\n";
  return kExitOk;
}

struct Data {
  Dataset primary, watermark, verification, verification_source, test, train;
};

Data load_data(const fs::path& dir) {
  if (!fs::exists(dir / "primary" / "manifest.tsv"))
    throw ValidationError(dir.string() + " is not a forge run (missing primary/manifest.tsv)");
  Data d;
  d.primary = load_dataset(dir / "primary");
  d.watermark = load_dataset(dir / "watermark");
  d.verification = load_dataset(dir / "verification");
  d.verification_source = load_dataset(dir / "verification_source");
  d.test = load_dataset(dir / "test");
  d.train = load_dataset(dir / "train");
  return d;
}

Checkpoint bare_checkpoint(const Net<float>& net, const RunConfig& cfg, uint64_t seed) {
  Checkpoint ck;
  ck.net = net;
  ck.config_text = cfg.canonical_text();
  ck.rng_seed = seed;
  return ck;
}

AttackOutcome outcome(const std::string& attack, const std::string& param, const Net<float>& before,
                      const Net<float>& after, const Data& d, int target) {
  NetOracle a(before), b(after);
  AttackOutcome o;
  o.attack = attack;
  o.param = param;
  o.acc_before = accuracy(a, d.test);
  o.acc_after = accuracy(b, d.test);
  o.wsr_before = wsr(a, d.verification, target);
  o.wsr_after = wsr(b, d.verification, target);
  return o;
}

// ---- dataset ----

int cmd_dataset_synth(const Common& c) {
  RunConfig cfg = c.resolve();
  cfg.dataset_source = "synth";
  RunDir run(cfg, "dataset-synth");
  save_dataset(load_source(cfg), run.path() / "dataset");
  return finish(run);
}

int cmd_dataset_import(const Common& c) {
  RunConfig cfg = c.resolve();
  if (cfg.dataset_path.empty()) throw ValidationError("dataset import needs --path (dataset.path)");
  cfg.dataset_source = "folder";
  RunDir run(cfg, "dataset-import", {cfg.dataset_path});
  std::vector<std::string> errors;
  Dataset ds = load_source(cfg, &errors);
  save_dataset(ds, run.path() / "dataset");
  if (!errors.empty()) {
    std::string all;
    for (const auto& e : errors) all += e + "\n";
    write_text(run.path() / "skipped.txt", all);
    run.note("skipped", std::to_string(errors.size()));
    std::cerr << "skipped " << errors.size() << " invalid file(s)\n";
  }
  return finish(run);
}

// ---- forge ----

int cmd_forge(const Common& c, const std::string& dataset_dir) {
  RunConfig cfg = c.resolve();
  std::vector<std::string> inputs;
  Dataset source;
  if (!dataset_dir.empty()) {
    inputs.push_back(dataset_dir);
    source = load_dataset(dataset_dir);
  }
  RunDir run(cfg, "forge", inputs);
  if (dataset_dir.empty()) source = load_source(cfg);
  if (source.num_classes != cfg.classes)
    throw ValidationError("dataset has " + std::to_string(source.num_classes) + " classes, config says " +
                          std::to_string(cfg.classes));
  Experiment e = prepare_experiment(cfg, source);
  save_dataset(e.split.primary, run.path() / "primary");
  save_dataset(e.split.watermark, run.path() / "watermark");
  save_dataset(e.split.verification, run.path() / "verification");
  save_dataset(e.split.verification_source, run.path() / "verification_source");
  save_dataset(e.test, run.path() / "test");
  save_dataset(e.train, run.path() / "train");
  auto cov = covertness(e.split.verification_source, e.split.verification);
  run.note("covertness.psnr", fmt_num(cov.mean_psnr, 4));
  run.note("covertness.ssim", fmt_num(cov.mean_ssim, 6));
  return finish(run);
}

// ---- train ----

int cmd_train(const Common& c, const std::string& data_dir, bool control) {
  RunConfig cfg = c.resolve();
  RunDir run(cfg, control ? "train-control" : "train", {data_dir});
  Data d = load_data(data_dir);
  TrainConfig tc = cfg.train_config();
  Dataset empty;
  empty.num_classes = d.primary.num_classes;
  const Dataset& primary = control ? d.train : d.primary;
  const Dataset& watermark = control ? empty : d.watermark;
  EvalSets ev{&d.test, &d.verification};
  auto res = train(tc, primary, watermark, ev, [](const EpochLog& l) {
    std::cerr << "epoch " << l.epoch << " L=" << fmt_num(l.loss.total, 4) << " acc=" << fmt_num(l.acc, 4)
              << " wsr=" << fmt_num(l.wsr, 4) << "\n";
  });
  save_checkpoint(res.checkpoint, run.path() / "checkpoint.bin");
  epoch_log_table(res.log).write_csv(run.path() / "epochs.csv");
  if (!res.log.empty()) {
    run.note("final.acc", fmt_num(res.log.back().acc, 4));
    run.note("final.wsr", fmt_num(res.log.back().wsr, 4));
  }
  return finish(run);
}

// ---- evaluate ----

int cmd_evaluate(const Common& c, const std::string& ck_path, const std::string& data_dir) {
  RunConfig cfg = c.resolve();
  RunDir run(cfg, "evaluate", {ck_path, data_dir});
  Checkpoint ck = load_checkpoint(ck_path);
  Data d = load_data(data_dir);
  NetOracle oracle(ck.net);
  auto cov = covertness(d.verification_source, d.verification);
  Table t;
  t.header = {"metric", "value"};
  t.add({"acc_test", fmt_num(accuracy(oracle, d.test), 4)});
  t.add({"wsr_verification", fmt_num(wsr(oracle, d.verification, cfg.target), 4)});
  t.add({"wsr_clean_sources", fmt_num(wsr(oracle, d.verification_source, cfg.target), 4)});
  t.add({"psnr_mean", format_psnr(cov.mean_psnr)});
  t.add({"ssim_mean", fmt_num(cov.mean_ssim, 6)});
  t.add({"identical_pairs", std::to_string(cov.identical)});
  save_table(t, run.path(), "metrics");
  save_table(feature_table(ck.net, d.verification), run.path(), "features_verification");
  std::cout << t.to_markdown();
  return finish(run);
}

// ---- attack ----

int cmd_attack(const Common& c, const std::string& ck_path, const std::string& data_dir) {
  RunConfig cfg = c.resolve();
  RunDir run(cfg, "attack", {ck_path, data_dir});
  Checkpoint ck = load_checkpoint(ck_path);
  Data d = load_data(data_dir);
  SweepOptions opts = SweepOptions::defaults();
  opts.test = &d.test;
  auto rows = evasion_sweep(ck.net, d.verification, cfg.target, cfg.attack_registry(), opts);
  Table t = outcome_table(rows);
  save_table(t, run.path(), "evasion");
  std::cout << t.to_markdown();
  return finish(run);
}

// ---- remove ----

int cmd_remove(const Common& c, const std::string& kind, const std::string& ck_path, const std::string& data_dir) {
  RunConfig cfg = c.resolve();
  RunDir run(cfg, "remove-" + kind, {ck_path, data_dir});
  Checkpoint ck = load_checkpoint(ck_path);
  Data d = load_data(data_dir);
  Net<float> out;
  std::string param;
  uint64_t seed = 0;
  if (kind == "prune") {
    out = prune(ck.net, cfg.prune_rate);
    param = fmt_num(cfg.prune_rate, 2);
  } else if (kind == "quantize") {
    out = quantize_weights(ck.net, cfg.quant_bits);
    param = std::to_string(cfg.quant_bits) + "bit";
  } else if (kind == "finetune") {
    SeededRng rng(cfg.finetune.seed);
    auto n = static_cast<size_t>(std::llround(cfg.finetune_fraction * static_cast<double>(d.train.size())));
    Dataset clean = sample_rand(d.train, std::max<size_t>(1, n), rng).selected;
    out = finetune_last_layer(ck.net, clean, cfg.finetune);
    param = std::to_string(clean.size()) + " samples, " + std::to_string(cfg.finetune.epochs) + " epochs";
    seed = cfg.finetune.seed;
  } else {
    NetOracle victim(ck.net);
    DistillConfig dc = cfg.distill;
    dc.arch = cfg.train.arch;
    DistillMode mode = cfg.distill_mode == "hard" ? DistillMode::hard : DistillMode::soft;
    out = distill_extract(victim, d.train, mode, dc);
    param = cfg.distill_mode;
    seed = dc.seed;
  }
  save_checkpoint(bare_checkpoint(out, cfg, seed), run.path() / "checkpoint.bin");
  Table t = outcome_table({outcome(kind, param, ck.net, out, d, cfg.target)});
  save_table(t, run.path(), "removal");
  std::cout << t.to_markdown();
  return finish(run);
}

// ---- verify ----

int cmd_verify(const Common& c, const std::string& ck_path, const std::string& data_dir) {
  RunConfig cfg = c.resolve();
  std::vector<std::string> inputs = {data_dir};
  if (!ck_path.empty()) inputs.push_back(ck_path);
  fs::path vdir = fs::path(data_dir) / "verification";
  if (!fs::exists(vdir / "manifest.tsv")) vdir = data_dir;
  Dataset ver = load_dataset(vdir);
  std::unique_ptr<PredictionOracle> oracle;
  Checkpoint ck;
  if (!ck_path.empty()) {
    ck = load_checkpoint(ck_path);
    oracle = std::make_unique<NetOracle>(ck.net);
  } else if (!cfg.oracle_url.empty()) {
    oracle = std::make_unique<HttpOracle>(cfg.oracle_url, ver.num_classes);
  } else {
    throw ValidationError("verify needs --checkpoint or --url (verify.url)");
  }
  RunDir run(cfg, "verify", inputs);
  auto report = verify_ownership(*oracle, ver, cfg.target, -1, cfg.verify);
  write_text(run.path() / "report.json", report.to_json() + "\n");
  write_text(run.path() / "report.md", report.to_markdown());
  run.note("decision", decision_name(report.decision));
  std::cout << report.to_markdown();
  finish(run);
  switch (report.decision) {
    case Decision::owned: return kExitOk;
    case Decision::not_owned: return kExitNotOwned;
    case Decision::withheld:
      std::cerr << "decision withheld: " << report.failed << " of " << report.queries << " queries failed\n";
      return kExitRuntime;
  }
  return kExitRuntime;
}

// ---- falsetrigger ----

int cmd_falsetrigger(const Common& c, const std::string& ck_path, const std::string& data_dir) {
  RunConfig cfg = c.resolve();
  RunDir run(cfg, "falsetrigger", {ck_path, data_dir});
  Checkpoint ck = load_checkpoint(ck_path);
  Data d = load_data(data_dir);
  auto rows = false_trigger_audit(ck.net, d.verification_source, cfg.target, cfg.factor, cfg.codecs);
  Table t = forgery_table(rows);
  save_table(t, run.path(), "forgery");
  std::cout << t.to_markdown();
  return finish(run);
}

// ---- ablate ----

int cmd_ablate(const Common& c, const std::string& what) {
  RunConfig cfg = c.resolve();
  RunDir run(cfg, "ablate-" + what);
  Dataset source = load_source(cfg);
  Table t;
  t.header = {what == "rate" ? "rate" : "factor", "n_watermark", "acc", "wsr", "psnr", "ssim"};
  std::vector<RunConfig> variants;
  if (what == "rate")
    for (double r : cfg.ablate_rates) {
      variants.push_back(cfg);
      variants.back().rate = r;
    }
  else
    for (int f : cfg.ablate_factors) {
      variants.push_back(cfg);
      variants.back().factor = f;
    }
  for (const auto& v : variants) {
    v.validate();
    Experiment e = prepare_experiment(v, source);
    EvalSets ev{&e.test, &e.split.verification};
    auto res = train(v.train_config(), e.split.primary, e.split.watermark, ev);
    auto cov = covertness(e.split.verification_source, e.split.verification);
    const auto& last = res.log.back();
    t.add({what == "rate" ? fmt_num(v.rate, 4) : std::to_string(v.factor), std::to_string(e.split.watermark.size()),
           fmt_num(last.acc, 4), fmt_num(last.wsr, 4), format_psnr(cov.mean_psnr), fmt_num(cov.mean_ssim, 6)});
    std::cerr << t.rows.back()[0] << ": acc=" << t.rows.back()[2] << " wsr=" << t.rows.back()[3] << "\n";
  }
  save_table(t, run.path(), "ablate_" + what);
  std::cout << t.to_markdown();
  return finish(run);
}

// ---- report ----

int cmd_report(const Common& c, const std::vector<std::string>& runs) {
  RunConfig cfg = c.resolve();
  RunDir run(cfg, "report", runs);
  std::string md;
  for (const auto& r : runs) {
    fs::path dir(r);
    md += "# " + dir.filename().string() + "\n\n";
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && (e.path().extension() == ".csv" || e.path().filename() == "report.md"))
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (f.filename().string().rfind("features_", 0) == 0) continue;
      md += "## " + f.filename().string() + "\n\n";
      if (f.extension() == ".csv") {
        md += Table::read_csv(f).to_markdown();
      } else {
        std::ifstream in(f);
        md += std::string(std::istreambuf_iterator<char>(in), {});
      }
      md += "\n";
    }
  }
  write_text(run.path() / "report.md", md);
  std::cout << md;
  return finish(run);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compression-triggered dataset watermarking: forge, train, attack and verify"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);

  Common common;
  std::string data_dir, ck_path, dataset_dir;
  std::vector<std::string> runs;
  bool control = false;
  std::function<int()> action;

  auto* dataset = app.add_subcommand("dataset", "Create a source dataset");
  dataset->require_subcommand(1);
  auto* synth = dataset->add_subcommand("synth", "Synthetic natural-style corpus");
  add_common(synth, common);
  flag(synth, "--classes", "dataset.classes", common, "Number of classes");
  flag(synth, "--per-class", "dataset.per_class", common, "Images per class");
  flag(synth, "--side", "dataset.side", common, "Image side (multiple of 8)");
  flag(synth, "--seed", "dataset.seed", common, "Generator seed");
  synth->callback([&] { action = [&] { return cmd_dataset_synth(common); }; });

  auto* import = dataset->add_subcommand("import", "Import <root>/<class>/<image>.png");
  add_common(import, common);
  flag(import, "--path", "dataset.path", common, "Image folder root");
  flag(import, "--side", "dataset.side", common, "Resize target side");
  import->add_flag_callback("--skip-invalid", [&] { common.flags["dataset.skip_invalid"] = "true"; },
                            "Skip undecodable files instead of failing");
  import->callback([&] { action = [&] { return cmd_dataset_import(common); }; });

  auto* forge = app.add_subcommand("forge", "Forge D_w and D_v with the compression codec");
  add_common(forge, common);
  forge->add_option("--dataset", dataset_dir, "Dataset directory (default: build from dataset.* keys)");
  flag(forge, "--rate", "forge.rate", common, "Watermark sample rate");
  flag(forge, "--factor", "forge.factor", common, "Quality factor");
  flag(forge, "--target", "forge.target", common, "Target label");
  flag(forge, "--seed", "forge.seed", common, "Forging seed");
  forge->callback([&] { action = [&] { return cmd_forge(common, dataset_dir); }; });

  auto* tr = app.add_subcommand("train", "Train a watermarked (or control) model");
  add_common(tr, common);
  tr->add_option("--data", data_dir, "Forge run directory")->required()->check(CLI::ExistingDirectory);
  tr->add_flag("--control", control, "Train the no-watermark control on the clean training draw");
  flag(tr, "--epochs", "train.epochs", common, "Epochs");
  flag(tr, "--seed", "train.seed", common, "Training seed");
  flag(tr, "--gamma", "train.gamma", common, "Similarity loss weight");
  flag(tr, "--arch", "train.arch", common, "cnn2 | cnn2hp");
  tr->callback([&] { action = [&] { return cmd_train(common, data_dir, control); }; });

  auto with_model = [&](CLI::App* sub) {
    add_common(sub, common);
    sub->add_option("--checkpoint", ck_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
    sub->add_option("--data", data_dir, "Forge run directory")->required()->check(CLI::ExistingDirectory);
  };

  auto* ev = app.add_subcommand("evaluate", "Accuracy, WSR and covertness");
  with_model(ev);
  ev->callback([&] { action = [&] { return cmd_evaluate(common, ck_path, data_dir); }; });

  auto* at = app.add_subcommand("attack", "Evasion sweep over the attack registry");
  with_model(at);
  at->callback([&] { action = [&] { return cmd_attack(common, ck_path, data_dir); }; });

  auto* rm = app.add_subcommand("remove", "Removal and extraction attacks");
  rm->require_subcommand(1);
  for (std::string kind : {"prune", "quantize", "finetune", "extract"}) {
    auto* sub = rm->add_subcommand(kind, "Run the " + kind + " attack");
    with_model(sub);
    if (kind == "prune") flag(sub, "--rate", "remove.prune_rate", common, "Fraction of weights zeroed");
    if (kind == "quantize") flag(sub, "--bits", "remove.bits", common, "Bits per weight");
    if (kind == "finetune") flag(sub, "--epochs", "remove.finetune_epochs", common, "Finetuning epochs");
    if (kind == "extract") {
      flag(sub, "--mode", "remove.distill_mode", common, "soft | hard");
      flag(sub, "--seed", "remove.distill_seed", common, "Surrogate seed");
    }
    sub->callback([&, kind] { action = [&, kind] { return cmd_remove(common, kind, ck_path, data_dir); }; });
  }

  auto* vf = app.add_subcommand("verify", "Ownership verification against D_v");
  add_common(vf, common);
  vf->add_option("--checkpoint", ck_path, "Local checkpoint as the suspect model")->check(CLI::ExistingFile);
  flag(vf, "--url", "verify.url", common, "HTTP oracle endpoint (POST PNG, returns class index)");
  vf->add_option("--data", data_dir, "Forge run directory or a D_v dataset directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  flag(vf, "--alpha", "verify.alpha", common, "Significance level");
  vf->callback([&] { action = [&] { return cmd_verify(common, ck_path, data_dir); }; });

  auto* ft = app.add_subcommand("falsetrigger", "WSR of non-watermark forgeries");
  with_model(ft);
  ft->callback([&] { action = [&] { return cmd_falsetrigger(common, ck_path, data_dir); }; });

  auto* ab = app.add_subcommand("ablate", "Sweep watermark rate or quality factor");
  ab->require_subcommand(1);
  for (std::string what : {"rate", "factor"}) {
    auto* sub = ab->add_subcommand(what, "Sweep " + what);
    add_common(sub, common);
    flag(sub, "--values", what == "rate" ? "ablate.rates" : "ablate.factors", common, "Comma-separated values");
    sub->callback([&, what] { action = [&, what] { return cmd_ablate(common, what); }; });
  }

  auto* rp = app.add_subcommand("report", "Render run CSVs as markdown tables");
  add_common(rp, common);
  rp->add_option("runs", runs, "Run directories")->required()->check(CLI::ExistingDirectory);
  rp->callback([&] { action = [&] { return cmd_report(common, runs); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    return action ? action() : kExitValidation;
  } catch (const ImportError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& f : e.files) std::cerr << "  " << f << "\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CodecUnavailable& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}
