#include "wmark/config.hpp"

#include <Eigen/Core>
#include <json.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>
#include <png.h>
#include <unistd.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#ifndef WMARK_VERSION
#define WMARK_VERSION "0.0.0"
#endif

namespace wmark {

namespace fs = std::filesystem;

const char* version() { return WMARK_VERSION; }

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  auto t = trim(s);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw ValidationError("not a number: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  auto t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ValidationError("not a boolean: '" + s + "'");
}

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string b(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>)
      out += num(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define WM_INT(key, field) \
  Key { key, [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = parse_number<int>(v); } }
#define WM_U64(key, field) \
  Key { key, [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = parse_number<uint64_t>(v); } }
#define WM_DBL(key, field) \
  Key { key, [](const RunConfig& c) { return num(c.field); }, [](RunConfig& c, const std::string& v) { c.field = parse_number<double>(v); } }
#define WM_BOOL(key, field) \
  Key { key, [](const RunConfig& c) { return b(c.field); }, [](RunConfig& c, const std::string& v) { c.field = parse_bool(v); } }
#define WM_STR(key, field) \
  Key { key, [](const RunConfig& c) { return std::string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = trim(v); } }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      WM_STR("dataset.source", dataset_source),
      WM_STR("dataset.path", dataset_path),
      WM_INT("dataset.classes", classes),
      WM_INT("dataset.per_class", per_class),
      WM_INT("dataset.side", side),
      WM_U64("dataset.seed", dataset_seed),
      WM_INT("dataset.train_size", train_size),
      WM_BOOL("dataset.skip_invalid", skip_invalid),

      WM_DBL("forge.rate", rate),
      WM_INT("forge.factor", factor),
      WM_INT("forge.target", target),
      WM_INT("forge.verify_count", verify_count),
      WM_U64("forge.seed", forge_seed),
      WM_BOOL("codec.level_shift", codec.level_shift),
      WM_BOOL("codec.clamp", codec.clamp_planes),
      WM_STR("codec.jpeg2000", codecs.jpeg2000),
      WM_STR("codec.webp", codecs.webp),

      Key{"train.arch", [](const RunConfig& c) { return std::string(arch_name(c.train.arch)); },
          [](RunConfig& c, const std::string& v) { c.train.arch = parse_arch(trim(v)); }},
      WM_INT("train.epochs", train.epochs),
      WM_INT("train.batch_primary", train.batch_primary),
      WM_INT("train.batch_watermark", train.batch_watermark),
      WM_INT("train.batch_attacked", train.batch_attacked),
      WM_DBL("train.lr", train.lr),
      WM_INT("train.decay_every", train.decay_every),
      WM_DBL("train.decay_factor", train.decay_factor),
      WM_DBL("train.alpha", train.alpha),
      WM_DBL("train.beta", train.beta),
      WM_DBL("train.gamma", train.gamma),
      WM_DBL("train.margin", train.margin),
      WM_DBL("train.attack_fraction", train.attack_fraction),
      Key{"train.sim_scope",
          [](const RunConfig& c) { return std::string(c.train.sim_scope == SimScope::all ? "all" : "watermark"); },
          [](RunConfig& c, const std::string& v) {
            auto t = trim(v);
            if (t == "all")
              c.train.sim_scope = SimScope::all;
            else if (t == "watermark")
              c.train.sim_scope = SimScope::watermark;
            else
              throw ValidationError("sim_scope must be all|watermark");
          }},
      WM_U64("train.seed", train.seed),
      WM_STR("attacks.registry", registry),

      WM_DBL("verify.alpha", verify.alpha),
      WM_DBL("verify.null_rate", verify.null_rate),
      WM_DBL("verify.max_failure_rate", verify.max_failure_rate),
      WM_DBL("verify.qps", verify.queries_per_second),
      WM_STR("verify.url", oracle_url),

      WM_DBL("remove.prune_rate", prune_rate),
      WM_INT("remove.bits", quant_bits),
      WM_DBL("remove.finetune_fraction", finetune_fraction),
      WM_INT("remove.finetune_epochs", finetune.epochs),
      WM_DBL("remove.finetune_lr", finetune.lr),
      WM_U64("remove.finetune_seed", finetune.seed),
      WM_STR("remove.distill_mode", distill_mode),
      WM_INT("remove.distill_epochs", distill.epochs),
      WM_U64("remove.distill_seed", distill.seed),

      Key{"ablate.rates", [](const RunConfig& c) { return join(c.ablate_rates); },
          [](RunConfig& c, const std::string& v) {
            c.ablate_rates.clear();
            for (auto& s : split(v, ',')) c.ablate_rates.push_back(parse_number<double>(s));
          }},
      Key{"ablate.factors", [](const RunConfig& c) { return join(c.ablate_factors); },
          [](RunConfig& c, const std::string& v) {
            c.ablate_factors.clear();
            for (auto& s : split(v, ',')) c.ablate_factors.push_back(parse_number<int>(s));
          }},
      Key{"output.root", [](const RunConfig& c) { return c.output_root.string(); },
          [](RunConfig& c, const std::string& v) { c.output_root = trim(v); }},
  };
  return k;
}

#undef WM_INT
#undef WM_U64
#undef WM_DBL
#undef WM_BOOL
#undef WM_STR

const Key* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (name == k.name) return &k;
  return nullptr;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string input_digest(const std::string& input) {
  fs::path p(input);
  std::error_code ec;
  if (fs::is_regular_file(p, ec)) return sha256_file(p);
  if (fs::is_directory(p, ec)) {
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), p).generic_string(), sha256_file(e.path()));
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& [name, h] : files) all += name + "\t" + h + "\n";
    return sha256_hex(all);
  }
  return sha256_hex(input);
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::vector<std::string> errs;
  std::istringstream is(text);
  std::string line, section;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        errs.push_back(source + ":" + std::to_string(no) + ": unterminated section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      errs.push_back(source + ":" + std::to_string(no) + ": expected `key = value`");
      continue;
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) {
      errs.push_back(source + ":" + std::to_string(no) + ": empty key");
      continue;
    }
    if (!section.empty()) key = section + "." + key;
    out[key] = trim(line.substr(eq + 1));
  }
  if (!errs.empty()) {
    std::string msg = "config syntax errors:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

RunConfig RunConfig::load(const std::vector<std::map<std::string, std::string>>& layers) {
  RunConfig c;
  if (const char* v = std::getenv("WMARK_OUT"); v && *v) c.output_root = v;
  auto env = ExternalCodecs::from_env();
  if (!env.jpeg2000.empty()) c.codecs.jpeg2000 = env.jpeg2000;
  if (!env.webp.empty()) c.codecs.webp = env.webp;
  std::vector<std::string> errs;
  for (const auto& layer : layers)
    for (const auto& [k, v] : layer) {
      const Key* key = find_key(k);
      if (!key) {
        errs.push_back("unknown key '" + k + "'");
        continue;
      }
      try {
        key->set(c, v);
      } catch (const std::exception& e) {
        errs.push_back(k + ": " + e.what());
      }
    }
  if (!errs.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return c;
}

RunConfig RunConfig::load_files(const std::vector<fs::path>& files, const std::map<std::string, std::string>& overrides) {
  std::vector<std::map<std::string, std::string>> layers;
  for (const auto& f : files) layers.push_back(parse_key_values(read_text(f), f.string()));
  layers.push_back(overrides);
  return load(layers);
}

std::map<std::string, std::string> RunConfig::effective() const {
  std::map<std::string, std::string> out;
  for (const auto& k : keys()) out[k.name] = k.get(*this);
  return out;
}

std::string RunConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : effective()) {
    if (k == "output.root") continue;
    out += k + " = " + v + "\n";
  }
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(canonical_text()); }

AttackRegistry RunConfig::attack_registry() const {
  if (registry == "default" || registry.empty()) return default_registry(codecs);
  AttackRegistry r;
  r.codecs = codecs;
  for (const auto& s : split(registry, ';')) r.specs.push_back(parse_attack_spec(s));
  return r;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.target = target;
  t.registry = attack_registry();
  return t;
}

void RunConfig::validate() const {
  std::vector<std::string> errs;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  check(dataset_source == "synth" || dataset_source == "folder", "dataset.source must be synth|folder");
  check(dataset_source != "folder" || !dataset_path.empty(), "dataset.path is required for dataset.source = folder");
  check(classes >= 2, "dataset.classes must be >= 2");
  check(per_class >= 1, "dataset.per_class must be >= 1");
  check(side >= 8 && side % 8 == 0, "dataset.side must be a positive multiple of 8");
  check(side % 4 == 0, "dataset.side must be divisible by 4 for the network pools");
  check(train_size >= 1, "dataset.train_size must be >= 1");
  if (dataset_source == "synth")
    check(train_size + verify_count <= classes * per_class,
          "dataset.train_size + forge.verify_count exceeds the synthetic pool (" + std::to_string(classes * per_class) +
              ")");
  check(rate > 0 && rate < 1, "forge.rate must lie in (0,1)");
  check(factor >= 1 && factor <= 100, "forge.factor must lie in [1,100]");
  check(target >= 0 && target < classes, "forge.target must lie in [0, classes)");
  check(verify_count >= 1, "forge.verify_count must be >= 1");
  if (rate > 0 && rate < 1) check(std::llround(rate * train_size) >= 1, "forge.rate * train_size rounds to zero");
  try {
    train_config().validate();
  } catch (const std::exception& e) {
    errs.push_back(e.what());
  }
  check(verify.alpha > 0 && verify.alpha < 1, "verify.alpha must lie in (0,1)");
  check(verify.null_rate >= 0 && verify.null_rate < 1, "verify.null_rate must lie in [0,1)");
  check(verify.max_failure_rate >= 0 && verify.max_failure_rate <= 1, "verify.max_failure_rate must lie in [0,1]");
  check(verify.queries_per_second >= 0, "verify.qps must be >= 0");
  if (classes >= 2 && verify_count >= 1 && verify.alpha > 0 && verify.alpha < 1 && verify.null_rate < 1) {
    try {
      compute_threshold(verify_count, classes, verify.alpha, verify.null_rate);
    } catch (const std::exception& e) {
      errs.push_back(e.what());
    }
  }
  check(prune_rate >= 0 && prune_rate <= 1, "remove.prune_rate must lie in [0,1]");
  check(quant_bits >= 1 && quant_bits <= 16, "remove.bits must lie in [1,16]");
  check(finetune_fraction > 0 && finetune_fraction <= 1, "remove.finetune_fraction must lie in (0,1]");
  check(finetune.epochs >= 0 && finetune.lr > 0, "remove.finetune_epochs must be >= 0 and finetune_lr > 0");
  check(distill_mode == "soft" || distill_mode == "hard", "remove.distill_mode must be soft|hard");
  check(distill.epochs >= 0, "remove.distill_epochs must be >= 0");
  for (double r : ablate_rates) check(r > 0 && r < 1, "ablate.rates entries must lie in (0,1)");
  for (int f : ablate_factors) check(f >= 1 && f <= 100, "ablate.factors entries must lie in [1,100]");
  check(!output_root.empty(), "output.root must be set");
  if (!errs.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

Dataset load_source(const RunConfig& cfg, std::vector<std::string>* import_errors) {
  if (cfg.dataset_source == "synth") return synth_dataset(cfg.classes, cfg.per_class, cfg.side, cfg.dataset_seed);
  ImportOptions opts;
  opts.side = cfg.side;
  opts.skip_invalid = cfg.skip_invalid;
  auto res = import_image_folder(cfg.dataset_path, opts);
  if (import_errors) *import_errors = res.errors;
  return res.dataset;
}

Experiment prepare_experiment(const RunConfig& cfg, const Dataset& source) {
  if (static_cast<size_t>(cfg.train_size) >= source.size())
    throw ValidationError("dataset.train_size must be smaller than the source pool (" + std::to_string(source.size()) +
                          ")");
  SeededRng root(cfg.forge_seed);
  SeededRng draw = root.split(1);
  auto sel = sample_rand(source, static_cast<size_t>(cfg.train_size), draw);
  SeededRng forge = root.split(2);
  Experiment e;
  e.train = sel.selected;
  e.split = forge_watermark_split(sel.selected, sel.remainder, cfg.rate, cfg.factor, cfg.target, forge,
                                  static_cast<size_t>(cfg.verify_count), cfg.codec);
  e.test = e.split.holdout_rest;
  return e;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

RunDir::RunDir(const RunConfig& cfg, const std::string& command, const std::vector<std::string>& inputs)
    : cfg_(cfg), command_(command), inputs_(inputs) {
  std::string key = "command=" + command + "\n" + cfg.canonical_text();
  for (const auto& in : inputs) key += "input=" + input_digest(in) + "\n";
  id_ = command + "-" + sha256_hex(key).substr(0, 16);
  final_ = cfg.output_root / id_;
  exists_ = fs::exists(final_ / "manifest.json");
  staging_ = cfg.output_root / (id_ + ".staging-" + std::to_string(::getpid()));
  fs::remove_all(staging_);
  fs::create_directories(staging_);
}

RunDir::~RunDir() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

fs::path RunDir::commit() {
  nlohmann::ordered_json j;
  j["command"] = command_;
  j["run"] = id_;
  j["config_hash"] = cfg_.hash();
  j["config"] = cfg_.effective();
  j["config"].erase("output.root");
  j["seeds"] = {{"dataset", cfg_.dataset_seed},
                {"forge", cfg_.forge_seed},
                {"train", cfg_.train.seed},
                {"finetune", cfg_.finetune.seed},
                {"distill", cfg_.distill.seed}};
  j["versions"] = {{"wmark", version()},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"libpng", PNG_LIBPNG_VER_STRING},
                   {"openssl", OPENSSL_VERSION_TEXT}};
  auto ins = nlohmann::ordered_json::array();
  for (const auto& in : inputs_) ins.push_back({{"path", in}, {"sha256", input_digest(in)}});
  j["inputs"] = ins;
  j["notes"] = notes_;
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(staging_))
    if (e.is_regular_file())
      files.emplace_back(fs::relative(e.path(), staging_).generic_string(), sha256_file(e.path()));
  std::sort(files.begin(), files.end());
  auto outs = nlohmann::ordered_json::array();
  for (const auto& [name, h] : files) outs.push_back({{"path", name}, {"sha256", h}});
  j["outputs"] = outs;
  {
    std::ofstream out(staging_ / "manifest.json", std::ios::binary);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write manifest in " + staging_.string());
  }
  committed_ = true;
  if (fs::exists(final_ / "manifest.json")) {
    exists_ = true;
    fs::remove_all(staging_);
    return final_;
  }
  fs::remove_all(final_);
  fs::rename(staging_, final_);
  return final_;
}

}  // namespace wmark
