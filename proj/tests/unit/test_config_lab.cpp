#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "wmark/config.hpp"
#include "wmark/lab.hpp"

using namespace wmark;
namespace fs = std::filesystem;

namespace {

Net<float> random_net(uint64_t seed) {
  Net<float> n(Arch::cnn2hp, 4, 8);
  SeededRng r(seed);
  n.init_he_uniform(r);
  for (auto& b : n.params[Net<float>::kFc1B].data) b = static_cast<float>(r.uniform(-0.1, 0.1));
  return n;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("key-value parsing with sections and comments") {
  auto kv = parse_key_values("# header\ntop = 1\n[train]\nepochs = 3   # trailing\n\nlr=0.01\n");
  CHECK(kv.at("top") == "1");
  CHECK(kv.at("train.epochs") == "3");
  CHECK(kv.at("train.lr") == "0.01");
  auto msg = error_of([] { parse_key_values("ok = 1\nno equals here\n[broken\n", "f.ini"); });
  CHECK(msg.find("f.ini:2") != std::string::npos);
  CHECK(msg.find("f.ini:3") != std::string::npos);
}

TEST_CASE("config layers, unknown keys and aggregated validation") {
  auto cfg = RunConfig::load({{{"train.epochs", "5"}}, {{"train.epochs", "7"}, {"forge.target", "2"}}});
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.target == 2);
  CHECK(cfg.train_config().target == 2);
  auto msg = error_of([] { RunConfig::load({{{"train.epoch", "5"}, {"forge.rate", "abc"}}}); });
  CHECK(msg.find("train.epoch") != std::string::npos);
  CHECK(msg.find("forge.rate") != std::string::npos);

  RunConfig bad;
  bad.rate = 1.5;
  bad.target = 12;
  bad.train.epochs = -1;
  auto v = error_of([&] { bad.validate(); });
  CHECK(v.find("rate") != std::string::npos);
  CHECK(v.find("target") != std::string::npos);
  CHECK(v.find("epochs") != std::string::npos);
  CHECK_NOTHROW(RunConfig{}.validate());
  for (const auto& [k, val] : RunConfig{}.effective()) CHECK(std::find(config_keys().begin(), config_keys().end(), k) != config_keys().end());
}

TEST_CASE("config hash ignores the output root only") {
  RunConfig a, b;
  b.output_root = "/elsewhere";
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 64);
  b.train.seed = 99;
  CHECK(a.hash() != b.hash());
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("run directories commit once and never overwrite") {
  auto root = fs::temp_directory_path() / "wmark_runs_test";
  fs::remove_all(root);
  RunConfig cfg;
  cfg.output_root = root;
  fs::path first;
  {
    RunDir rd(cfg, "forge");
    CHECK_FALSE(rd.already_exists());
    std::ofstream(rd.path() / "out.txt") << "one";
    first = rd.commit();
  }
  CHECK(fs::exists(first / "manifest.json"));
  {
    RunDir rd(cfg, "forge");
    CHECK(rd.already_exists());
    CHECK(rd.final_path() == first);
    std::ofstream(rd.path() / "out.txt") << "two";
    rd.commit();
  }
  std::ifstream f(first / "out.txt");
  std::string s;
  f >> s;
  CHECK(s == "one");
  {
    RunDir abandoned(cfg, "train");
    std::ofstream(abandoned.path() / "partial.bin") << "x";
  }
  size_t dirs = 0;
  for (auto& e : fs::directory_iterator(root)) {
    ++dirs;
    CHECK(e.path().filename().string().find("staging") == std::string::npos);
  }
  CHECK(dirs == 1);
  fs::remove_all(root);
}

TEST_CASE("pruning zeroes exactly round(rate * N) weights") {
  auto n = random_net(1);
  size_t N = weight_count(n);
  for (double rate : {0.0, 0.1, 0.5, 0.9, 1.0}) {
    auto p = prune(n, rate);
    CHECK(zero_weight_count(p) == static_cast<size_t>(std::llround(rate * static_cast<double>(N))));
    CHECK(p.params[Net<float>::kFc1B].data == n.params[Net<float>::kFc1B].data);
  }
  auto half = prune(n, 0.5);
  float kept_min = 1e9f, cut_max = 0;
  for (size_t t = 0; t < n.params.size(); t += 2)
    for (size_t i = 0; i < n.params[t].data.size(); ++i) {
      float w = std::abs(n.params[t].data[i]);
      if (half.params[t].data[i] == 0) cut_max = std::max(cut_max, w);
      else kept_min = std::min(kept_min, w);
    }
  CHECK(cut_max <= kept_min);
  CHECK_THROWS_AS(prune(n, 1.5), ValidationError);
}

TEST_CASE("weight quantization uses at most 2^bits levels") {
  auto n = random_net(2);
  for (int bits : {1, 2, 4, 8}) {
    auto q = quantize_weights(n, bits);
    for (size_t t = 0; t < q.params.size(); ++t) {
      std::set<float> levels(q.params[t].data.begin(), q.params[t].data.end());
      CHECK(levels.size() <= (size_t{1} << bits));
      float mx = 0;
      for (float w : n.params[t].data) mx = std::max(mx, std::abs(w));
      double step = 2.0 * mx / ((1 << bits) - 1);
      for (size_t i = 0; i < q.params[t].data.size(); ++i)
        CHECK(std::abs(q.params[t].data[i] - n.params[t].data[i]) <= step / 2 + 1e-6);
    }
  }
  auto q16 = quantize_weights(n, 16);
  CHECK(q16.params[0].data[0] == doctest::Approx(n.params[0].data[0]).epsilon(1e-3));
}

TEST_CASE("finetuning moves only the last layer") {
  auto n = random_net(3);
  auto data = synth_dataset(4, 8, 8, 2);
  FinetuneConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 8;
  auto f = finetune_last_layer(n, data, cfg);
  for (size_t t = 0; t < Net<float>::kFc2W; ++t) CHECK(f.params[t].data == n.params[t].data);
  CHECK(f.params[Net<float>::kFc2W].data != n.params[Net<float>::kFc2W].data);
  CHECK(f.params[Net<float>::kFc2B].data != n.params[Net<float>::kFc2B].data);
  auto g = finetune_last_layer(n, data, cfg);
  CHECK(g.params[Net<float>::kFc2W].data == f.params[Net<float>::kFc2W].data);
}
