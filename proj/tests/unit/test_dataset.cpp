#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "wmark/dataset.hpp"

using namespace wmark;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("wmark_ds_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("synthetic corpus is deterministic and balanced") {
  auto a = synth_dataset(4, 6, 16, 3);
  auto b = synth_dataset(4, 6, 16, 3);
  auto c = synth_dataset(4, 6, 16, 4);
  REQUIRE(a.size() == 24);
  std::vector<int> counts(4, 0);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].image.height == 16);
    ++counts[a[i].label];
  }
  for (int k : counts) CHECK(k == 6);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) differs |= !(a[i].image == c[i].image);
  CHECK(differs);
  std::set<uint64_t> ids;
  for (auto& s : a.samples) ids.insert(s.id);
  CHECK(ids.size() == a.size());
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("synth rejects bad shapes") {
  CHECK_THROWS_AS(synth_dataset(1, 5, 32, 1), ValidationError);
  CHECK_THROWS_AS(synth_dataset(3, 5, 20, 1), ValidationError);
}

TEST_CASE("save and load round trip") {
  auto ds = synth_dataset(3, 4, 8, 9);
  auto dir = scratch("rt");
  save_dataset(ds, dir);
  CHECK(fs::exists(dir / "manifest.tsv"));
  auto back = load_dataset(dir);
  REQUIRE(back.size() == ds.size());
  CHECK(back.num_classes == 3);
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].image == ds[i].image);
    CHECK(back[i].label == ds[i].label);
  }
  fs::remove_all(dir);
}

TEST_CASE("folder import with an undecodable file") {
  auto dir = scratch("imp");
  fs::create_directories(dir / "cats");
  fs::create_directories(dir / "dogs");
  write_png(dir / "cats" / "a.png", ImageU8(16, 16, 10));
  write_png(dir / "dogs" / "b.png", ImageU8(8, 8, 200));
  std::ofstream(dir / "dogs" / "broken.png") << "not a png";

  try {
    import_image_folder(dir, {});
    FAIL("expected ImportError");
  } catch (const ImportError& e) {
    REQUIRE(e.files.size() == 1);
    CHECK(e.files[0].find("broken.png") != std::string::npos);
  }
  ImportOptions opts;
  opts.side = 8;
  opts.skip_invalid = true;
  auto res = import_image_folder(dir, opts);
  CHECK(res.errors.size() == 1);
  REQUIRE(res.dataset.size() == 2);
  CHECK(res.dataset.class_names == std::vector<std::string>{"cats", "dogs"});
  CHECK(res.dataset[0].image.height == 8);
  CHECK(res.dataset[0].image.at(3, 3, 0) == 10);
  CHECK(res.dataset[1].label == 1);
  fs::remove_all(dir);
}

TEST_CASE("sample_rand splits into disjoint covering parts") {
  auto ds = synth_dataset(2, 10, 8, 1);
  SeededRng r(5);
  auto s = sample_rand(ds, 7, r);
  CHECK(s.selected.size() == 7);
  CHECK(s.remainder.size() == 13);
  std::set<uint64_t> ids;
  for (auto& x : s.selected.samples) ids.insert(x.id);
  for (auto& x : s.remainder.samples) CHECK(ids.insert(x.id).second);
  CHECK(ids.size() == 20);
  SeededRng r2(5);
  CHECK(sample_rand(ds, 7, r2).selected[0].id == s.selected[0].id);
  CHECK_THROWS_AS(sample_rand(ds, 21, r), ValidationError);
}

TEST_CASE("partition_subset takes every k-th sample") {
  auto ds = synth_dataset(2, 5, 8, 1);
  auto p = partition_subset(ds, 1, 3);
  REQUIRE(p.size() == 3);
  CHECK(p[0].id == ds[1].id);
  CHECK(p[1].id == ds[4].id);
  CHECK(p[2].id == ds[7].id);
  size_t total = 0;
  for (size_t i = 0; i < 3; ++i) total += partition_subset(ds, i, 3, 42).size();
  CHECK(total == ds.size());
  CHECK_THROWS_AS(partition_subset(ds, 3, 3), ValidationError);
}

TEST_CASE("relabel and concat") {
  auto ds = synth_dataset(3, 2, 8, 1);
  auto r = relabel(ds, 2);
  for (auto& s : r.samples) CHECK(s.label == 2);
  CHECK_THROWS_AS(relabel(ds, 3), ValidationError);
  auto c = concat(ds, r);
  CHECK(c.size() == 12);
  CHECK(c[6].id == ds[0].id);
}
