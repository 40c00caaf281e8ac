#include "wmark/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace wmark {

namespace fs = std::filesystem;

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::synthetic: return "synthetic";
    case Provenance::imported: return "imported";
    case Provenance::forged: return "forged";
    case Provenance::attacked: return "attacked";
    case Provenance::mixed: return "mixed";
  }
  return "mixed";
}

Provenance parse_provenance(const std::string& s) {
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "imported") return Provenance::imported;
  if (s == "forged") return Provenance::forged;
  if (s == "attacked") return Provenance::attacked;
  if (s == "mixed") return Provenance::mixed;
  throw ValidationError("unknown provenance '" + s + "'");
}

void Dataset::validate() const {
  if (num_classes < 1) throw ValidationError("dataset has no classes");
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.label < 0 || s.label >= num_classes)
      throw ValidationError("sample " + std::to_string(i) + " label " + std::to_string(s.label) + " outside [0," +
                            std::to_string(num_classes) + ")");
    if (s.image.data.size() != static_cast<size_t>(s.image.height) * s.image.width * 3)
      throw ValidationError("sample " + std::to_string(i) + " has inconsistent raster size");
    if (!s.image.same_shape(samples[0].image))
      throw ValidationError("sample " + std::to_string(i) + " dimensions differ from sample 0");
  }
}

Dataset Dataset::with_samples(std::vector<LabeledSample> s) const {
  Dataset d;
  d.samples = std::move(s);
  d.num_classes = num_classes;
  d.provenance = provenance;
  d.class_names = class_names;
  return d;
}

// ---------------------------------------------------------------- synthesis

namespace {

constexpr std::array<std::array<double, 3>, 8> kPalette = {{
    {200, 60, 50},
    {60, 160, 70},
    {50, 80, 200},
    {220, 200, 60},
    {150, 70, 170},
    {70, 190, 200},
    {230, 230, 225},
    {40, 40, 45},
}};

struct Prototype {
  double r, ang, cx, cy;
  int bg0, bg1, fg;
};

bool shape_inside(int family, double dx, double dy, double r) {
  double ax = std::abs(dx), ay = std::abs(dy);
  switch (family) {
    case 0: return dx * dx + dy * dy < r * r;
    case 1: return ax < r * 0.8 && ay < r * 0.8;
    case 2: return dy < r * 0.7 && dy > -r * 0.9 + 1.8 * ax;
    case 3: return (ax < r * 0.3 || ay < r * 0.3) && ax < r && ay < r;
    case 4: {
      double d = std::sqrt(dx * dx + dy * dy);
      return d < r && d > r * 0.55;
    }
    case 5: return std::fmod(dy + r, r * 0.66) < r * 0.33 && ax < r && ay < r;
    case 6: return std::fmod(dx + r, r * 0.66) < r * 0.33 && ax < r && ay < r;
    case 7: return ax + ay < r;
    case 8: return (std::abs(dx - dy) < r * 0.35 || std::abs(dx + dy) < r * 0.35) && ax < r * 0.8 && ay < r * 0.8;
    default: return ax < r * 0.9 && ay < r * 0.9 && !(ax < r * 0.45 && ay < r * 0.45);
  }
}

ImageU8 render_sample(int cls, const Prototype& p, int side, const SynthStyle& st, SeededRng& rng) {
  const double unit = side / 32.0;
  int family = cls % 10;
  double twist = (cls / 10) * std::numbers::pi / 7.0;
  double cx = side / 2.0 + p.cx + rng.uniform(-st.position_jitter, st.position_jitter) * unit;
  double cy = side / 2.0 + p.cy + rng.uniform(-st.position_jitter, st.position_jitter) * unit;
  double r = p.r * rng.uniform(0.95, 1.05);
  std::array<std::array<double, 3>, 3> col;
  const int pal[3] = {p.bg0, p.bg1, p.fg};
  for (int k = 0; k < 3; ++k)
    for (int c = 0; c < 3; ++c) col[k][c] = kPalette[pal[k]][c] + rng.uniform(-st.color_jitter, st.color_jitter);

  PlaneF32 mask(side, side);
  double ct = std::cos(twist), sn = std::sin(twist);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      double rx = ct * dx + sn * dy, ry = -sn * dx + ct * dy;
      mask.at(y, x) = shape_inside(family, rx, ry, r) ? 1.f : 0.f;
    }
  if (st.edge_sigma > 0) {
    int rad = std::max(1, static_cast<int>(std::ceil(4 * st.edge_sigma)));
    mask = separable_filter(mask, gaussian_kernel(st.edge_sigma, rad));
  }

  PlaneF32 grain(side, side);
  if (st.grain > 0) {
    int g = side + 2;
    std::vector<double> raw(static_cast<size_t>(g) * g);
    for (auto& v : raw) v = rng.normal();
    double sum = 0, sum2 = 0;
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        double box = 0;
        for (int j = 0; j < 3; ++j)
          for (int i = 0; i < 3; ++i) box += raw[static_cast<size_t>(y + j) * g + x + i];
        double hp = raw[static_cast<size_t>(y + 1) * g + x + 1] - box / 9.0;
        grain.at(y, x) = static_cast<float>(hp);
        sum += hp;
        sum2 += hp * hp;
      }
    double n = static_cast<double>(side) * side;
    double sd = std::sqrt(std::max(sum2 / n - (sum / n) * (sum / n), 1e-12));
    for (auto& v : grain.data) v = static_cast<float>(st.grain * v / sd);
  }

  double ca = std::cos(p.ang), sa = std::sin(p.ang);
  double wmin = 1e30, wmax = -1e30;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double w = ca * x / side + sa * y / side;
      wmin = std::min(wmin, w);
      wmax = std::max(wmax, w);
    }
  ImageU8 img(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double w = (ca * x / side + sa * y / side - wmin) / (wmax - wmin + 1e-9);
      double m = mask.at(y, x);
      for (int c = 0; c < 3; ++c) {
        double bg = col[0][c] * (1 - w) + col[1][c] * w;
        double v = bg * (1 - m) + col[2][c] * m + grain.at(y, x);
        if (st.noise > 0) v += rng.normal(0.0, st.noise);
        img.at(y, x, c) = to_u8(v);
      }
    }
  return img;
}

}  // namespace

Dataset synth_dataset(int classes, int per_class, int side, uint64_t seed, const SynthStyle& style) {
  if (classes < 2) throw ValidationError("synth_dataset needs at least 2 classes");
  if (per_class < 0) throw ValidationError("per_class must be non-negative");
  if (side < 8 || side % 8 != 0)
    throw ValidationError("side " + std::to_string(side) + " must be a positive multiple of 8 for 8x8 block coding");
  if (style.prototypes_per_class < 1) throw ValidationError("prototypes_per_class must be >= 1");

  SeededRng root(seed);
  SeededRng prng = root.split(1);
  const double unit = side / 32.0;
  std::vector<std::vector<Prototype>> protos(classes);
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < style.prototypes_per_class; ++k) {
      Prototype p{};
      p.r = prng.uniform(7, 11) * unit;
      p.bg0 = static_cast<int>(prng.below(8));
      p.bg1 = static_cast<int>(prng.below(8));
      p.ang = prng.uniform(0, 2 * std::numbers::pi);
      p.cx = prng.uniform(-3, 3) * unit;
      p.cy = prng.uniform(-3, 3) * unit;
      do {
        p.fg = static_cast<int>(prng.below(8));
      } while (p.fg == p.bg0 || p.fg == p.bg1);
      protos[c].push_back(p);
    }

  SeededRng srng = root.split(2);
  Dataset ds;
  ds.num_classes = classes;
  ds.provenance = Provenance::synthetic;
  for (int c = 0; c < classes; ++c) ds.class_names.push_back("shape" + std::to_string(c));
  ds.samples.reserve(static_cast<size_t>(classes) * per_class);
  for (int k = 0; k < per_class; ++k)
    for (int c = 0; c < classes; ++c) {
      uint64_t id = static_cast<uint64_t>(k) * classes + c;
      SeededRng r = srng.split(id);
      const auto& p = protos[c][r.below(protos[c].size())];
      ds.samples.push_back({render_sample(c, p, side, style, r), c, id});
    }
  return ds;
}

// ---------------------------------------------------------------- import / export

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool dirs) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (dirs ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

bool has_png_ext(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png";
}

}  // namespace

ImportResult import_image_folder(const fs::path& root, const ImportOptions& opts) {
  if (opts.side < 8 || opts.side % 8 != 0)
    throw ValidationError("import side " + std::to_string(opts.side) + " must be a positive multiple of 8");
  if (!fs::is_directory(root)) throw ValidationError("not a directory: " + root.string());

  std::vector<std::pair<fs::path, int>> entries;
  ImportResult res;
  Dataset& ds = res.dataset;
  ds.provenance = Provenance::imported;

  if (opts.manifest) {
    std::ifstream f(*opts.manifest);
    if (!f) throw ValidationError("cannot open manifest " + opts.manifest->string());
    std::string line;
    int max_label = -1;
    size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw ValidationError("manifest line " + std::to_string(lineno) + " lacks a TAB separator");
      int label = std::stoi(line.substr(tab + 1));
      if (label < 0) throw ValidationError("manifest line " + std::to_string(lineno) + " has a negative class");
      entries.emplace_back(root / line.substr(0, tab), label);
      max_label = std::max(max_label, label);
    }
    ds.num_classes = max_label + 1;
    std::vector<int> counts(ds.num_classes, 0);
    for (auto& e : entries) ++counts[e.second];
    for (int c = 0; c < ds.num_classes; ++c) {
      if (counts[c] == 0) throw ValidationError("class " + std::to_string(c) + " has no samples in manifest");
      ds.class_names.push_back(std::to_string(c));
    }
  } else {
    auto dirs = sorted_entries(root, true);
    if (dirs.empty()) throw ValidationError("no class directories under " + root.string());
    for (size_t c = 0; c < dirs.size(); ++c) {
      size_t before = entries.size();
      for (const auto& f : sorted_entries(dirs[c], false))
        if (has_png_ext(f)) entries.emplace_back(f, static_cast<int>(c));
      if (entries.size() == before)
        throw ValidationError("class directory " + dirs[c].filename().string() + " contains no PNG files");
      ds.class_names.push_back(dirs[c].filename().string());
    }
    ds.num_classes = static_cast<int>(dirs.size());
  }
  if (ds.num_classes < 2) throw ValidationError("import needs at least 2 classes");

  uint64_t id = 0;
  for (const auto& [path, label] : entries) {
    try {
      ImageU8 img = read_png(path);
      ds.samples.push_back({resize_bilinear(img, opts.side, opts.side), label, id});
    } catch (const std::exception& e) {
      res.errors.push_back(path.string() + ": " + e.what());
    }
    ++id;
  }
  if (!res.errors.empty() && !opts.skip_invalid) {
    std::string msg = std::to_string(res.errors.size()) + " file(s) failed to decode:";
    for (const auto& e : res.errors) msg += "\n  " + e;
    msg += "\n(re-run with skip-invalid to import the remaining " + std::to_string(ds.samples.size()) + " files)";
    throw ImportError(msg, res.errors);
  }
  return res;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "images");
  std::ofstream man(dir / "manifest.tsv");
  std::ofstream ids(dir / "ids.txt");
  std::ofstream meta(dir / "classes.txt");
  if (!man || !ids || !meta) throw std::runtime_error("cannot write dataset under " + dir.string());
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.png", i);
    write_png(dir / name, ds.samples[i].image);
    man << name << '\t' << ds.samples[i].label << '\n';
    ids << ds.samples[i].id << '\n';
  }
  meta << "# provenance " << provenance_name(ds.provenance) << '\n';
  for (int c = 0; c < ds.num_classes; ++c)
    meta << (c < static_cast<int>(ds.class_names.size()) ? ds.class_names[c] : std::to_string(c)) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream meta(dir / "classes.txt");
  if (!meta) throw ValidationError("not a dataset directory (classes.txt missing): " + dir.string());
  Dataset ds;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.rfind("# provenance ", 0) == 0) {
      ds.provenance = parse_provenance(line.substr(13));
      continue;
    }
    ds.class_names.push_back(line);
  }
  ds.num_classes = static_cast<int>(ds.class_names.size());
  std::ifstream man(dir / "manifest.tsv");
  std::ifstream ids(dir / "ids.txt");
  uint64_t next_id = 0;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ValidationError("malformed manifest line: " + line);
    LabeledSample s;
    s.image = read_png(dir / line.substr(0, tab));
    s.label = std::stoi(line.substr(tab + 1));
    if (!(ids >> s.id)) s.id = next_id;
    next_id = s.id + 1;
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------- sampling

Selection sample_rand(const Dataset& ds, size_t n, SeededRng& rng) {
  if (n > ds.size())
    throw ValidationError("sample_rand: n=" + std::to_string(n) + " exceeds dataset size " + std::to_string(ds.size()));
  auto perm = rng.permutation(ds.size());
  std::vector<LabeledSample> sel, rem;
  sel.reserve(n);
  rem.reserve(ds.size() - n);
  for (size_t i = 0; i < perm.size(); ++i) (i < n ? sel : rem).push_back(ds.samples[perm[i]]);
  return {ds.with_samples(std::move(sel)), ds.with_samples(std::move(rem))};
}

Dataset partition_subset(const Dataset& ds, size_t i, size_t k, std::optional<uint64_t> shuffle_seed) {
  if (k == 0) throw ValidationError("partition_subset: k must be >= 1");
  if (i >= k)
    throw ValidationError("partition_subset: i=" + std::to_string(i) + " must be < k=" + std::to_string(k));
  std::vector<size_t> order(ds.size());
  for (size_t j = 0; j < order.size(); ++j) order[j] = j;
  if (shuffle_seed) {
    SeededRng rng(*shuffle_seed);
    rng.shuffle(order);
  }
  std::vector<LabeledSample> out;
  for (size_t j = i; j < order.size(); j += k) out.push_back(ds.samples[order[j]]);
  return ds.with_samples(std::move(out));
}

Dataset relabel(const Dataset& ds, int target) {
  if (target < 0 || target >= ds.num_classes)
    throw ValidationError("relabel: target " + std::to_string(target) + " outside [0," + std::to_string(ds.num_classes) +
                          ")");
  Dataset out = ds;
  for (auto& s : out.samples) s.label = target;
  return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.num_classes != b.num_classes) throw ValidationError("concat: class counts differ");
  Dataset out = a;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  if (a.provenance != b.provenance) out.provenance = Provenance::mixed;
  return out;
}

Dataset take(const Dataset& ds, const std::vector<size_t>& idx) {
  std::vector<LabeledSample> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(ds.samples.at(i));
  return ds.with_samples(std::move(out));
}

}  // namespace wmark
