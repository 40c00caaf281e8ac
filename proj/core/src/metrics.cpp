#include "wmark/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "wmark/codec.hpp"

namespace wmark {

std::vector<std::vector<double>> PredictionOracle::probabilities(const std::vector<const ImageU8*>& batch) {
  auto labels = predict(batch);
  std::vector<std::vector<double>> out(labels.size(), std::vector<double>(num_classes(), 0.0));
  for (size_t i = 0; i < labels.size(); ++i) out[i][labels[i]] = 1.0;
  return out;
}

std::vector<int> predict_all(PredictionOracle& oracle, const Dataset& ds, size_t batch) {
  std::vector<int> out;
  out.reserve(ds.size());
  std::vector<const ImageU8*> ptrs;
  for (size_t i = 0; i < ds.size(); i += batch) {
    ptrs.clear();
    for (size_t j = i; j < std::min(ds.size(), i + batch); ++j) ptrs.push_back(&ds.samples[j].image);
    auto p = oracle.predict(ptrs);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

double psnr(const ImageU8& a, const ImageU8& b) {
  if (!a.same_shape(b)) throw ValidationError("psnr: image sizes differ");
  double se = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  if (se == 0) return kPsnrIdentical;
  double mse = se / static_cast<double>(a.data.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const ImageU8& a, const ImageU8& b) { return ssim(a, b, SsimParams{}); }

double ssim(const ImageU8& a, const ImageU8& b, const SsimParams& prm) {
  if (!a.same_shape(b)) throw ValidationError("ssim: image sizes differ");
  if (a.height < prm.window || a.width < prm.window)
    throw ValidationError("ssim: image smaller than the " + std::to_string(prm.window) + "x" +
                          std::to_string(prm.window) + " window");
  PlaneF32 ya = rgb_to_ycbcr(a).y, yb = rgb_to_ycbcr(b).y;
  auto w1 = gaussian_kernel(prm.sigma, prm.window / 2);
  const double c1 = std::pow(prm.k1 * prm.range, 2), c2 = std::pow(prm.k2 * prm.range, 2);
  const int oh = a.height - prm.window + 1, ow = a.width - prm.window + 1;
  double total = 0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < prm.window; ++i)
        for (int j = 0; j < prm.window; ++j) {
          double w = w1[i] * w1[j];
          double va = ya.at(y + i, x + j), vb = yb.at(y + i, x + j);
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return total / (static_cast<double>(oh) * ow);
}

double accuracy(PredictionOracle& oracle, const Dataset& ds) {
  if (ds.empty()) throw ValidationError("accuracy: empty dataset");
  auto pred = predict_all(oracle, ds);
  size_t hit = 0;
  for (size_t i = 0; i < ds.size(); ++i) hit += pred[i] == ds.samples[i].label;
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

double wsr(PredictionOracle& oracle, const Dataset& ver, int target) {
  if (ver.empty()) throw ValidationError("wsr: empty verification set");
  auto pred = predict_all(oracle, ver);
  size_t hit = 0;
  for (int p : pred) hit += p == target;
  return static_cast<double>(hit) / static_cast<double>(ver.size());
}

CovertnessReport covertness(const Dataset& original, const Dataset& forged) {
  if (original.size() != forged.size()) throw ValidationError("covertness: dataset sizes differ");
  CovertnessReport r;
  double ps = 0, ss = 0;
  size_t finite = 0;
  for (size_t i = 0; i < original.size(); ++i) {
    double p = psnr(original[i].image, forged[i].image);
    if (std::isinf(p)) {
      ++r.identical;
    } else {
      ps += p;
      ++finite;
    }
    ss += ssim(original[i].image, forged[i].image);
  }
  r.count = original.size();
  r.mean_psnr = finite ? ps / static_cast<double>(finite) : kPsnrIdentical;
  r.mean_ssim = r.count ? ss / static_cast<double>(r.count) : 0;
  return r;
}

std::string format_psnr(double db) { return std::isinf(db) ? "inf" : fmt_num(db, 2); }

std::string fmt_num(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string Table::to_csv() const {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    for (size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << csv_escape(r[i]);
    os << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return os.str();
}

std::string Table::to_markdown() const {
  std::ostringstream os;
  os << '|';
  for (const auto& h : header) os << ' ' << h << " |";
  os << "\n|";
  for (size_t i = 0; i < header.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& r : rows) {
    os << '|';
    for (const auto& c : r) os << ' ' << c << " |";
    os << '\n';
  }
  return os.str();
}

void Table::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << to_csv();
}

Table Table::read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (first) {
      t.header = csv_split(line);
      first = false;
    } else {
      t.rows.push_back(csv_split(line));
    }
  }
  return t;
}

}  // namespace wmark
