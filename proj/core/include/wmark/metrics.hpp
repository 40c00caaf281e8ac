#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "wmark/dataset.hpp"
#include "wmark/image.hpp"

namespace wmark {

class PredictionOracle {
 public:
  virtual ~PredictionOracle() = default;
  virtual int num_classes() const = 0;
  virtual std::vector<int> predict(const std::vector<const ImageU8*>& batch) = 0;
  // Class probabilities; hard-label oracles report one-hot rows.
  virtual std::vector<std::vector<double>> probabilities(const std::vector<const ImageU8*>& batch);
};

std::vector<int> predict_all(PredictionOracle& oracle, const Dataset& ds, size_t batch = 256);

// Index of the maximum; ties go to the lowest index.
template <typename T>
int argmax(const T* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double psnr(const ImageU8& a, const ImageU8& b);
double ssim(const ImageU8& a, const ImageU8& b);
double accuracy(PredictionOracle& oracle, const Dataset& ds);
double wsr(PredictionOracle& oracle, const Dataset& verification, int target);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 255.0;
};
double ssim(const ImageU8& a, const ImageU8& b, const SsimParams& params);

struct CovertnessReport {
  double mean_psnr = 0;
  double mean_ssim = 0;
  size_t count = 0;
  size_t identical = 0;  // pairs with infinite PSNR, excluded from the PSNR mean
};
CovertnessReport covertness(const Dataset& original, const Dataset& forged);

std::string format_psnr(double db);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
  std::string to_csv() const;
  std::string to_markdown() const;
  void write_csv(const std::filesystem::path& path) const;
  static Table read_csv(const std::filesystem::path& path);
};

std::string fmt_num(double v, int precision = 4);

}  // namespace wmark
