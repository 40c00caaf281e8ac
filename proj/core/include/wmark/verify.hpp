#pragma once

#include <string>
#include <vector>

#include "wmark/dataset.hpp"
#include "wmark/metrics.hpp"

namespace wmark {

// P[Binomial(n, p) >= m], summed exactly over the tail.
double binomial_tail(int n, int m, double p);

class InsufficientQueries : public ValidationError {
 public:
  InsufficientQueries(const std::string& what, int min_queries) : ValidationError(what), min_queries(min_queries) {}
  int min_queries;
};

// Smallest m/n with P[Binomial(n, null_rate) >= m] < alpha; null_rate <= 0 means 1/C.
double compute_threshold(int n, int classes, double alpha, double null_rate = 0);
int threshold_count(int n, int classes, double alpha, double null_rate = 0);

enum class Decision { owned, not_owned, withheld };
const char* decision_name(Decision d);

struct VerificationReport {
  int queries = 0;
  int answered = 0;
  int failed = 0;
  int hits = 0;
  int target = 0;
  int classes = 0;
  double wsr = 0;
  double tau = 0;
  double alpha = 0;
  double null_rate = 0;
  double p_value = 1;
  Decision decision = Decision::not_owned;
  std::vector<std::string> failures;

  std::string to_json() const;
  std::string to_markdown() const;
};

struct VerifyOptions {
  double alpha = 1e-6;
  double null_rate = 0;          // 0 -> 1/C
  double max_failure_rate = 0.05;
  double queries_per_second = 0;  // 0 -> unlimited
  size_t batch = 64;
};

// tau < 0 derives the threshold from (|D_v|, C, alpha, null_rate).
VerificationReport verify_ownership(PredictionOracle& oracle, const Dataset& verification, int target, double tau,
                                    const VerifyOptions& opts = {});

// Black-box endpoint: POST PNG bytes, response body is the class index.
class HttpOracle : public PredictionOracle {
 public:
  HttpOracle(const std::string& url, int classes, double timeout_seconds = 10);
  int num_classes() const override { return classes_; }
  std::vector<int> predict(const std::vector<const ImageU8*>& batch) override;
  int query(const ImageU8& img);

 private:
  std::string base_;
  std::string path_;
  int classes_;
  double timeout_;
};

}  // namespace wmark
