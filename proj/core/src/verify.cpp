#include "wmark/verify.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

namespace wmark {

double binomial_tail(int n, int m, double p) {
  if (n < 0) throw ValidationError("binomial_tail: n must be >= 0");
  if (m <= 0) return 1.0;
  if (m > n) return 0.0;
  if (p <= 0) return 0.0;
  if (p >= 1) return 1.0;
  const long double lp = std::log(static_cast<long double>(p));
  const long double lq = std::log1p(-static_cast<long double>(p));
  const long double lgn = std::lgamma(static_cast<long double>(n) + 1);
  auto term = [&](int k) {
    long double lc = lgn - std::lgamma(static_cast<long double>(k) + 1) - std::lgamma(static_cast<long double>(n - k) + 1);
    return std::exp(lc + k * lp + (n - k) * lq);
  };
  const int mode = static_cast<int>(std::floor((n + 1) * p));
  long double sum = 0;
  if (m > mode) {
    for (int k = n; k >= m; --k) sum += term(k);
  } else {
    long double lower = 0;
    for (int k = 0; k < m; ++k) lower += term(k);
    long double upper = 0;
    for (int k = n; k >= m; --k) upper += term(k);
    sum = upper < 0.5L ? upper : 1.0L - lower;
  }
  return static_cast<double>(std::clamp(sum, 0.0L, 1.0L));
}

namespace {

double resolve_null(int classes, double null_rate) {
  if (classes < 2) throw ValidationError("compute_threshold: classes must be >= 2");
  double p = null_rate > 0 ? null_rate : 1.0 / classes;
  if (p >= 1) throw ValidationError("null rate must be < 1");
  return p;
}

}  // namespace

int threshold_count(int n, int classes, double alpha, double null_rate) {
  if (n < 1) throw ValidationError("compute_threshold: n must be >= 1");
  if (!(alpha > 0 && alpha < 1)) throw ValidationError("compute_threshold: alpha must lie in (0,1)");
  const double p = resolve_null(classes, null_rate);
  for (int m = 0; m <= n; ++m)
    if (binomial_tail(n, m, p) < alpha) return m;
  int min_n = static_cast<int>(std::floor(std::log(alpha) / std::log(p))) + 1;
  while (std::pow(p, min_n) >= alpha) ++min_n;
  while (min_n > 1 && std::pow(p, min_n - 1) < alpha) --min_n;
  throw InsufficientQueries("insufficient queries: alpha=" + fmt_num(alpha, 10) + " is unreachable with n=" +
                                std::to_string(n) + " at null rate " + fmt_num(p, 6) + "; need at least n=" +
                                std::to_string(min_n),
                            min_n);
}

double compute_threshold(int n, int classes, double alpha, double null_rate) {
  return static_cast<double>(threshold_count(n, classes, alpha, null_rate)) / n;
}

const char* decision_name(Decision d) {
  switch (d) {
    case Decision::owned: return "owned";
    case Decision::not_owned: return "not-owned";
    case Decision::withheld: return "withheld";
  }
  return "?";
}

VerificationReport verify_ownership(PredictionOracle& oracle, const Dataset& ver, int target, double tau,
                                    const VerifyOptions& opts) {
  if (ver.empty()) throw ValidationError("verify: empty verification set");
  const int C = oracle.num_classes();
  if (target < 0 || target >= C) throw ValidationError("verify: target outside [0,C)");
  VerificationReport r;
  r.queries = static_cast<int>(ver.size());
  r.target = target;
  r.classes = C;
  r.alpha = opts.alpha;
  r.null_rate = resolve_null(C, opts.null_rate);
  r.tau = tau >= 0 ? tau : compute_threshold(r.queries, C, opts.alpha, opts.null_rate);

  auto pace = [&] {
    if (opts.queries_per_second > 0)
      std::this_thread::sleep_for(std::chrono::duration<double>(1.0 / opts.queries_per_second));
  };
  auto record = [&](int label) {
    ++r.answered;
    if (label == target) ++r.hits;
  };
  const size_t B = std::max<size_t>(1, opts.batch);
  for (size_t i = 0; i < ver.size(); i += B) {
    std::vector<const ImageU8*> ptrs;
    for (size_t j = i; j < std::min(ver.size(), i + B); ++j) ptrs.push_back(&ver[j].image);
    bool batched = opts.queries_per_second <= 0;
    if (batched) {
      try {
        auto labels = oracle.predict(ptrs);
        if (labels.size() != ptrs.size()) throw std::runtime_error("oracle returned a short batch");
        for (int l : labels) {
          if (l < 0 || l >= C) throw std::runtime_error("oracle returned class outside [0,C)");
        }
        for (int l : labels) record(l);
        continue;
      } catch (const std::exception&) {
      }
    }
    for (size_t j = 0; j < ptrs.size(); ++j) {
      pace();
      try {
        auto l = oracle.predict({ptrs[j]});
        if (l.size() != 1 || l[0] < 0 || l[0] >= C) throw std::runtime_error("invalid oracle answer");
        record(l[0]);
      } catch (const std::exception& e) {
        ++r.failed;
        if (r.failures.size() < 20) r.failures.push_back("query " + std::to_string(i + j) + ": " + e.what());
      }
    }
  }
  r.wsr = r.answered ? static_cast<double>(r.hits) / r.answered : 0.0;
  r.p_value = binomial_tail(r.answered, r.hits, r.null_rate);
  if (static_cast<double>(r.failed) > opts.max_failure_rate * r.queries)
    r.decision = Decision::withheld;
  else
    r.decision = r.wsr >= r.tau ? Decision::owned : Decision::not_owned;
  return r;
}

std::string VerificationReport::to_json() const {
  nlohmann::ordered_json j;
  j["queries"] = queries;
  j["answered"] = answered;
  j["failed"] = failed;
  j["hits"] = hits;
  j["target"] = target;
  j["classes"] = classes;
  j["wsr"] = wsr;
  j["threshold"] = tau;
  j["alpha"] = alpha;
  j["null_rate"] = null_rate;
  j["p_value"] = p_value;
  j["decision"] = decision_name(decision);
  j["failures"] = failures;
  return j.dump(2);
}

std::string VerificationReport::to_markdown() const {
  std::ostringstream os;
  os << "| queries | answered | failed | hits | WSR | threshold | alpha | p-value | decision |\n"
     << "|---|---|---|---|---|---|---|---|---|\n"
     << "| " << queries << " | " << answered << " | " << failed << " | " << hits << " | " << fmt_num(wsr, 4) << " | "
     << fmt_num(tau, 4) << " | " << alpha << " | " << p_value << " | " << decision_name(decision) << " |\n";
  return os.str();
}

HttpOracle::HttpOracle(const std::string& url, int classes, double timeout_seconds)
    : classes_(classes), timeout_(timeout_seconds) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ValidationError("oracle URL needs a scheme: " + url);
  auto slash = url.find('/', scheme + 3);
  base_ = slash == std::string::npos ? url : url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
  if (classes_ < 2) throw ValidationError("oracle class count must be >= 2");
}

int HttpOracle::query(const ImageU8& img) {
  httplib::Client cli(base_);
  auto secs = static_cast<time_t>(timeout_);
  auto usecs = static_cast<time_t>((timeout_ - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  auto png = encode_png(img);
  auto res = cli.Post(path_, reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
  if (!res) throw std::runtime_error("http oracle: " + httplib::to_string(res.error()));
  if (res->status != 200) throw std::runtime_error("http oracle: status " + std::to_string(res->status));
  size_t used = 0;
  int label = std::stoi(res->body, &used);
  for (size_t i = used; i < res->body.size(); ++i)
    if (!std::isspace(static_cast<unsigned char>(res->body[i])))
      throw std::runtime_error("http oracle: malformed answer '" + res->body + "'");
  if (label < 0 || label >= classes_) throw std::runtime_error("http oracle: class outside [0,C)");
  return label;
}

std::vector<int> HttpOracle::predict(const std::vector<const ImageU8*>& batch) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (const auto* img : batch) out.push_back(query(*img));
  return out;
}

}  // namespace wmark
