#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace wmark {

// Philox4x32-10 block function.
std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr, std::array<uint32_t, 2> key);

// Counter-based generator. A stream is identified by a 64-bit key; values are
// a pure function of (key, counter), so split() streams never overlap.
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed = 0);

  uint64_t seed() const { return key_; }
  uint64_t counter() const { return counter_; }

  uint32_t next_u32();
  uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  uint64_t below(uint64_t n);             // [0, n), unbiased
  int64_t range(int64_t lo, int64_t hi);  // [lo, hi] inclusive
  double normal();
  double normal(double mean, double stddev);

  SeededRng split(uint64_t tag) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<size_t> permutation(size_t n);

 private:
  void refill();

  uint64_t key_;
  uint64_t counter_ = 0;
  std::array<uint32_t, 4> buf_{};
  int avail_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace wmark
