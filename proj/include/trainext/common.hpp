#pragma once

// Shared plumbing: error taxonomy, deterministic RNG, rounding and
// small string helpers used across the toolkit.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trainext {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes: data errors (parse, integrity,
// validation) -> 2, missing prerequisite artifacts -> 3, usage -> 1.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file content (bad CSV row, bad config value, ...).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Internally inconsistent data: duplicate ids, accounting mismatches,
// re-inserting an already present record.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition (bad argument ranges, length
// mismatches, degenerate inputs).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A pipeline phase is missing an artifact a previous phase should have made.
class DependencyError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Rounding used at the presentation layer. Internal values stay full
// precision; reports round half-up to a fixed number of decimals.
// ---------------------------------------------------------------------------

inline double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  if (value >= 0) return std::floor(value * scale + 0.5) / scale;
  return -std::floor(-value * scale + 0.5) / scale;
}

// ---------------------------------------------------------------------------
// Deterministic randomness. Every stochastic stage derives its own stream
// from (global seed, stage name), so stages can re-run independently and
// still reproduce.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) {
  // splitmix-style finalizer over seed ^ stage hash
  std::uint64_t z = global_seed ^ fnv1a64(stage);
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// mt19937_64 with hand-rolled distributions; std:: distributions are not
// portable across standard libraries and we want stable streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [lo, hi] inclusive
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(gen_());  // full range
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Marsaglia polar method
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Plain shuffled epoch order.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  return idx;
}

// OpenCV-style reflect101 border indexing: gfedcb|abcdefgh|gfedcba
inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// ---------------------------------------------------------------------------
// String helpers
// ---------------------------------------------------------------------------

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

}  // namespace trainext
