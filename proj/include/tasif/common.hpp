// Shared small utilities: error checks, shapes, deterministic RNG, hashing.
#pragma once

#include <cstdint>
#include <cstring>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tasif {

using i64 = std::int64_t;
using u64 = std::uint64_t;
using Shape = std::vector<i64>;

[[noreturn]] inline void fail(const std::string& what) {
  throw std::invalid_argument(what);
}

#define TASIF_CHECK(cond, msg)                                  \
  do {                                                          \
    if (!(cond)) {                                              \
      std::ostringstream oss_;                                  \
      oss_ << "check failed: " << msg;                          \
      ::tasif::fail(oss_.str());                                \
    }                                                           \
  } while (0)

inline i64 numel(const Shape& s) {
  i64 n = 1;
  for (i64 d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream oss;
  oss << "[";
  for (size_t i = 0; i < s.size(); ++i) oss << (i ? "x" : "") << s[i];
  oss << "]";
  return oss.str();
}

inline bool is_power_of_two(i64 n) { return n > 0 && (n & (n - 1)) == 0; }

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// value mappings below are hand-rolled so streams are identical across
// library implementations (std distributions are not portable).
class Rng {
 public:
  explicit Rng(u64 seed) : eng_(seed) {}

  u64 next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // uniform integer in [lo, hi] via rejection
  i64 randint(i64 lo, i64 hi) {
    TASIF_CHECK(hi >= lo, "randint: empty range");
    u64 span = static_cast<u64>(hi - lo) + 1;
    u64 limit = std::numeric_limits<u64>::max() - std::numeric_limits<u64>::max() % span;
    u64 v;
    do { v = eng_(); } while (v >= limit);
    return lo + static_cast<i64>(v % span);
  }

  // standard normal via Box-Muller (cached spare)
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do { u1 = uniform(); } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // normal(0, stddev) rejected outside +-2 stddev
  double truncated_normal(double stddev) {
    double v;
    do { v = normal(); } while (std::fabs(v) > 2.0);
    return v * stddev;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {  // Fisher-Yates
    for (i64 i = static_cast<i64>(v.size()) - 1; i > 0; --i) {
      i64 j = randint(0, i);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline u64 fnv1a64(const void* bytes, size_t len, u64 h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline u64 fnv1a64(std::string_view s, u64 h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

// splitmix64 finalizer; used to derive independent seeds from (seed, epoch, step)
inline u64 mix_seed(u64 a, u64 b = 0, u64 c = 0) {
  u64 z = a + 0x9e3779b97f4a7c15ull * (b + 1) + 0x2545f4914f6cdd1dull * (c + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace tasif
