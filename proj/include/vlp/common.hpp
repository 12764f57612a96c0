#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlp {

// ---------------------------------------------------------------------------
// Errors. Every failure mode in the library maps onto one of these.
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

struct DegenerateInputError : std::runtime_error {
  explicit DegenerateInputError(const std::string& msg)
      : std::runtime_error("degenerate input: " + msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg)
      : std::runtime_error("checkpoint error: " + msg) {}
};

struct SequencingError : std::runtime_error {
  explicit SequencingError(const std::string& msg)
      : std::runtime_error("sequencing error: " + msg) {}
};

// ---------------------------------------------------------------------------
// Shape: up to 4 dims, row-major semantics throughout the library.
// ---------------------------------------------------------------------------

struct Shape {
  std::array<int64_t, 4> d{1, 1, 1, 1};
  int nd = 0;

  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) {
    if (dims.size() > 4) throw InputError("Shape supports at most 4 dims");
    nd = static_cast<int>(dims.size());
    int i = 0;
    for (int64_t v : dims) d[i++] = v;
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < nd; ++i) n *= d[i];
    return n;
  }
  int64_t operator[](int i) const { return d[i]; }
  bool operator==(const Shape& o) const {
    if (nd != o.nd) return false;
    for (int i = 0; i < nd; ++i)
      if (d[i] != o.d[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < nd; ++i) s += std::to_string(d[i]) + (i + 1 < nd ? "," : "");
    return s + "]";
  }
};

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 core with our own uniform/normal transforms so
// that streams are identical across standard libraries.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) {
  return splitmix64(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    // splitmix-expanded seeding of the 312-word mt19937_64 state
    uint64_t s = seed;
    for (int i = 0; i < kN; ++i) {
      s = splitmix64(s);
      state_[i] = s;
    }
    idx_ = kN;
  }

  uint64_t next_u64() {
    if (idx_ >= kN) twist();
    uint64_t x = state_[idx_++];
    x ^= (x >> 29) & 0x5555555555555555ULL;
    x ^= (x << 17) & 0x71d67fffeda60000ULL;
    x ^= (x << 37) & 0xfff7eee000000000ULL;
    x ^= (x >> 43);
    return x;
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw InputError("uniform_int: n must be > 0");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, one value per call (second value discarded for stream clarity)
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // serialization: full generator state
  std::vector<uint64_t> save_state() const {
    std::vector<uint64_t> s(state_.begin(), state_.end());
    s.push_back(static_cast<uint64_t>(idx_));
    return s;
  }
  void load_state(const std::vector<uint64_t>& s) {
    if (s.size() != kN + 1) throw CheckpointError("rng state has wrong length");
    for (int i = 0; i < kN; ++i) state_[i] = s[i];
    idx_ = static_cast<int>(s[kN]);
    if (idx_ < 0 || idx_ > kN) throw CheckpointError("rng state index out of range");
  }
  bool operator==(const Rng& o) const { return state_ == o.state_ && idx_ == o.idx_; }

 private:
  static constexpr int kN = 312;
  static constexpr int kM = 156;
  std::array<uint64_t, kN> state_{};
  int idx_ = kN;

  void twist() {
    constexpr uint64_t kMatrixA = 0xb5026f5aa96619e9ULL;
    constexpr uint64_t kUpper = 0xffffffff80000000ULL;
    constexpr uint64_t kLower = 0x7fffffffULL;
    for (int i = 0; i < kN; ++i) {
      uint64_t x = (state_[i] & kUpper) | (state_[(i + 1) % kN] & kLower);
      uint64_t xa = (x >> 1) ^ ((x & 1) ? kMatrixA : 0);
      state_[i] = state_[(i + kM) % kN] ^ xa;
    }
    idx_ = 0;
  }
};

// Derive an independent stream from a seed and a path of tags.
inline Rng stream_rng(uint64_t seed, std::initializer_list<uint64_t> path) {
  uint64_t h = splitmix64(seed);
  for (uint64_t p : path) h = hash_combine(h, p);
  return Rng(h);
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// Keep glibc from routing the tape's multi-megabyte buffers through
// mmap/munmap on every step; call once near the start of main().
void tune_allocator();

}  // namespace vlp
