#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace odpfl {

// Deterministic random source. Built on the (fully specified) mt19937_64
// engine with hand-rolled conversions, so streams are identical across
// standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed == 0 ? 0x9e3779b97f4a7c15ull : seed) {
    // warm up splitmix, then seed the twister
    uint64_t s = state_;
    std::uint_fast64_t init[4];
    for (auto& x : init) x = splitmix(s);
    mt_init(init[0] ^ init[1] ^ (init[2] << 1) ^ init[3]);
  }

  uint64_t next_u64() { return mt_next(); }

  // uniform in [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  int uniform_int(int n) {
    uint64_t bound = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<int>(x % bound);
  }

  // standard normal via Box-Muller, spare cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

  // first k of a shuffled [0, n) index range; k <= n
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    shuffle(idx);
    idx.resize(static_cast<size_t>(k));
    return idx;
  }

 private:
  static uint64_t splitmix(uint64_t& s) {
    s += 0x9e3779b97f4a7c15ull;
    uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // minimal mt19937_64 (the standard engine, spelled out so no std::
  // distribution semantics leak in)
  void mt_init(uint64_t seed) {
    mt_[0] = seed;
    for (unsigned i = 1; i < kN; ++i)
      mt_[i] = 6364136223846793005ull * (mt_[i - 1] ^ (mt_[i - 1] >> 62)) + i;
    mti_ = kN;
  }

  uint64_t mt_next() {
    if (mti_ >= kN) {
      for (unsigned i = 0; i < kN; ++i) {
        uint64_t x = (mt_[i] & 0xFFFFFFFF80000000ull) | (mt_[(i + 1) % kN] & 0x7FFFFFFFull);
        uint64_t y = x >> 1;
        if (x & 1ull) y ^= 0xB5026F5AA96619E9ull;
        mt_[i] = mt_[(i + 156) % kN] ^ y;
      }
      mti_ = 0;
    }
    uint64_t x = mt_[mti_++];
    x ^= (x >> 29) & 0x5555555555555555ull;
    x ^= (x << 17) & 0x71D67FFFEDA60000ull;
    x ^= (x << 37) & 0xFFF7EEE000000000ull;
    x ^= x >> 43;
    return x;
  }

  static constexpr unsigned kN = 312;
  uint64_t state_;
  uint64_t mt_[kN];
  unsigned mti_ = kN + 1;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Sub-seed derivation: hash(root, purpose label). Adding a new purpose
// never perturbs the stream of an existing one.
inline uint64_t derive_seed(uint64_t root, std::string_view label) {
  uint64_t s = root ^ fnv1a64(label);
  s += 0x9e3779b97f4a7c15ull;
  uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace odpfl
