#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

namespace vtn {

// Seedable generator (splitmix64) used by everything stochastic in the
// project. <random> distributions are implementation-defined, so uniform /
// normal / shuffle are implemented here to keep runs bit-reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // Disjoint stream derived from a base seed; parallel workers take
  // distinct stream indices.
  static Rng stream(uint64_t seed, uint64_t stream_index) {
    Rng r(seed ^ (0x9e3779b97f4a7c15ULL * (stream_index + 1)));
    r.next_u64();
    return r;
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], both inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates.
  template <class RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    for (auto i = (last - first) - 1; i > 0; --i) {
      auto j = uniform_int(0, i);
      std::swap(first[i], first[j]);
    }
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vtn
