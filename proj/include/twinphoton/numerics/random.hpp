#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace twinphoton {

/// SplitMix64 finalizer; used to derive independent engine seeds from (seed, shard).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic random stream keyed by (base_seed, shard_index).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Variates are generated here rather than through <random>
/// distributions, which are implementation-defined, so a given key yields the
/// same draws on every conforming platform.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t base_seed, std::uint64_t shard_index = 0)
      : base_seed_(base_seed),
        shard_index_(shard_index),
        engine_(splitmix64(splitmix64(base_seed) ^ splitmix64(~shard_index))) {}

  std::uint64_t base_seed() const noexcept { return base_seed_; }
  std::uint64_t shard_index() const noexcept { return shard_index_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Exponential waiting time with the given rate (mean 1/rate).
  double exponential(double rate) { return -std::log(uniform_open()) / rate; }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Poisson variate. Multiplication method below mean 10, PTRS (Hoermann 1993) above.
  std::uint64_t poisson(double mean) {
    if (!(mean > 0.0)) return 0;
    if (mean < 10.0) {
      const double limit = std::exp(-mean);
      double prod = uniform();
      std::uint64_t k = 0;
      while (prod > limit) {
        ++k;
        prod *= uniform();
      }
      return k;
    }
    const double slam = std::sqrt(mean);
    const double loglam = std::log(mean);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
      const double u = uniform() - 0.5;
      const double v = uniform();
      const double us = 0.5 - std::fabs(u);
      const double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
      if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
      if (k < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
          -mean + k * loglam - std::lgamma(k + 1.0)) {
        return static_cast<std::uint64_t>(k);
      }
    }
  }

  /// An independent stream for a sub-task, keyed off this stream's seed.
  RandomStream fork(std::uint64_t sub_index) const {
    return RandomStream(splitmix64(base_seed_ + 0x632be59bd9b4e019ULL * (shard_index_ + 1)), sub_index);
  }

 private:
  std::uint64_t base_seed_;
  std::uint64_t shard_index_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace twinphoton
