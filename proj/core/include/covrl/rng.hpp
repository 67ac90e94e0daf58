#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace covrl {

// Deterministic random stream. All randomness in the library flows through
// this wrapper so that runs are reproducible bit for bit across platforms:
// the raw generator is mt19937_64 and every distribution transform is done
// by hand (libstdc++'s distribution objects are implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). n must be positive.
  int next_int(int n);

  // Standard normal via Box-Muller. Caches the second variate.
  double normal();

  double normal(double mean, double std) { return mean + std * normal(); }

  // Index sampled from an unnormalized non-negative weight vector.
  int categorical(std::span<const double> weights);

  // Stable stream derivation: mixes a base seed with a path of indices
  // (e.g. {step, instance, purpose}) so that substreams never depend on how
  // much randomness earlier substreams consumed.
  static uint64_t derive(uint64_t base, std::initializer_list<uint64_t> path);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace covrl
