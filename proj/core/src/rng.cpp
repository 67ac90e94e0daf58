#include "covrl/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace covrl {

namespace {
uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

int Rng::next_int(int n) {
  if (n <= 0) throw std::invalid_argument("Rng::next_int: n must be positive");
  // Rejection sampling to avoid modulo bias.
  const uint64_t bound = n;
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t raw;
  do {
    raw = gen_();
  } while (raw >= limit);
  return static_cast<int>(raw % bound);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = next_double();
  while (u1 <= 0.0) u1 = next_double();
  const double u2 = next_double();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  have_spare_ = true;
  return radius * std::cos(angle);
}

int Rng::categorical(std::span<const double> weights) {
  if (weights.empty()) throw std::invalid_argument("Rng::categorical: empty weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("Rng::categorical: negative or NaN weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("Rng::categorical: all weights zero");
  double u = next_double() * total;
  for (size_t i = 0; i + 1 < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size() - 1);
}

uint64_t Rng::derive(uint64_t base, std::initializer_list<uint64_t> path) {
  uint64_t h = splitmix64(base);
  for (uint64_t p : path) h = splitmix64(h ^ (p + 0x9e3779b97f4a7c15ULL));
  return h;
}

}  // namespace covrl
