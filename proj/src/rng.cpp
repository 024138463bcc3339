#include "pfl/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pfl {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t absorb(std::uint64_t h, std::uint64_t v) { return mix64(h ^ mix64(v + kGolden)); }

}  // namespace

RngStream::RngStream(const RngStreamKey& key) {
  std::uint64_t h = mix64(key.seed ^ 0x5EEDF00DULL);
  h = absorb(h, static_cast<std::uint64_t>(key.purpose));
  h = absorb(h, key.client);
  h = absorb(h, key.round);
  h = absorb(h, key.step);
  state_ = h;
}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(state_ + counter_ * kGolden);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::gaussian(double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("gaussian: negative sigma");
  double z;
  if (has_spare_) {
    has_spare_ = false;
    z = spare_;
  } else {
    // Box-Muller; 1 - u lies in (0, 1] so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    z = r * std::cos(theta);
    spare_ = r * std::sin(theta);
    has_spare_ = true;
  }
  if (sigma == 0.0) return 0.0;
  return sigma * z;
}

std::uint64_t RngStream::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("below: zero bound");
  // Lemire's rejection method keeps the result exactly uniform.
  std::uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

void RngStream::fill_gaussian(std::span<double> out, double sigma) {
  for (double& v : out) v = gaussian(sigma);
}

double next_uniform(const RngStreamKey& key) { return RngStream(key).uniform(); }

double next_gaussian(const RngStreamKey& key, double sigma) { return RngStream(key).gaussian(sigma); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return absorb(mix64(base + 0xD1B54A32D192ED03ULL), index);
}

}  // namespace pfl
