#pragma once

#include <cstdint>
#include <span>

namespace pfl {

enum class RngPurpose : std::uint64_t {
  gradient_noise = 1,
  sampling = 2,
  partition = 3,
  init = 4,
};

/// Coordinates of one random stream. Every draw in the simulator is addressed
/// by such a key, so results never depend on evaluation order or thread count.
struct RngStreamKey {
  std::uint64_t seed = 0;
  std::uint64_t client = 0;
  std::uint64_t round = 0;
  std::uint64_t step = 0;
  RngPurpose purpose = RngPurpose::gradient_noise;

  friend bool operator==(const RngStreamKey&, const RngStreamKey&) = default;
};

/// Counter-based generator: value n of the stream is mix(state(key) + n).
/// Copying a stream forks it; two copies yield the same sequence.
class RngStream {
 public:
  explicit RngStream(const RngStreamKey& key);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random mantissa bits.
  double uniform();
  /// N(0, sigma^2). Throws std::invalid_argument on negative sigma.
  double gaussian(double sigma = 1.0);
  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);
  void fill_gaussian(std::span<double> out, double sigma);

 private:
  std::uint64_t state_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// First uniform of the stream addressed by key.
double next_uniform(const RngStreamKey& key);
/// First gaussian of the stream addressed by key; sigma = 0 returns exactly 0.
double next_gaussian(const RngStreamKey& key, double sigma);

/// Derive an independent 64-bit seed from a base seed and an index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace pfl
