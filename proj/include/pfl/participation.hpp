#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pfl/run_config.hpp"

namespace pfl {

/// Aggregation weights q_r^i of one round. Every sampled client carries the
/// same weight 1 / weight_denominator, so the weights sum to one exactly in
/// rational arithmetic (sampled.size() == weight_denominator).
struct RoundParticipation {
  std::vector<double> weights;
  std::vector<std::size_t> sampled;  // ascending
  std::size_t weight_denominator = 1;

  double sum_of_squares() const;
};

/// Builds a participation giving weight 1/|sampled| to each listed client.
RoundParticipation uniform_participation(std::size_t n_clients, std::vector<std::size_t> sampled);

struct PatternParams {
  double rho_sq = 1.0;
  std::size_t window = 1;
  double p_sample = 1.0;
};

/// Stateless participation pattern: the round-r draw depends only on (r, seed).
class Scheduler {
 public:
  virtual ~Scheduler() = default;
  virtual std::size_t num_clients() const = 0;
  virtual RoundParticipation sample_round(std::size_t round, std::uint64_t seed) const = 0;
  virtual PatternParams pattern_params() const = 0;
  virtual std::string name() const = 0;
  /// True when every window of the natural length averages to exactly 1/N per client.
  virtual bool exact_window_average() const { return false; }
};

/// S of N clients uniformly without replacement each round.
class IidScheduler final : public Scheduler {
 public:
  IidScheduler(std::size_t n_clients, std::size_t s_clients);
  std::size_t num_clients() const override { return n_; }
  RoundParticipation sample_round(std::size_t round, std::uint64_t seed) const override;
  PatternParams pattern_params() const override;
  std::string name() const override { return "iid"; }

 private:
  std::size_t n_, s_;
};

/// N clients in K contiguous groups; group floor(r / g) mod K is eligible and S
/// of its members are sampled. g = 1 is plain cyclic participation.
class GroupedCyclicScheduler final : public Scheduler {
 public:
  GroupedCyclicScheduler(std::size_t n_clients, std::size_t k_bar, std::size_t s_clients,
                         std::size_t avail_rounds_g = 1);
  std::size_t num_clients() const override { return n_; }
  RoundParticipation sample_round(std::size_t round, std::uint64_t seed) const override;
  PatternParams pattern_params() const override;
  std::string name() const override { return g_ == 1 ? "cyclic" : "grouped_cyclic"; }

  std::size_t active_group(std::size_t round) const { return (round / g_) % k_; }
  std::size_t group_of(std::size_t client) const { return client / (n_ / k_); }

 private:
  std::size_t n_, k_, s_, g_;
};

/// Round-robin over a seed-fixed permutation split into P slots of N/P clients,
/// so every client's window-averaged weight is exactly 1/N.
class RegularizedScheduler final : public Scheduler {
 public:
  RegularizedScheduler(std::size_t n_clients, std::size_t window_p);
  std::size_t num_clients() const override { return n_; }
  RoundParticipation sample_round(std::size_t round, std::uint64_t seed) const override;
  PatternParams pattern_params() const override;
  std::string name() const override { return "regularized"; }
  bool exact_window_average() const override { return true; }

 private:
  std::size_t n_, p_;
};

/// Stochastic cyclic availability: members of the active group are available
/// with probability p_active, others with p_inactive; S are drawn from the
/// available set (all of them, with weight 1/|available|, if fewer than S).
class ScaScheduler final : public Scheduler {
 public:
  static constexpr int kMaxRetries = 100;

  ScaScheduler(std::size_t n_clients, std::size_t k_bar, std::size_t s_clients, std::size_t avail_rounds_g,
               double p_active, double p_inactive);
  std::size_t num_clients() const override { return n_; }
  RoundParticipation sample_round(std::size_t round, std::uint64_t seed) const override;
  /// Nominal values of the matching cyclic pattern; SCA rounds may exceed rho_sq.
  PatternParams pattern_params() const override;
  std::string name() const override { return "sca"; }

 private:
  std::size_t n_, k_, s_, g_;
  double p_active_, p_inactive_;
};

std::unique_ptr<Scheduler> make_scheduler(const RunConfig& cfg);

}  // namespace pfl
