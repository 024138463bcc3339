#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfl/objectives.hpp"
#include "pfl/participation.hpp"

namespace pfl {

/// Per-window participation statistics.
///   qbar_i = (1/P) sum_s q_s^i
///   w_i    = (1/N) sum_j 1[qbar_j > 0] / (P qbar_j) * sum_s q_s^i q_s^j
///   v_i    = qbar_i - 1/N
///   Lambda_i = ((1/P) sum z^2) / ((1/P) sum z)^2 over the weights z of the
///              window in which client i last participated
struct WindowStats {
  std::vector<double> qbar;
  std::vector<double> w;
  std::vector<double> v;
  std::vector<double> lambda;  // 0 for clients without participation history
  double v_sq_lambda = 0.0;    // sum_i v_i^2 Lambda_i
  double max_sum_q_sq = 0.0;   // max over rounds of sum_i (q_r^i)^2
  std::size_t lambda_missing = 0;
};

/// Remembers, for each client, the weights of the most recent window in
/// which it participated.
class ParticipationTracker {
 public:
  explicit ParticipationTracker(std::size_t n_clients);

  /// Records a completed window (all of its rounds).
  void absorb(std::span<const RoundParticipation> window);
  /// Lambda of the remembered window, or nullopt before any participation.
  std::optional<double> lambda(std::size_t client) const;
  std::size_t num_clients() const { return last_.size(); }

 private:
  std::vector<std::optional<double>> last_;
};

/// Lambda from a single window's weights of one client; nullopt if all zero.
std::optional<double> window_lambda(std::span<const RoundParticipation> window, std::size_t client);

/// Statistics of `window` with Lambda taken from the tracker's history (which
/// should not yet contain `window`).
WindowStats window_stats(std::span<const RoundParticipation> window, const ParticipationTracker& history);
/// Same, with Lambda taken from a single previous window.
WindowStats window_stats(std::span<const RoundParticipation> window,
                         std::span<const RoundParticipation> previous_window);

/// Draws `count` consecutive windows of length `window` (0: the pattern's
/// natural window) from rounds 0, P, 2P, ... with the given seed.
std::vector<std::vector<RoundParticipation>> sample_windows(const Scheduler& scheduler, std::size_t count,
                                                            std::size_t window, std::uint64_t seed);

struct QbarVarianceResult {
  std::vector<double> per_client;  // empirical Var[qbar_i]
  double mean_variance = 0.0;      // averaged over clients
  std::size_t trials = 0;
  std::size_t window = 0;
};

QbarVarianceResult qbar_variance_check(const Scheduler& scheduler, std::size_t trials, std::uint64_t seed,
                                       std::size_t window = 0);

/// Var[qbar_i] of cyclic participation with window P = m K:
/// (1 / (S N P)) (1 - S K / N).
double cyclic_qbar_variance(std::size_t n, std::size_t k_bar, std::size_t s, std::size_t window);

struct CheckResult {
  std::string check;
  std::string statistic;
  double expected = 0.0;
  double observed = 0.0;
  bool pass = false;
};

struct DiagnosticReport {
  std::vector<CheckResult> checks;

  bool all_passed() const;
  std::string to_csv() const;
  std::string to_text() const;
};

/// Monte Carlo check of the participation assumptions over `trials` windows:
///  (a) weights sum to one in every round and sum of squares <= rho^2;
///  (b) E[qbar_i] = 1/N within 4 standard errors (exact for patterns that
///      guarantee it; measured only for sca);
///  (c) P(qbar_i > 0) >= p_sample - 4 SE;
///  plus E[w_i] <= P^2/N and E[sum v^2 Lambda] <= rho^2, both within 4 SE.
DiagnosticReport assumption_suite(const Scheduler& scheduler, std::size_t trials, std::uint64_t seed,
                                  std::size_t window = 0);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_point = 0;
  std::size_t worst_client = 0;
  std::size_t points = 0;
  bool pass = false;
};

/// Central-difference gradient check of every client's local gradient at
/// `n_points` gaussian points (standard deviation `scale`). The error is
/// ||g - g_fd|| / max(||g||, ||g_fd||, 1e-12).
GradCheckResult grad_check(const Objective& objective, std::size_t n_points, double h, double tol,
                           std::uint64_t seed, double scale = 1.0);

}  // namespace pfl
