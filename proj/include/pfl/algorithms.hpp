#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pfl/model_vector.hpp"
#include "pfl/objectives.hpp"
#include "pfl/participation.hpp"
#include "pfl/run_config.hpp"
#include "pfl/worker_pool.hpp"

namespace pfl {

struct LocalStepConfig {
  std::size_t steps = 1;
  double eta = 0.01;
  double mu = 0.0;  // proximal weight, fedprox only
};

struct LocalUpdate {
  ModelVector end;
  ModelVector grad_sum;  // sum of the raw stochastic gradients drawn
};

/// Control-variate pair used by a corrected local step: direction is
/// grad - client + global.
struct Correction {
  const ModelVector* client = nullptr;
  const ModelVector* global = nullptr;
};

/// Runs I local steps from `start`. Noise for step k is keyed by
/// (seed, client, round, k, gradient_noise). Throws NonFiniteError as soon as
/// an iterate leaves the finite range.
LocalUpdate client_local_update(const Objective& objective, Algorithm algorithm, std::size_t client,
                                const ModelVector& start, std::optional<Correction> correction,
                                const LocalStepConfig& steps, std::size_t round, std::uint64_t seed);

struct ControlVariateState {
  std::vector<ModelVector> per_client;
  ModelVector global;
  // Window accumulators (amplified variant only).
  std::vector<ModelVector> window_accum;
  std::vector<double> window_qbar;

  std::size_t num_clients() const { return per_client.size(); }
  void recompute_global();
  void reset_window();
};

/// Initial control variates at x0. Warm start averages I stochastic gradients
/// per client with keys (seed, client, 0, k, init); zero start uses zeros.
ControlVariateState control_variate_init(CvInit mode, const Objective& objective, const ModelVector& x0,
                                         std::size_t local_steps, std::uint64_t seed);

struct ServerState {
  ModelVector global_x;  // outer iterate, updated at window boundaries
  ModelVector inner_w;   // start point of the next round
  std::size_t rounds_in_window = 0;
  std::optional<ControlVariateState> cv;
};

ServerState make_server_state(const ModelVector& x0, std::optional<ControlVariateState> cv = std::nullopt);

/// Aggregates one round: inner_w <- sum_i q_i * end_i. `updates` is indexed by
/// client and must hold an entry exactly for the sampled clients. With
/// control variates, also accumulates q_i * grad_sum_i and q_i / window.
void server_round(ServerState& state, const RoundParticipation& participation,
                  std::span<const std::optional<LocalUpdate>> updates, std::size_t window);

/// Closes a window of `window` rounds: global_x moves by gamma toward inner_w
/// and inner_w restarts from it. With refresh_cv, clients that participated in
/// the window get G_i = accum_i / (P * qbar_i * I) and G is recomputed as the
/// mean. Throws std::logic_error when the window is not complete.
void window_finalize(ServerState& state, double gamma, bool refresh_cv, std::size_t window,
                     std::size_t local_steps);

/// Per-round SCAFFOLD (option II): each sampled client sets
/// c_i <- c_i - c + (w - end_i) / (I * eta), c becomes the mean of the c_i,
/// and the model is the weighted average of the ends.
void scaffold_round(ServerState& state, const RoundParticipation& participation,
                    std::span<const std::optional<LocalUpdate>> updates, std::size_t local_steps, double eta);

/// Window length used by an algorithm under a configuration: the configured
/// or natural window for amplified algorithms, 1 otherwise.
std::size_t effective_window(const RunConfig& cfg, const Scheduler& scheduler);

/// Drives rounds of one algorithm. Client updates of a round are computed in
/// parallel but aggregated in client order, so results do not depend on the
/// thread count.
class Simulation {
 public:
  Simulation(const RunConfig& cfg, const Objective& objective, const Scheduler& scheduler,
             WorkerPool* pool = nullptr);

  /// Executes round `round()` and advances the counter.
  void step();

  std::size_t round() const { return round_; }
  std::size_t window() const { return window_; }
  const ServerState& state() const { return state_; }
  /// Model reported for evaluation: the outer iterate.
  const ModelVector& model() const { return state_.global_x; }
  std::uint64_t uplink_scalars() const { return uplink_; }
  const RoundParticipation& last_participation() const { return last_; }

 private:
  RunConfig cfg_;
  const Objective& objective_;
  const Scheduler& scheduler_;
  WorkerPool* pool_;
  std::size_t window_;
  LocalStepConfig steps_;
  ServerState state_;
  std::size_t round_ = 0;
  std::uint64_t uplink_ = 0;
  RoundParticipation last_;
};

}  // namespace pfl
