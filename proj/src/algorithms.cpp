#include "pfl/algorithms.hpp"

#include <stdexcept>
#include <string>

#include "pfl/rng.hpp"

namespace pfl {

namespace {

void check_updates(const RoundParticipation& participation, std::span<const std::optional<LocalUpdate>> updates) {
  if (updates.size() != participation.weights.size())
    throw std::invalid_argument("updates must be indexed by client");
  std::size_t present = 0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const bool sampled = participation.weights[i] > 0.0;
    if (sampled != updates[i].has_value())
      throw std::invalid_argument("update presence does not match sampling for client " + std::to_string(i));
    present += sampled ? 1 : 0;
  }
  if (present != participation.sampled.size()) throw std::invalid_argument("inconsistent participation");
}

ModelVector weighted_average_of_ends(const RoundParticipation& participation,
                                     std::span<const std::optional<LocalUpdate>> updates, std::size_t dim) {
  ModelVector out(dim);
  for (auto i : participation.sampled) out.axpy(participation.weights[i], updates[i]->end);
  out.require_finite("aggregated model");
  return out;
}

}  // namespace

LocalUpdate client_local_update(const Objective& objective, Algorithm algorithm, std::size_t client,
                                const ModelVector& start, std::optional<Correction> correction,
                                const LocalStepConfig& steps, std::size_t round, std::uint64_t seed) {
  if (correction && (correction->client == nullptr || correction->global == nullptr))
    throw std::invalid_argument("incomplete correction");
  LocalUpdate out{start, ModelVector(start.size())};
  for (std::size_t k = 0; k < steps.steps; ++k) {
    const RngStreamKey key{
        .seed = seed, .client = client, .round = round, .step = k, .purpose = RngPurpose::gradient_noise};
    ModelVector g = objective.stoch_grad_local(client, out.end, key);
    out.grad_sum += g;
    if (correction) {
      g -= *correction->client;
      g += *correction->global;
    }
    if (algorithm == Algorithm::fedprox && steps.mu != 0.0) {
      ModelVector pull = out.end - start;
      g.axpy(steps.mu, pull);
    }
    out.end.axpy(-steps.eta, g);
    if (!out.end.all_finite())
      throw NonFiniteError("client " + std::to_string(client) + " diverged at round " + std::to_string(round) +
                           ", step " + std::to_string(k));
  }
  return out;
}

void ControlVariateState::recompute_global() {
  if (per_client.empty()) throw std::logic_error("no control variates");
  ModelVector mean(per_client.front().size());
  for (const auto& c : per_client) mean += c;
  mean *= 1.0 / static_cast<double>(per_client.size());
  global = std::move(mean);
}

void ControlVariateState::reset_window() {
  for (auto& a : window_accum) a.set_zero();
  std::fill(window_qbar.begin(), window_qbar.end(), 0.0);
}

ControlVariateState control_variate_init(CvInit mode, const Objective& objective, const ModelVector& x0,
                                         std::size_t local_steps, std::uint64_t seed) {
  const std::size_t n = objective.num_clients();
  const std::size_t d = objective.dimension();
  if (local_steps == 0) throw std::invalid_argument("local_steps must be positive");
  ControlVariateState cv;
  cv.per_client.assign(n, ModelVector(d));
  cv.window_accum.assign(n, ModelVector(d));
  cv.window_qbar.assign(n, 0.0);
  if (mode == CvInit::warm_start) {
    for (std::size_t i = 0; i < n; ++i) {
      ModelVector acc(d);
      for (std::size_t k = 0; k < local_steps; ++k) {
        const RngStreamKey key{.seed = seed, .client = i, .round = 0, .step = k, .purpose = RngPurpose::init};
        acc += objective.stoch_grad_local(i, x0, key);
      }
      acc *= 1.0 / static_cast<double>(local_steps);
      acc.require_finite("initial control variate");
      cv.per_client[i] = std::move(acc);
    }
  }
  cv.recompute_global();
  return cv;
}

ServerState make_server_state(const ModelVector& x0, std::optional<ControlVariateState> cv) {
  x0.require_finite("initial point");
  return ServerState{.global_x = x0, .inner_w = x0, .rounds_in_window = 0, .cv = std::move(cv)};
}

void server_round(ServerState& state, const RoundParticipation& participation,
                  std::span<const std::optional<LocalUpdate>> updates, std::size_t window) {
  if (window == 0) throw std::invalid_argument("window must be positive");
  if (state.rounds_in_window >= window) throw std::logic_error("window already complete; finalize first");
  check_updates(participation, updates);
  state.inner_w = weighted_average_of_ends(participation, updates, state.inner_w.size());
  if (state.cv) {
    auto& cv = *state.cv;
    const double inv_p = 1.0 / static_cast<double>(window);
    for (auto i : participation.sampled) {
      const double q = participation.weights[i];
      cv.window_accum[i].axpy(q, updates[i]->grad_sum);
      cv.window_qbar[i] += q * inv_p;
    }
  }
  ++state.rounds_in_window;
}

void window_finalize(ServerState& state, double gamma, bool refresh_cv, std::size_t window,
                     std::size_t local_steps) {
  if (state.rounds_in_window != window)
    throw std::logic_error("window finalize called after " + std::to_string(state.rounds_in_window) + " of " +
                           std::to_string(window) + " rounds");
  if (gamma == 1.0) {
    state.global_x = state.inner_w;
  } else {
    ModelVector step = state.inner_w - state.global_x;
    state.global_x.axpy(gamma, step);
  }
  state.global_x.require_finite("global model");
  state.inner_w = state.global_x;
  state.rounds_in_window = 0;
  if (refresh_cv) {
    if (!state.cv) throw std::logic_error("control-variate refresh without control variates");
    auto& cv = *state.cv;
    const double denom_base = static_cast<double>(window) * static_cast<double>(local_steps);
    for (std::size_t i = 0; i < cv.num_clients(); ++i) {
      if (cv.window_qbar[i] <= 0.0) continue;
      ModelVector g = cv.window_accum[i];
      g *= 1.0 / (denom_base * cv.window_qbar[i]);
      g.require_finite("control variate");
      cv.per_client[i] = std::move(g);
    }
    cv.recompute_global();
    cv.reset_window();
  }
}

void scaffold_round(ServerState& state, const RoundParticipation& participation,
                    std::span<const std::optional<LocalUpdate>> updates, std::size_t local_steps, double eta) {
  if (!state.cv) throw std::logic_error("scaffold requires control variates");
  check_updates(participation, updates);
  auto& cv = *state.cv;
  const double scale = 1.0 / (static_cast<double>(local_steps) * eta);
  for (auto i : participation.sampled) {
    // c_i - c + (w - end) / (I eta)
    ModelVector next = cv.per_client[i] - cv.global;
    ModelVector drift = state.inner_w - updates[i]->end;
    next.axpy(scale, drift);
    next.require_finite("control variate");
    cv.per_client[i] = std::move(next);
  }
  cv.recompute_global();
  state.inner_w = weighted_average_of_ends(participation, updates, state.inner_w.size());
  state.global_x = state.inner_w;
  state.rounds_in_window = 0;
}

std::size_t effective_window(const RunConfig& cfg, const Scheduler& scheduler) {
  if (!is_amplified(cfg.algorithm)) return 1;
  return cfg.window_p != 0 ? cfg.window_p : scheduler.pattern_params().window;
}

Simulation::Simulation(const RunConfig& cfg, const Objective& objective, const Scheduler& scheduler,
                       WorkerPool* pool)
    : cfg_(cfg),
      objective_(objective),
      scheduler_(scheduler),
      pool_(pool),
      window_(effective_window(cfg, scheduler)),
      steps_{.steps = cfg.local_steps, .eta = cfg.effective_eta(), .mu = cfg.mu},
      state_(make_server_state(objective.initial_point())) {
  if (objective.num_clients() != scheduler.num_clients())
    throw std::invalid_argument("objective and scheduler disagree on the number of clients");
  if (cfg.n_clients != objective.num_clients())
    throw std::invalid_argument("configuration and objective disagree on the number of clients");
  if (uses_control_variates(cfg.algorithm))
    state_.cv = control_variate_init(cfg.cv_init, objective, state_.global_x, cfg.local_steps, cfg.seed);
}

void Simulation::step() {
  const std::size_t n = objective_.num_clients();
  last_ = scheduler_.sample_round(round_, cfg_.seed);
  const auto& sampled = last_.sampled;

  std::vector<std::optional<LocalUpdate>> updates(n);
  const auto run_client = [&](std::size_t slot) {
    const std::size_t i = sampled[slot];
    std::optional<Correction> corr;
    if (state_.cv) corr = Correction{&state_.cv->per_client[i], &state_.cv->global};
    updates[i] = client_local_update(objective_, cfg_.algorithm, i, state_.inner_w, corr, steps_, round_, cfg_.seed);
  };
  if (pool_ != nullptr)
    pool_->parallel_for(sampled.size(), run_client);
  else
    for (std::size_t s = 0; s < sampled.size(); ++s) run_client(s);

  if (cfg_.algorithm == Algorithm::scaffold) {
    scaffold_round(state_, last_, updates, cfg_.local_steps, steps_.eta);
  } else {
    server_round(state_, last_, updates, window_);
    if (state_.rounds_in_window == window_) {
      const double gamma = is_amplified(cfg_.algorithm) ? cfg_.gamma : 1.0;
      window_finalize(state_, gamma, state_.cv.has_value(), window_, cfg_.local_steps);
    }
  }

  const std::uint64_t per_client = objective_.dimension() * (uses_control_variates(cfg_.algorithm) ? 2u : 1u);
  uplink_ += per_client * sampled.size();
  ++round_;
}

}  // namespace pfl
