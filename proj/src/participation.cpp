#include "pfl/participation.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "pfl/rng.hpp"

namespace pfl {

namespace {

RngStreamKey sampling_key(std::uint64_t seed, std::size_t round, std::size_t retry = 0) {
  return {.seed = seed, .client = 0, .round = round, .step = retry, .purpose = RngPurpose::sampling};
}

// Draws k of the candidates without replacement (partial Fisher-Yates).
std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> candidates, std::size_t k,
                                                  RngStream& rng) {
  for (std::size_t i = 0; i < k; ++i) std::swap(candidates[i], candidates[i + rng.below(candidates.size() - i)]);
  candidates.resize(k);
  return candidates;
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  std::iota(out.begin(), out.end(), begin);
  return out;
}

}  // namespace

double RoundParticipation::sum_of_squares() const {
  double acc = 0.0;
  for (double q : weights) acc += q * q;
  return acc;
}

RoundParticipation uniform_participation(std::size_t n_clients, std::vector<std::size_t> sampled) {
  if (sampled.empty()) throw std::invalid_argument("a round must sample at least one client");
  std::sort(sampled.begin(), sampled.end());
  if (std::adjacent_find(sampled.begin(), sampled.end()) != sampled.end())
    throw std::invalid_argument("duplicate sampled client");
  if (sampled.back() >= n_clients) throw std::out_of_range("sampled client out of range");
  RoundParticipation out;
  out.weights.assign(n_clients, 0.0);
  out.weight_denominator = sampled.size();
  const double q = 1.0 / static_cast<double>(sampled.size());
  for (auto i : sampled) out.weights[i] = q;
  out.sampled = std::move(sampled);
  return out;
}

// ---------------------------------------------------------------------------

IidScheduler::IidScheduler(std::size_t n_clients, std::size_t s_clients) : n_(n_clients), s_(s_clients) {
  if (s_ == 0 || s_ > n_) throw std::invalid_argument("iid: need 1 <= S <= N");
}

RoundParticipation IidScheduler::sample_round(std::size_t round, std::uint64_t seed) const {
  RngStream rng(sampling_key(seed, round));
  return uniform_participation(n_, draw_without_replacement(range(0, n_), s_, rng));
}

PatternParams IidScheduler::pattern_params() const {
  return {.rho_sq = 1.0 / static_cast<double>(s_),
          .window = 1,
          .p_sample = static_cast<double>(s_) / static_cast<double>(n_)};
}

// ---------------------------------------------------------------------------

GroupedCyclicScheduler::GroupedCyclicScheduler(std::size_t n_clients, std::size_t k_bar, std::size_t s_clients,
                                               std::size_t avail_rounds_g)
    : n_(n_clients), k_(k_bar), s_(s_clients), g_(avail_rounds_g) {
  if (k_ == 0 || n_ % k_ != 0) throw std::invalid_argument("cyclic: N must be a multiple of K");
  if (s_ == 0 || s_ > n_ / k_) throw std::invalid_argument("cyclic: need 1 <= S <= N/K");
  if (g_ == 0) throw std::invalid_argument("cyclic: availability time must be positive");
}

RoundParticipation GroupedCyclicScheduler::sample_round(std::size_t round, std::uint64_t seed) const {
  const std::size_t group_size = n_ / k_;
  const std::size_t first = active_group(round) * group_size;
  RngStream rng(sampling_key(seed, round));
  return uniform_participation(n_, draw_without_replacement(range(first, first + group_size), s_, rng));
}

PatternParams GroupedCyclicScheduler::pattern_params() const {
  return {.rho_sq = 1.0 / static_cast<double>(s_),
          .window = g_ * k_,
          .p_sample = static_cast<double>(s_ * k_) / static_cast<double>(n_)};
}

// ---------------------------------------------------------------------------

RegularizedScheduler::RegularizedScheduler(std::size_t n_clients, std::size_t window_p)
    : n_(n_clients), p_(window_p) {
  if (p_ == 0 || n_ % p_ != 0) throw std::invalid_argument("regularized: N must be a multiple of P");
}

RoundParticipation RegularizedScheduler::sample_round(std::size_t round, std::uint64_t seed) const {
  // The permutation is keyed on round 0 only, so it is the same for every round.
  RngStream rng(sampling_key(seed, 0));
  auto perm = draw_without_replacement(range(0, n_), n_, rng);
  const std::size_t slot = round % p_;
  const std::size_t per_slot = n_ / p_;
  std::vector<std::size_t> members(perm.begin() + static_cast<std::ptrdiff_t>(slot * per_slot),
                                   perm.begin() + static_cast<std::ptrdiff_t>((slot + 1) * per_slot));
  return uniform_participation(n_, std::move(members));
}

PatternParams RegularizedScheduler::pattern_params() const {
  // S = N/P clients at weight P/N each: sum of squares = P/N.
  return {.rho_sq = static_cast<double>(p_) / static_cast<double>(n_), .window = p_, .p_sample = 1.0};
}

// ---------------------------------------------------------------------------

ScaScheduler::ScaScheduler(std::size_t n_clients, std::size_t k_bar, std::size_t s_clients,
                           std::size_t avail_rounds_g, double p_active, double p_inactive)
    : n_(n_clients), k_(k_bar), s_(s_clients), g_(avail_rounds_g), p_active_(p_active), p_inactive_(p_inactive) {
  if (k_ == 0 || n_ % k_ != 0) throw std::invalid_argument("sca: N must be a multiple of K");
  if (s_ == 0 || s_ > n_ / k_) throw std::invalid_argument("sca: need 1 <= S <= N/K");
  if (g_ == 0) throw std::invalid_argument("sca: availability time must be positive");
  if (!(p_active_ > 0.0 && p_active_ <= 1.0) || !(p_inactive_ >= 0.0 && p_inactive_ <= 1.0))
    throw std::invalid_argument("sca: availability probabilities out of range");
}

RoundParticipation ScaScheduler::sample_round(std::size_t round, std::uint64_t seed) const {
  const std::size_t group_size = n_ / k_;
  const std::size_t active = (round / g_) % k_;
  for (int retry = 0; retry < kMaxRetries; ++retry) {
    RngStream rng(sampling_key(seed, round, static_cast<std::size_t>(retry)));
    std::vector<std::size_t> available;
    for (std::size_t i = 0; i < n_; ++i) {
      const double p = i / group_size == active ? p_active_ : p_inactive_;
      if (rng.uniform() < p) available.push_back(i);
    }
    if (available.empty()) continue;
    const std::size_t take = std::min(s_, available.size());
    return uniform_participation(n_, draw_without_replacement(std::move(available), take, rng));
  }
  throw std::runtime_error("sca: no client available after " + std::to_string(kMaxRetries) + " draws at round " +
                           std::to_string(round));
}

PatternParams ScaScheduler::pattern_params() const {
  return {.rho_sq = 1.0 / static_cast<double>(s_),
          .window = g_ * k_,
          .p_sample = static_cast<double>(s_ * k_) / static_cast<double>(n_)};
}

// ---------------------------------------------------------------------------

std::unique_ptr<Scheduler> make_scheduler(const RunConfig& cfg) {
  const auto& p = cfg.pattern;
  switch (p.kind) {
    case PatternKind::iid:
      return std::make_unique<IidScheduler>(cfg.n_clients, cfg.s_clients);
    case PatternKind::cyclic:
      return std::make_unique<GroupedCyclicScheduler>(cfg.n_clients, p.k_bar, cfg.s_clients, 1);
    case PatternKind::grouped_cyclic:
      return std::make_unique<GroupedCyclicScheduler>(cfg.n_clients, p.k_bar, cfg.s_clients, p.avail_rounds_g);
    case PatternKind::regularized:
      return std::make_unique<RegularizedScheduler>(cfg.n_clients, cfg.window_p);
    case PatternKind::sca:
      return std::make_unique<ScaScheduler>(cfg.n_clients, p.k_bar, cfg.s_clients, p.avail_rounds_g, p.p_active,
                                            p.p_inactive);
  }
  throw std::invalid_argument("unknown pattern");
}

}  // namespace pfl
