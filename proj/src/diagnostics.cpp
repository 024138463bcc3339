#include "pfl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "pfl/rng.hpp"
#include "pfl/run_record.hpp"

namespace pfl {

namespace {

std::size_t window_clients(std::span<const RoundParticipation> window) {
  if (window.empty()) throw std::invalid_argument("empty window");
  const std::size_t n = window.front().weights.size();
  for (const auto& r : window)
    if (r.weights.size() != n) throw std::invalid_argument("rounds of a window disagree on N");
  return n;
}

// Running mean and variance (Welford).
struct Moments {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double std_error() const { return n > 0 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

std::size_t resolve_window(const Scheduler& scheduler, std::size_t window) {
  return window != 0 ? window : scheduler.pattern_params().window;
}

WindowStats stats_with(std::span<const RoundParticipation> window,
                       const std::vector<std::optional<double>>& lambdas) {
  const std::size_t n = window_clients(window);
  const double p = static_cast<double>(window.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  WindowStats st;
  st.qbar.assign(n, 0.0);
  st.w.assign(n, 0.0);
  st.v.assign(n, 0.0);
  st.lambda.assign(n, 0.0);
  for (const auto& r : window) {
    for (auto i : r.sampled) st.qbar[i] += r.weights[i];
    st.max_sum_q_sq = std::max(st.max_sum_q_sq, r.sum_of_squares());
  }
  for (auto& q : st.qbar) q /= p;
  for (const auto& r : window) {
    // inner_i = sum_{j sampled} q^j / (P qbar_j), then w_i += q^i * inner
    double inner = 0.0;
    for (auto j : r.sampled) inner += r.weights[j] / (p * st.qbar[j]);
    for (auto i : r.sampled) st.w[i] += r.weights[i] * inner;
  }
  for (std::size_t i = 0; i < n; ++i) {
    st.w[i] *= inv_n;
    st.v[i] = st.qbar[i] - inv_n;
    if (lambdas[i]) {
      st.lambda[i] = *lambdas[i];
      st.v_sq_lambda += st.v[i] * st.v[i] * st.lambda[i];
    } else {
      ++st.lambda_missing;
    }
  }
  return st;
}

}  // namespace

std::optional<double> window_lambda(std::span<const RoundParticipation> window, std::size_t client) {
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& r : window) {
    const double z = r.weights.at(client);
    sum += z;
    sum_sq += z * z;
  }
  if (sum <= 0.0) return std::nullopt;
  const double p = static_cast<double>(window.size());
  return p * sum_sq / (sum * sum);
}

ParticipationTracker::ParticipationTracker(std::size_t n_clients) : last_(n_clients) {}

void ParticipationTracker::absorb(std::span<const RoundParticipation> window) {
  if (window_clients(window) != last_.size()) throw std::invalid_argument("tracker: client count mismatch");
  for (std::size_t i = 0; i < last_.size(); ++i)
    if (auto l = window_lambda(window, i)) last_[i] = l;
}

std::optional<double> ParticipationTracker::lambda(std::size_t client) const { return last_.at(client); }

WindowStats window_stats(std::span<const RoundParticipation> window, const ParticipationTracker& history) {
  const std::size_t n = window_clients(window);
  if (history.num_clients() != n) throw std::invalid_argument("tracker: client count mismatch");
  std::vector<std::optional<double>> lambdas(n);
  for (std::size_t i = 0; i < n; ++i) lambdas[i] = history.lambda(i);
  return stats_with(window, lambdas);
}

WindowStats window_stats(std::span<const RoundParticipation> window,
                         std::span<const RoundParticipation> previous_window) {
  const std::size_t n = window_clients(window);
  if (window_clients(previous_window) != n) throw std::invalid_argument("windows disagree on N");
  std::vector<std::optional<double>> lambdas(n);
  for (std::size_t i = 0; i < n; ++i) lambdas[i] = window_lambda(previous_window, i);
  return stats_with(window, lambdas);
}

std::vector<std::vector<RoundParticipation>> sample_windows(const Scheduler& scheduler, std::size_t count,
                                                            std::size_t window, std::uint64_t seed) {
  const std::size_t p = resolve_window(scheduler, window);
  std::vector<std::vector<RoundParticipation>> out(count);
  for (std::size_t m = 0; m < count; ++m) {
    out[m].reserve(p);
    for (std::size_t s = 0; s < p; ++s) out[m].push_back(scheduler.sample_round(m * p + s, seed));
  }
  return out;
}

QbarVarianceResult qbar_variance_check(const Scheduler& scheduler, std::size_t trials, std::uint64_t seed,
                                       std::size_t window) {
  if (trials < 2) throw std::invalid_argument("variance check needs at least two trials");
  const std::size_t n = scheduler.num_clients();
  const std::size_t p = resolve_window(scheduler, window);
  std::vector<Moments> moments(n);
  std::vector<double> qbar(n);
  for (std::size_t m = 0; m < trials; ++m) {
    std::fill(qbar.begin(), qbar.end(), 0.0);
    for (std::size_t s = 0; s < p; ++s) {
      const auto r = scheduler.sample_round(m * p + s, seed);
      for (auto i : r.sampled) qbar[i] += r.weights[i];
    }
    for (std::size_t i = 0; i < n; ++i) moments[i].add(qbar[i] / static_cast<double>(p));
  }
  QbarVarianceResult out;
  out.trials = trials;
  out.window = p;
  for (const auto& mo : moments) {
    out.per_client.push_back(mo.variance());
    out.mean_variance += mo.variance();
  }
  out.mean_variance /= static_cast<double>(n);
  return out;
}

double cyclic_qbar_variance(std::size_t n, std::size_t k_bar, std::size_t s, std::size_t window) {
  const double nn = static_cast<double>(n), kk = static_cast<double>(k_bar), ss = static_cast<double>(s);
  return (1.0 / (ss * nn * static_cast<double>(window))) * (1.0 - ss * kk / nn);
}

bool DiagnosticReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

std::string DiagnosticReport::to_csv() const {
  std::ostringstream os;
  os << "check,statistic,expected,observed,pass\n";
  for (const auto& c : checks)
    os << c.check << ',' << c.statistic << ',' << format_number(c.expected) << ',' << format_number(c.observed) << ','
       << (c.pass ? "true" : "false") << '\n';
  return os.str();
}

std::string DiagnosticReport::to_text() const {
  std::ostringstream os;
  for (const auto& c : checks)
    os << (c.pass ? "PASS " : "FAIL ") << c.check << " [" << c.statistic << "] expected " << format_number(c.expected)
       << " observed " << format_number(c.observed) << '\n';
  return os.str();
}

DiagnosticReport assumption_suite(const Scheduler& scheduler, std::size_t trials, std::uint64_t seed,
                                  std::size_t window) {
  if (trials < 1000) throw std::invalid_argument("assumption suite needs at least 1000 trials");
  const std::size_t n = scheduler.num_clients();
  const std::size_t p = resolve_window(scheduler, window);
  const PatternParams params = scheduler.pattern_params();
  const bool measured_only = scheduler.name() == "sca";
  const double inv_n = 1.0 / static_cast<double>(n);

  // Burn in until every client has a remembered window (bounded), so Lambda is
  // defined for the measured windows.
  ParticipationTracker tracker(n);
  std::size_t next_round = 0;
  auto draw_window = [&] {
    std::vector<RoundParticipation> w;
    w.reserve(p);
    for (std::size_t s = 0; s < p; ++s) w.push_back(scheduler.sample_round(next_round++, seed));
    return w;
  };
  for (std::size_t burn = 0; burn < 1000; ++burn) {
    bool complete = true;
    for (std::size_t i = 0; i < n && complete; ++i) complete = tracker.lambda(i).has_value();
    if (complete) break;
    tracker.absorb(draw_window());
  }

  double max_sum_dev = 0.0;
  bool rational_ok = true;
  double max_sum_sq = 0.0;
  std::size_t rho_violations = 0;
  double max_exact_dev = 0.0;
  std::vector<Moments> qbar_m(n), w_m(n), hit_m(n);
  Moments vl_m;

  for (std::size_t m = 0; m < trials; ++m) {
    const auto win = draw_window();
    for (const auto& r : win) {
      double sum = 0.0;
      for (auto i : r.sampled) sum += r.weights[i];
      max_sum_dev = std::max(max_sum_dev, std::abs(sum - 1.0));
      rational_ok = rational_ok && r.sampled.size() == r.weight_denominator;
      const double sq = r.sum_of_squares();
      if (sq > params.rho_sq * (1.0 + 1e-12)) {
        ++rho_violations;
      } else {
        max_sum_sq = std::max(max_sum_sq, sq);
      }
    }
    const auto st = window_stats(win, tracker);
    tracker.absorb(win);
    for (std::size_t i = 0; i < n; ++i) {
      qbar_m[i].add(st.qbar[i]);
      w_m[i].add(st.w[i]);
      hit_m[i].add(st.qbar[i] > 0.0 ? 1.0 : 0.0);
      max_exact_dev = std::max(max_exact_dev, std::abs(st.qbar[i] - inv_n));
    }
    vl_m.add(st.v_sq_lambda);
  }

  DiagnosticReport rep;
  rep.checks.push_back({"weights_sum_to_one", "max_abs_deviation", 0.0, max_sum_dev,
                        rational_ok && max_sum_dev <= 1e-12});
  if (measured_only) {
    rep.checks.push_back({"sum_q_sq_le_rho_sq", "max_over_regular_rounds", params.rho_sq, max_sum_sq, true});
    rep.checks.push_back({"sca_fallback_rounds", "count_measured", 0.0, static_cast<double>(rho_violations), true});
  } else {
    rep.checks.push_back(
        {"sum_q_sq_le_rho_sq", "max_over_rounds", params.rho_sq, max_sum_sq, rho_violations == 0});
  }

  // (b) unbiased window average.
  double worst_z = 0.0;
  for (const auto& mo : qbar_m) {
    const double dev = std::abs(mo.mean - inv_n);
    const double se = mo.std_error();
    const double z = se > 0.0 ? dev / se : (dev <= 1e-12 ? 0.0 : std::numeric_limits<double>::infinity());
    worst_z = std::max(worst_z, z);
  }
  rep.checks.push_back({"window_average_unbiased", measured_only ? "max_z_measured" : "max_z", 4.0, worst_z,
                        measured_only || worst_z <= 4.0});
  if (scheduler.exact_window_average() && p == params.window)
    rep.checks.push_back({"window_average_exact", "max_abs_deviation", 0.0, max_exact_dev, max_exact_dev <= 1e-12});

  // (c) non-zero sampling probability.
  const double ps = params.p_sample;
  const double ps_se = std::sqrt(ps * (1.0 - ps) / static_cast<double>(trials));
  double min_freq = 1.0;
  for (const auto& mo : hit_m) min_freq = std::min(min_freq, mo.mean);
  rep.checks.push_back({"nonzero_sampling", measured_only ? "min_frequency_measured" : "min_frequency", ps, min_freq,
                        measured_only || min_freq >= ps - 4.0 * ps_se});

  // Window bounds.
  const double w_bound = static_cast<double>(p * p) * inv_n;
  double max_w = 0.0;
  bool w_ok = true;
  for (const auto& mo : w_m) {
    max_w = std::max(max_w, mo.mean);
    w_ok = w_ok && mo.mean <= w_bound + 4.0 * mo.std_error();
  }
  rep.checks.push_back({"w_bound", measured_only ? "max_mean_w_measured" : "max_mean_w", w_bound, max_w,
                        measured_only || w_ok});
  rep.checks.push_back({"v_sq_lambda_bound", measured_only ? "mean_measured" : "mean", params.rho_sq, vl_m.mean,
                        measured_only || vl_m.mean <= params.rho_sq + 4.0 * vl_m.std_error()});
  return rep;
}

GradCheckResult grad_check(const Objective& objective, std::size_t n_points, double h, double tol,
                           std::uint64_t seed, double scale) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be positive");
  const std::size_t d = objective.dimension();
  GradCheckResult out;
  out.points = n_points;
  for (std::size_t pt = 0; pt < n_points; ++pt) {
    ModelVector x(d);
    RngStream rng({.seed = seed, .client = 0, .round = pt, .step = 0, .purpose = RngPurpose::init});
    for (std::size_t k = 0; k < d; ++k) x[k] = rng.gaussian(scale);
    for (std::size_t i = 0; i < objective.num_clients(); ++i) {
      const ModelVector g = objective.grad_local(i, x);
      ModelVector fd(d);
      ModelVector probe = x;
      for (std::size_t k = 0; k < d; ++k) {
        const double orig = probe[k];
        probe[k] = orig + h;
        const double up = objective.eval_local(i, probe);
        probe[k] = orig - h;
        const double down = objective.eval_local(i, probe);
        probe[k] = orig;
        fd[k] = (up - down) / (2.0 * h);
      }
      const double err = norm(g - fd) / std::max({norm(g), norm(fd), 1e-12});
      if (err > out.max_rel_error || (pt == 0 && i == 0)) {
        out.max_rel_error = std::max(out.max_rel_error, err);
        out.worst_point = pt;
        out.worst_client = i;
      }
    }
  }
  out.pass = out.max_rel_error <= tol;
  return out;
}

}  // namespace pfl
