#include <doctest.h>

#include <cmath>
#include <vector>

#include "pfl/data.hpp"
#include "pfl/diagnostics.hpp"
#include "pfl/objectives.hpp"

using namespace pfl;

namespace {

// Always samples client 0 alone: window averages are far from 1/N.
class StuckScheduler final : public Scheduler {
 public:
  explicit StuckScheduler(std::size_t n) : n_(n) {}
  std::size_t num_clients() const override { return n_; }
  RoundParticipation sample_round(std::size_t, std::uint64_t) const override { return uniform_participation(n_, {0}); }
  PatternParams pattern_params() const override { return {.rho_sq = 1.0, .window = 1, .p_sample = 1.0 / n_}; }
  std::string name() const override { return "stuck"; }

 private:
  std::size_t n_;
};

// Cyclic N=4, K=2, S=1, P=2 has four equally likely windows: one of {0,1} in
// the first round, one of {2,3} in the second. E[w_i] is computed straight
// from the definition over that enumeration.
double enumerated_expected_w() {
  const double n = 4.0, p = 2.0;
  double total = 0.0;
  for (int a : {0, 1})
    for (int b : {2, 3}) {
      double q[2][4] = {};
      q[0][a] = 1.0;
      q[1][b] = 1.0;
      double qbar[4] = {};
      for (int j = 0; j < 4; ++j) qbar[j] = (q[0][j] + q[1][j]) / p;
      for (int i = 0; i < 4; ++i) {
        double wi = 0.0;
        for (int j = 0; j < 4; ++j) {
          if (qbar[j] <= 0.0) continue;
          wi += (q[0][i] * q[0][j] + q[1][i] * q[1][j]) / (p * qbar[j]);
        }
        total += wi / n;
      }
    }
  return total / 4.0 / 4.0;  // average over windows and clients
}

}  // namespace

TEST_SUITE("window_stats") {
  TEST_CASE("regularized windows are balanced") {
    const RegularizedScheduler s(6, 3);
    const auto windows = sample_windows(s, 2, 0, 4);
    const auto st = window_stats(windows[1], windows[0]);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(st.v[i] == doctest::Approx(0.0));
      CHECK(st.w[i] == doctest::Approx(1.0 / 6.0));
      CHECK(st.qbar[i] == doctest::Approx(1.0 / 6.0));
    }
    CHECK(st.v_sq_lambda == doctest::Approx(0.0));
  }

  TEST_CASE("expected w under cyclic participation") {
    const double oracle = enumerated_expected_w();
    CHECK(oracle == doctest::Approx(1.0 / 8.0));

    const GroupedCyclicScheduler s(4, 2, 1);
    const auto windows = sample_windows(s, 10000, 0, 11);
    ParticipationTracker tracker(4);
    double sum = 0.0;
    for (const auto& w : windows) {
      const auto st = window_stats(w, tracker);
      for (double x : st.w) sum += x;
      tracker.absorb(w);
    }
    CHECK(sum / (4.0 * windows.size()) == doctest::Approx(oracle).epsilon(0.05));
  }

  TEST_CASE("v^2 Lambda under cyclic participation") {
    // Every client's last participated window has z = (1, 0) or (0, 1), so
    // Lambda = 2, and v_i^2 = 1/16 for all four clients: sum = 1/2.
    const GroupedCyclicScheduler s(4, 2, 1);
    const auto windows = sample_windows(s, 10000, 0, 12);
    ParticipationTracker tracker(4);
    double sum = 0.0;
    std::size_t counted = 0;
    for (const auto& w : windows) {
      const auto st = window_stats(w, tracker);
      if (st.lambda_missing == 0) {
        sum += st.v_sq_lambda;
        ++counted;
      }
      tracker.absorb(w);
    }
    REQUIRE(counted > 9900);
    CHECK(sum / counted == doctest::Approx(0.5).epsilon(0.05));

    // Looking only at the previous window loses clients that skipped it.
    double prev_sum = 0.0;
    for (std::size_t m = 1; m < windows.size(); ++m) prev_sum += window_stats(windows[m], windows[m - 1]).v_sq_lambda;
    CHECK(prev_sum / (windows.size() - 1) == doctest::Approx(0.25).epsilon(0.05));
  }

  TEST_CASE("lambda of a single window") {
    std::vector<RoundParticipation> w{uniform_participation(2, {0}), uniform_participation(2, {0, 1})};
    // client 0: z = (1, 1/2): 2 * 1.25 / 2.25
    CHECK(*window_lambda(w, 0) == doctest::Approx(2.0 * 1.25 / 2.25));
    CHECK(*window_lambda(w, 1) == doctest::Approx(2.0));
    std::vector<RoundParticipation> none{uniform_participation(2, {0})};
    CHECK_FALSE(window_lambda(none, 1).has_value());
  }
}

TEST_SUITE("qbar_variance") {
  TEST_CASE("cyclic closed form") {
    CHECK(cyclic_qbar_variance(4, 2, 1, 2) == doctest::Approx(1.0 / 16.0));
    const GroupedCyclicScheduler s(4, 2, 1);
    const auto res = qbar_variance_check(s, 100000, 5);
    CHECK(res.mean_variance == doctest::Approx(1.0 / 16.0).epsilon(0.05));
  }

  TEST_CASE("multi-cycle window") {
    const GroupedCyclicScheduler s(12, 3, 2);
    const auto res = qbar_variance_check(s, 40000, 6, 6);
    CHECK(res.mean_variance == doctest::Approx(cyclic_qbar_variance(12, 3, 2, 6)).epsilon(0.05));
  }

  TEST_CASE("deterministic patterns have no variance") {
    CHECK(qbar_variance_check(IidScheduler(5, 5), 1000, 1).mean_variance == 0.0);
    CHECK(qbar_variance_check(RegularizedScheduler(6, 2), 1000, 1).mean_variance == doctest::Approx(0.0).epsilon(1e-30));
    CHECK(cyclic_qbar_variance(5, 1, 5, 1) == 0.0);
  }
}

TEST_SUITE("assumption_suite") {
  TEST_CASE("iid passes") {
    const auto rep = assumption_suite(IidScheduler(10, 3), 10000, 1);
    INFO(rep.to_text());
    CHECK(rep.all_passed());
  }

  TEST_CASE("cyclic passes") {
    const auto rep = assumption_suite(GroupedCyclicScheduler(250, 5, 10), 10000, 2);
    INFO(rep.to_text());
    CHECK(rep.all_passed());
  }

  TEST_CASE("regularized is exact") {
    const auto rep = assumption_suite(RegularizedScheduler(8, 4), 2000, 3);
    INFO(rep.to_text());
    CHECK(rep.all_passed());
    bool found = false;
    for (const auto& c : rep.checks)
      if (c.check == "window_average_exact") found = c.pass;
    CHECK(found);
  }

  TEST_CASE("a stuck scheduler fails unbiasedness") {
    const auto rep = assumption_suite(StuckScheduler(4), 1000, 0);
    bool unbiased = true;
    for (const auto& c : rep.checks)
      if (c.check == "window_average_unbiased") unbiased = c.pass;
    CHECK_FALSE(unbiased);
    CHECK_FALSE(rep.all_passed());
  }

  TEST_CASE("sca is measured") {
    const auto rep = assumption_suite(ScaScheduler(20, 4, 3, 2, 0.8, 0.05), 2000, 4);
    CHECK(rep.all_passed());
    CHECK(rep.to_csv().starts_with("check,statistic,expected,observed,pass\n"));
  }

  TEST_CASE("too few trials") { CHECK_THROWS(assumption_suite(IidScheduler(4, 2), 999, 0)); }
}

TEST_SUITE("grad_check") {
  TEST_CASE("objectives") {
    CHECK(grad_check(SyntheticHardObjective{}, 50, 1e-5, 1e-6, 1).pass);
    const auto quad = grad_check(QuadraticObjective({ModelVector{1.0, -1.0}, ModelVector{2.0, 0.0}}, 0.0), 50, 1e-5, 1e-9, 2);
    CHECK(quad.pass);
    auto ds = make_synthetic_dataset(SyntheticDataKind::blobs, {.num_classes = 3, .num_features = 5, .num_samples = 100}, 4);
    auto shards = partition_by_similarity(ds, {.n_clients = 2, .similarity = 20.0, .seed = 1});
    const LogisticObjective logit(std::move(shards), {.num_classes = 3, .num_features = 5});
    CHECK(grad_check(logit, 50, 1e-5, 1e-6, 3).pass);
  }

  TEST_CASE("a wrong gradient is caught") {
    class Wrong final : public Objective {
     public:
      std::size_t dimension() const override { return 2; }
      std::size_t num_clients() const override { return 1; }
      double eval_local(std::size_t, const ModelVector& x) const override { return x[0] * x[0] + x[1]; }
      ModelVector grad_local(std::size_t, const ModelVector& x) const override { return {x[0], 1.0}; }
      ModelVector stoch_grad_local(std::size_t c, const ModelVector& x, const RngStreamKey&) const override {
        return grad_local(c, x);
      }
    };
    CHECK_FALSE(grad_check(Wrong{}, 10, 1e-5, 1e-6, 0).pass);
  }
}
