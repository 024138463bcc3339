#include <doctest.h>

#include <cmath>
#include <vector>

#include "pfl/algorithms.hpp"

using namespace pfl;

namespace {

RunConfig quadratic_config(Algorithm alg, std::size_t n, std::size_t s) {
  RunConfig cfg;
  cfg.algorithm = alg;
  cfg.objective = ObjectiveKind::quadratic;
  cfg.n_clients = n;
  cfg.s_clients = s;
  cfg.local_steps = 1;
  cfg.eta = 0.1;
  return cfg;
}

std::vector<std::optional<LocalUpdate>> updates_for(std::size_t n, const std::vector<std::pair<std::size_t, double>>& ends) {
  std::vector<std::optional<LocalUpdate>> out(n);
  for (auto [i, e] : ends) out[i] = LocalUpdate{ModelVector{e}, ModelVector{-e}};
  return out;
}

}  // namespace

TEST_SUITE("local_update") {
  TEST_CASE("one noiseless step") {
    const QuadraticObjective obj({ModelVector{1.0}}, 0.0);
    const auto up = client_local_update(obj, Algorithm::fedavg, 0, ModelVector{0.0}, std::nullopt,
                                        {.steps = 1, .eta = 0.1}, 0, 0);
    CHECK(up.end[0] == doctest::Approx(0.1));
    CHECK(up.grad_sum[0] == doctest::Approx(-1.0));
  }

  TEST_CASE("zero corrections change nothing") {
    const QuadraticObjective obj({ModelVector{1.0, -2.0}}, 0.3);
    const ModelVector zero(2);
    const LocalStepConfig steps{.steps = 5, .eta = 0.05};
    const auto plain = client_local_update(obj, Algorithm::fedavg, 0, ModelVector{0.5, 0.5}, std::nullopt, steps, 3, 1);
    const auto corrected = client_local_update(obj, Algorithm::amp_scaffold, 0, ModelVector{0.5, 0.5},
                                               Correction{&zero, &zero}, steps, 3, 1);
    CHECK(plain.end == corrected.end);
    CHECK(plain.grad_sum == corrected.grad_sum);
  }

  TEST_CASE("proximal pull") {
    // One step from the start has x - start = 0; the second sees the pull.
    const QuadraticObjective obj({ModelVector{1.0}}, 0.0);
    const auto prox = client_local_update(obj, Algorithm::fedprox, 0, ModelVector{0.0}, std::nullopt,
                                          {.steps = 2, .eta = 0.1, .mu = 10.0}, 0, 0);
    // x1 = 0.1; g = (0.1 - 1) + 10 * 0.1 = 0.1; x2 = 0.1 - 0.01 = 0.09.
    CHECK(prox.end[0] == doctest::Approx(0.09));
  }

  TEST_CASE("divergence is reported") {
    const QuadraticObjective obj({ModelVector{1.0}}, 0.0);
    CHECK_THROWS_AS(client_local_update(obj, Algorithm::fedavg, 0, ModelVector{0.0}, std::nullopt,
                                        {.steps = 2000, .eta = 1e10}, 0, 0),
                    NonFiniteError);
  }
}

TEST_SUITE("server") {
  TEST_CASE("weighted averages") {
    ServerState st = make_server_state(ModelVector{0.0});
    server_round(st, uniform_participation(3, {1}), updates_for(3, {{1, 0.7}}), 1);
    CHECK(st.inner_w[0] == 0.7);

    ServerState two = make_server_state(ModelVector{0.0});
    server_round(two, uniform_participation(2, {0, 1}), updates_for(2, {{0, 0.0}, {1, 2.0}}), 1);
    CHECK(two.inner_w[0] == 1.0);
  }

  TEST_CASE("updates must match the sampled set") {
    ServerState st = make_server_state(ModelVector{0.0});
    CHECK_THROWS(server_round(st, uniform_participation(3, {1}), updates_for(3, {{0, 0.7}}), 1));
    CHECK_THROWS(server_round(st, uniform_participation(3, {1}), updates_for(3, {{1, 0.7}, {2, 0.1}}), 1));
  }

  TEST_CASE("window weight after a full cyclic window") {
    // N=4, K=2, S=1, P=2: each sampled client gets q=1 once, so qbar = 1/(S P) = 1/2.
    const QuadraticObjective obj({ModelVector{0.0}, ModelVector{0.0}, ModelVector{0.0}, ModelVector{0.0}}, 0.0);
    ServerState st = make_server_state(ModelVector{0.0}, control_variate_init(CvInit::zero, obj, ModelVector{0.0}, 1, 0));
    server_round(st, uniform_participation(4, {1}), updates_for(4, {{1, 0.0}}), 2);
    server_round(st, uniform_participation(4, {2}), updates_for(4, {{2, 0.0}}), 2);
    CHECK(st.cv->window_qbar == std::vector<double>{0.0, 0.5, 0.5, 0.0});
    CHECK_THROWS_AS(server_round(st, uniform_participation(4, {0}), updates_for(4, {{0, 0.0}}), 2), std::logic_error);
  }

  TEST_CASE("finalize amplification") {
    ServerState st = make_server_state(ModelVector{0.0});
    st.inner_w = ModelVector{-0.5};
    st.rounds_in_window = 1;
    window_finalize(st, 2.0, false, 1, 1);
    CHECK(st.global_x[0] == -1.0);
    CHECK(st.inner_w[0] == -1.0);

    ServerState id = make_server_state(ModelVector{0.1});
    id.inner_w = ModelVector{0.3};
    id.rounds_in_window = 1;
    window_finalize(id, 1.0, false, 1, 1);
    CHECK(id.global_x == ModelVector{0.3});
  }

  TEST_CASE("finalize off a window boundary") {
    ServerState st = make_server_state(ModelVector{0.0});
    st.rounds_in_window = 1;
    CHECK_THROWS_AS(window_finalize(st, 1.0, false, 2, 1), std::logic_error);
  }

  TEST_CASE("control variate refresh from a single raw gradient") {
    const QuadraticObjective obj({ModelVector{1.0}, ModelVector{-1.0}}, 0.0);
    ServerState st = make_server_state(ModelVector{0.0}, control_variate_init(CvInit::zero, obj, ModelVector{0.0}, 1, 0));
    std::vector<std::optional<LocalUpdate>> ups(2);
    ups[0] = LocalUpdate{ModelVector{0.2}, ModelVector{-3.0}};
    server_round(st, uniform_participation(2, {0}), ups, 1);
    window_finalize(st, 1.0, true, 1, 1);
    CHECK(st.cv->per_client[0][0] == -3.0);
    CHECK(st.cv->per_client[1][0] == 0.0);  // did not participate
    CHECK(st.cv->global[0] == -1.5);
    CHECK(st.cv->window_qbar == std::vector<double>{0.0, 0.0});
  }
}

TEST_SUITE("control_variates") {
  TEST_CASE("warm start without noise is the exact gradient") {
    const QuadraticObjective obj({ModelVector{1.0}, ModelVector{-1.0}}, 0.0);
    const auto cv = control_variate_init(CvInit::warm_start, obj, ModelVector{0.0}, 4, 0);
    CHECK(cv.per_client[0] == obj.grad_local(0, ModelVector{0.0}));
    CHECK(cv.per_client[1] == obj.grad_local(1, ModelVector{0.0}));
    CHECK(cv.global[0] == 0.0);
  }

  TEST_CASE("zero start") {
    const QuadraticObjective obj({ModelVector{1.0, 2.0}, ModelVector{-1.0, 0.0}}, 1.0);
    const auto cv = control_variate_init(CvInit::zero, obj, ModelVector(2), 3, 0);
    for (const auto& c : cv.per_client) CHECK(c == ModelVector(2));
    CHECK(cv.global == ModelVector(2));
  }

  TEST_CASE("scaffold with full participation stores the raw gradient") {
    const QuadraticObjective obj({ModelVector{1.0}, ModelVector{-3.0}}, 0.5);
    const ModelVector w{0.25};
    ServerState st = make_server_state(w, control_variate_init(CvInit::warm_start, obj, w, 1, 7));
    const LocalStepConfig steps{.steps = 1, .eta = 0.1};
    std::vector<std::optional<LocalUpdate>> ups(2);
    for (std::size_t i = 0; i < 2; ++i)
      ups[i] = client_local_update(obj, Algorithm::scaffold, i, w, Correction{&st.cv->per_client[i], &st.cv->global},
                                   steps, 0, 7);
    scaffold_round(st, uniform_participation(2, {0, 1}), ups, 1, 0.1);
    for (std::size_t i = 0; i < 2; ++i) CHECK(st.cv->per_client[i][0] == doctest::Approx(ups[i]->grad_sum[0]).epsilon(1e-12));
  }
}

TEST_SUITE("simulation") {
  TEST_CASE("amplified scaffold reduces to gradient descent") {
    // sigma=0, S=N, I=1, P=1, gamma=1, warm start: x_{r+1} = x_r - eta grad f(x_r),
    // and on 1/2||x-b_i||^2 that is x_r = mean(b) + (1-eta)^r (x_0 - mean(b)).
    RunConfig cfg = quadratic_config(Algorithm::amp_scaffold, 3, 3);
    cfg.window_p = 1;
    cfg.quad.centers = {{1.0, -2.0}, {0.5, 4.0}, {-3.0, 1.0}};
    const QuadraticObjective obj({ModelVector{1.0, -2.0}, ModelVector{0.5, 4.0}, ModelVector{-3.0, 1.0}}, 0.0);
    const IidScheduler sched(3, 3);
    Simulation sim(cfg, obj, sched);
    const ModelVector mean{-0.5, 1.0};
    for (int r = 1; r <= 100; ++r) {
      sim.step();
      const double decay = std::pow(0.9, r);
      for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(sim.model()[k] - mean[k] * (1.0 - decay)) <= 1e-12);
    }
  }

  TEST_CASE("fedprox with mu = 0 is fedavg") {
    RunConfig a = quadratic_config(Algorithm::fedavg, 4, 2);
    a.local_steps = 5;
    a.quad.sigma = 0.5;
    RunConfig b = a;
    b.algorithm = Algorithm::fedprox;
    const QuadraticObjective obj({ModelVector{1.0}, ModelVector{2.0}, ModelVector{-1.0}, ModelVector{0.5}}, 0.5);
    const IidScheduler sched(4, 2);
    Simulation sa(a, obj, sched), sb(b, obj, sched);
    for (int r = 0; r < 50; ++r) {
      sa.step();
      sb.step();
      REQUIRE(sa.model() == sb.model());
    }
  }

  TEST_CASE("amplified fedavg with gamma = 1 is fedavg") {
    RunConfig a = quadratic_config(Algorithm::fedavg, 4, 1);
    a.pattern.kind = PatternKind::cyclic;
    a.pattern.k_bar = 2;
    a.local_steps = 3;
    RunConfig b = a;
    b.algorithm = Algorithm::amp_fedavg;
    const QuadraticObjective obj({ModelVector{1.0}, ModelVector{2.0}, ModelVector{-1.0}, ModelVector{0.5}}, 0.5);
    const GroupedCyclicScheduler sched(4, 2, 1);
    Simulation sa(a, obj, sched), sb(b, obj, sched);
    CHECK(sb.window() == 2);
    for (int r = 0; r < 40; ++r) {
      sa.step();
      sb.step();
      REQUIRE(sa.state().inner_w == sb.state().inner_w);
      if (sb.state().rounds_in_window == 0) REQUIRE(sa.model() == sb.model());
    }
  }

  TEST_CASE("control-variate mean invariant") {
    for (Algorithm alg : {Algorithm::amp_scaffold, Algorithm::scaffold}) {
      RunConfig cfg = quadratic_config(alg, 6, 1);
      cfg.pattern.kind = PatternKind::cyclic;
      cfg.pattern.k_bar = 3;
      cfg.local_steps = 4;
      cfg.quad.sigma = 1.0;
      cfg.quad.dim = 3;
      cfg.quad.centers.clear();
      const auto obj = make_objective(cfg);
      const auto sched = make_scheduler(cfg);
      Simulation sim(cfg, *obj, *sched);
      for (int r = 0; r < 60; ++r) {
        sim.step();
        const auto& cv = *sim.state().cv;
        ModelVector mean(3);
        for (const auto& c : cv.per_client) mean += c;
        mean *= 1.0 / 6.0;
        CHECK(max_abs_diff(mean, cv.global) <= 1e-12);
      }
    }
  }

  TEST_CASE("uplink accounting") {
    RunConfig cfg = quadratic_config(Algorithm::fedavg, 4, 2);
    cfg.quad.dim = 3;
    const auto obj = make_objective(cfg);
    const auto sched = make_scheduler(cfg);
    Simulation sim(cfg, *obj, *sched);
    sim.step();
    sim.step();
    CHECK(sim.uplink_scalars() == 2 * 2 * 3);

    cfg.algorithm = Algorithm::scaffold;
    Simulation sc(cfg, *obj, *sched);
    sc.step();
    CHECK(sc.uplink_scalars() == 2 * 2 * 3);
  }

  TEST_CASE("thread count does not change results") {
    RunConfig cfg = quadratic_config(Algorithm::amp_scaffold, 8, 4);
    cfg.pattern.kind = PatternKind::cyclic;
    cfg.pattern.k_bar = 2;
    cfg.gamma = 2.0;
    cfg.local_steps = 5;
    cfg.quad.sigma = 1.0;
    cfg.quad.dim = 4;
    cfg.quad.centers.clear();
    const auto obj = make_objective(cfg);
    const auto sched = make_scheduler(cfg);
    WorkerPool pool(4);
    Simulation serial(cfg, *obj, *sched), parallel(cfg, *obj, *sched, &pool);
    for (int r = 0; r < 30; ++r) {
      serial.step();
      parallel.step();
      REQUIRE(serial.state().inner_w == parallel.state().inner_w);
      REQUIRE(serial.model() == parallel.model());
    }
  }

  TEST_CASE("mismatched objective and configuration") {
    RunConfig cfg = quadratic_config(Algorithm::fedavg, 3, 1);
    const QuadraticObjective obj({ModelVector{1.0}, ModelVector{2.0}}, 0.0);
    const IidScheduler sched(2, 1);
    CHECK_THROWS(Simulation(cfg, obj, sched));
  }
}

TEST_SUITE("worker_pool") {
  TEST_CASE("every index runs once") {
    WorkerPool pool(3);
    std::vector<int> hits(1000, 0);
    pool.parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
    pool.parallel_for(0, [&](std::size_t) { FAIL("called"); });
  }

  TEST_CASE("lowest failing index wins") {
    WorkerPool pool(4);
    try {
      pool.parallel_for(100, [](std::size_t i) {
        if (i % 10 == 7) throw std::runtime_error(std::to_string(i));
      });
      FAIL("no exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "7");
    }
    // The pool stays usable.
    int sum = 0;
    std::mutex m;
    pool.parallel_for(10, [&](std::size_t i) {
      std::lock_guard lock(m);
      sum += static_cast<int>(i);
    });
    CHECK(sum == 45);
  }
}
