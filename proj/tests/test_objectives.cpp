#include <doctest.h>

#include <cmath>
#include <vector>

#include "pfl/data.hpp"
#include "pfl/objectives.hpp"
#include "pfl/rng.hpp"

using namespace pfl;

namespace {

// Central differences, written out here so the check does not share code with
// the library's gradient checker.
ModelVector fd_gradient(const Objective& obj, std::size_t client, const ModelVector& x, double h) {
  ModelVector g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    ModelVector up = x, down = x;
    up[k] += h;
    down[k] -= h;
    g[k] = (obj.eval_local(client, up) - obj.eval_local(client, down)) / (2.0 * h);
  }
  return g;
}

double rel_error(const ModelVector& a, const ModelVector& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

ModelVector random_point(std::size_t d, std::uint64_t i, double scale = 1.0) {
  RngStream rng({.seed = 1234, .round = i, .purpose = RngPurpose::init});
  ModelVector x(d);
  for (std::size_t k = 0; k < d; ++k) x[k] = rng.gaussian(scale);
  return x;
}

LogisticObjective small_logistic(std::size_t batch = 1, double l2 = 0.0) {
  auto ds = make_synthetic_dataset(SyntheticDataKind::blobs,
                                   {.num_classes = 3, .num_features = 4, .num_samples = 100, .separation = 2.0}, 8);
  auto shards = partition_by_similarity(ds, {.n_clients = 2, .similarity = 50.0, .seed = 0});
  return LogisticObjective(std::move(shards), {.num_classes = 3, .num_features = 4, .l2 = l2, .batch_size = batch});
}

}  // namespace

TEST_SUITE("synthetic_hard") {
  TEST_CASE("hand-evaluated values") {
    const SyntheticHardObjective obj;
    const ModelVector zero(4);
    CHECK(obj.eval_local(0, zero) == doctest::Approx(2.0));
    CHECK(obj.eval_local(1, zero) == doctest::Approx(2.0));
    CHECK(obj.eval_global(zero) == doctest::Approx(2.0));
    // x2* = sqrt(mu) c / sqrt(H) = sqrt(2)/4 with the defaults.
    const ModelVector at_min{1.0, std::sqrt(2.0) / 4.0, 0.0, 0.0};
    CHECK(obj.eval_local(1, at_min) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(obj.eval_local(0, at_min) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(max_abs_diff(obj.minimizer(), at_min) <= 1e-15);
  }

  TEST_CASE("gradient at the origin") {
    const SyntheticHardObjective obj;
    const ModelVector zero(4);
    // mu (x1 - c) = -2, H (x2 - x2*) = -16 sqrt(2)/4, x3 term 0, +/- kappa.
    const ModelVector g0 = obj.grad_local(0, zero);
    CHECK(g0[0] == doctest::Approx(-2.0));
    CHECK(g0[1] == doctest::Approx(-4.0 * std::sqrt(2.0)));
    CHECK(g0[2] == 0.0);
    CHECK(g0[3] == 16.0);
    CHECK(obj.grad_local(1, zero)[3] == -16.0);
    CHECK(obj.grad_global(zero)[3] == 0.0);
  }

  TEST_CASE("kink in the third coordinate") {
    const SyntheticHardObjective obj;
    // H/8 (x3^2 + [x3]_+^2): slope H/4 x3 on the left, H/2 x3 on the right.
    CHECK(obj.grad_local(0, {0.0, 0.0, -1.0, 0.0})[2] == doctest::Approx(-4.0));
    CHECK(obj.grad_local(0, {0.0, 0.0, 1.0, 0.0})[2] == doctest::Approx(8.0));
  }

  TEST_CASE("finite differences") {
    const SyntheticHardObjective obj;
    double worst = 0.0;
    for (std::uint64_t p = 0; p < 50; ++p) {
      const auto x = random_point(4, p);
      for (std::size_t i = 0; i < 2; ++i) worst = std::max(worst, rel_error(obj.grad_local(i, x), fd_gradient(obj, i, x, 1e-5)));
    }
    CHECK(worst <= 1e-6);
  }

  TEST_CASE("noise enters only the third coordinate") {
    const SyntheticHardObjective noiseless({.sigma = 0.0});
    const ModelVector x{0.3, -0.2, 0.5, 1.0};
    const RngStreamKey key{.seed = 1, .client = 0, .round = 2, .step = 3};
    CHECK(noiseless.stoch_grad_local(0, x, key) == noiseless.grad_local(0, x));

    const SyntheticHardObjective noisy;
    double sum = 0.0, sum_sq = 0.0;
    constexpr int kDraws = 20000;
    for (int s = 0; s < kDraws; ++s) {
      const RngStreamKey k{.seed = 1, .client = 0, .round = 0, .step = static_cast<std::uint64_t>(s)};
      const auto g = noisy.stoch_grad_local(0, x, k);
      const auto exact = noisy.grad_local(0, x);
      CHECK(g[0] == exact[0]);
      CHECK(g[1] == exact[1]);
      CHECK(g[3] == exact[3]);
      const double xi = g[2] - exact[2];
      sum += xi;
      sum_sq += xi * xi;
    }
    CHECK(std::abs(sum / kDraws) < 4.0 / std::sqrt(kDraws));
    CHECK(sum_sq / kDraws == doctest::Approx(1.0).epsilon(0.05));
  }

  TEST_CASE("argument checks") {
    const SyntheticHardObjective obj;
    CHECK_THROWS_AS(obj.eval_local(0, ModelVector(3)), DimensionError);
    CHECK_THROWS_AS(obj.eval_local(2, ModelVector(4)), std::out_of_range);
  }
}

TEST_SUITE("quadratic") {
  TEST_CASE("values and gradients") {
    const QuadraticObjective single({ModelVector{1.0}}, 0.0);
    CHECK(single.eval_local(0, ModelVector{1.0}) == 0.0);
    CHECK(single.grad_local(0, ModelVector{0.0}) == ModelVector{-1.0});
    CHECK(single.eval_global(ModelVector{3.0}) == single.eval_local(0, ModelVector{3.0}));

    const QuadraticObjective pair({ModelVector{1.0}, ModelVector{-1.0}}, 0.0);
    CHECK(pair.eval_global(ModelVector{0.0}) == doctest::Approx(0.5));
    CHECK(pair.grad_global(ModelVector{0.0}) == ModelVector{0.0});
  }

  TEST_CASE("finite differences to machine precision") {
    const QuadraticObjective obj({ModelVector{1.0, 2.0, -3.0}, ModelVector{0.0, 0.5, 4.0}}, 0.0);
    double worst = 0.0;
    for (std::uint64_t p = 0; p < 50; ++p) {
      const auto x = random_point(3, p);
      for (std::size_t i = 0; i < 2; ++i) worst = std::max(worst, rel_error(obj.grad_local(i, x), fd_gradient(obj, i, x, 1e-5)));
    }
    CHECK(worst <= 1e-9);
  }

  TEST_CASE("mismatched centers") {
    CHECK_THROWS(QuadraticObjective({ModelVector{1.0}, ModelVector{1.0, 2.0}}, 0.0));
    CHECK_THROWS(QuadraticObjective({}, 0.0));
    CHECK_THROWS(QuadraticObjective({ModelVector{1.0}}, -1.0));
  }
}

TEST_SUITE("logistic") {
  TEST_CASE("loss at zero is log C") {
    const auto obj = small_logistic();
    CHECK(obj.eval_global(ModelVector(obj.dimension())) == doctest::Approx(std::log(3.0)));
  }

  TEST_CASE("finite differences") {
    for (double l2 : {0.0, 0.1}) {
      const auto obj = small_logistic(1, l2);
      double worst = 0.0;
      for (std::uint64_t p = 0; p < 50; ++p) {
        const auto x = random_point(obj.dimension(), p);
        for (std::size_t i = 0; i < obj.num_clients(); ++i)
          worst = std::max(worst, rel_error(obj.grad_local(i, x), fd_gradient(obj, i, x, 1e-5)));
      }
      CHECK(worst <= 1e-6);
    }
  }

  TEST_CASE("l2 skips biases") {
    const auto plain = small_logistic(1, 0.0);
    const auto reg = small_logistic(1, 0.5);
    ModelVector x(plain.dimension());
    const std::size_t stride = 5;
    x[4] = 3.0;  // bias of class 0
    CHECK(reg.eval_local(0, x) == doctest::Approx(plain.eval_local(0, x)));
    x[0] = 2.0;  // weight of class 0
    CHECK(reg.eval_local(0, x) == doctest::Approx(plain.eval_local(0, x) + 0.5 * 0.5 * 4.0));
    CHECK(reg.grad_local(0, x)[stride - 1] == doctest::Approx(plain.grad_local(0, x)[stride - 1]));
  }

  TEST_CASE("one-sample shard gives the exact gradient") {
    LabeledDataset one;
    one.num_features = 2;
    one.num_classes = 2;
    one.features = {0.3, -1.2};
    one.labels = {1};
    const LogisticObjective obj({one}, {.num_classes = 2, .num_features = 2});
    const ModelVector x{0.1, 0.2, 0.3, -0.4, 0.5, 0.6};
    CHECK(obj.stoch_grad_local(0, x, {.seed = 9, .step = 4}) == obj.grad_local(0, x));
  }

  TEST_CASE("minibatch gradients are unbiased") {
    const auto obj = small_logistic(4);
    const auto x = random_point(obj.dimension(), 77, 0.5);
    const auto exact = obj.grad_local(1, x);
    ModelVector mean(obj.dimension());
    constexpr int kDraws = 20000;
    for (int s = 0; s < kDraws; ++s)
      mean += obj.stoch_grad_local(1, x, {.seed = 2, .client = 1, .step = static_cast<std::uint64_t>(s)});
    mean *= 1.0 / kDraws;
    CHECK(max_abs_diff(mean, exact) < 0.02);
  }

  TEST_CASE("extreme logits stay finite") {
    const auto obj = small_logistic();
    ModelVector x(obj.dimension(), 0.0);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = (k % 2 == 0 ? 1.0 : -1.0) * 800.0;
    CHECK(std::isfinite(obj.eval_global(x)));
    CHECK(obj.grad_global(x).all_finite());
  }

  TEST_CASE("empty shard") {
    LabeledDataset empty;
    empty.num_features = 2;
    empty.num_classes = 2;
    LabeledDataset one;
    one.num_features = 2;
    one.num_classes = 2;
    one.features = {0.0, 1.0};
    one.labels = {0};
    const LogisticObjective obj({one, empty}, {.num_classes = 2, .num_features = 2});
    CHECK_THROWS(obj.stoch_grad_local(1, ModelVector(6), {}));
  }

  TEST_CASE("test metric is accuracy on the held-out set") {
    auto ds = make_synthetic_dataset(SyntheticDataKind::blobs, {.num_classes = 2, .num_features = 2, .num_samples = 40}, 3);
    LabeledDataset test = ds;
    const LogisticObjective obj({ds}, {.num_classes = 2, .num_features = 2}, test);
    const ModelVector x(obj.dimension());
    REQUIRE(obj.test_metric(x).has_value());
    CHECK(*obj.test_metric(x) == doctest::Approx(obj.accuracy(test, x)));
    const QuadraticObjective q({ModelVector{1.0}}, 0.0);
    CHECK_FALSE(q.test_metric(ModelVector{0.0}).has_value());
  }
}
