#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include "pfl/data.hpp"
#include "pfl/model_vector.hpp"
#include "pfl/rng.hpp"
#include "pfl/run_config.hpp"

namespace pfl {

/// Client objectives f_i and their uniform average f. Implementations are
/// immutable after construction and every method is re-entrant.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::size_t dimension() const = 0;
  virtual std::size_t num_clients() const = 0;

  virtual double eval_local(std::size_t client, const ModelVector& x) const = 0;
  virtual ModelVector grad_local(std::size_t client, const ModelVector& x) const = 0;
  /// Unbiased stochastic gradient; all randomness comes from key.
  virtual ModelVector stoch_grad_local(std::size_t client, const ModelVector& x, const RngStreamKey& key) const = 0;

  virtual double eval_global(const ModelVector& x) const;
  virtual ModelVector grad_global(const ModelVector& x) const;

  /// Held-out metric (e.g. test accuracy) when the objective has one.
  virtual std::optional<double> test_metric(const ModelVector&) const { return std::nullopt; }

  virtual ModelVector initial_point() const { return ModelVector(dimension()); }

 protected:
  void check_args(std::size_t client, const ModelVector& x) const;
};

/// Two-client convex lower-bound objective on R^4:
///   f_{1,2}(x) = mu/2 (x1 - c)^2 + H/2 (x2 - sqrt(mu) c / sqrt(H))^2 + H/8 (x3^2 + [x3]_+^2) +/- kappa x4
/// with stochastic gradients grad f_i(x) + xi e3, xi ~ N(0, sigma^2).
class SyntheticHardObjective final : public Objective {
 public:
  explicit SyntheticHardObjective(const SyntheticHardParams& params = {});

  std::size_t dimension() const override { return 4; }
  std::size_t num_clients() const override { return 2; }
  double eval_local(std::size_t client, const ModelVector& x) const override;
  ModelVector grad_local(std::size_t client, const ModelVector& x) const override;
  ModelVector stoch_grad_local(std::size_t client, const ModelVector& x, const RngStreamKey& key) const override;

  const SyntheticHardParams& params() const { return params_; }
  /// A global minimizer (the x4 coordinate is free).
  ModelVector minimizer() const;

 private:
  SyntheticHardParams params_;
  double x2_star_;
};

/// f_i(x) = 1/2 ||x - b_i||^2, stochastic gradient adds N(0, sigma^2 I).
class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(std::vector<ModelVector> centers, double sigma);

  std::size_t dimension() const override { return centers_.front().size(); }
  std::size_t num_clients() const override { return centers_.size(); }
  double eval_local(std::size_t client, const ModelVector& x) const override;
  ModelVector grad_local(std::size_t client, const ModelVector& x) const override;
  ModelVector stoch_grad_local(std::size_t client, const ModelVector& x, const RngStreamKey& key) const override;

  const ModelVector& center(std::size_t client) const { return centers_.at(client); }

 private:
  std::vector<ModelVector> centers_;
  double sigma_;
};

struct LogisticParams {
  std::size_t num_classes = 2;
  std::size_t num_features = 1;
  double l2 = 0.0;
  std::size_t batch_size = 1;
};

/// Multinomial softmax regression. Model layout: for each class c, F weights
/// followed by one bias, so d = C * (F + 1). The l2 penalty skips biases.
class LogisticObjective final : public Objective {
 public:
  LogisticObjective(std::vector<LabeledDataset> client_data, LogisticParams params,
                    std::optional<LabeledDataset> test_set = std::nullopt);

  std::size_t dimension() const override { return params_.num_classes * (params_.num_features + 1); }
  std::size_t num_clients() const override { return clients_.size(); }
  double eval_local(std::size_t client, const ModelVector& x) const override;
  ModelVector grad_local(std::size_t client, const ModelVector& x) const override;
  /// Mean gradient over batch_size samples drawn uniformly with replacement.
  ModelVector stoch_grad_local(std::size_t client, const ModelVector& x, const RngStreamKey& key) const override;
  std::optional<double> test_metric(const ModelVector& x) const override;

  /// Fraction of correctly classified rows of ds.
  double accuracy(const LabeledDataset& ds, const ModelVector& x) const;
  const LabeledDataset& client_data(std::size_t client) const { return clients_.at(client); }
  const LogisticParams& params() const { return params_; }

 private:
  // Cross-entropy of one row; adds its gradient into grad when non-null.
  double sample_loss(std::span<const double> features, std::uint32_t label, const ModelVector& x,
                     std::vector<double>& scratch, ModelVector* grad, double grad_scale) const;
  void add_l2(const ModelVector& x, double& loss, ModelVector* grad) const;
  const LabeledDataset& nonempty_shard(std::size_t client) const;

  std::vector<LabeledDataset> clients_;
  LogisticParams params_;
  std::optional<LabeledDataset> test_;
};

/// Builds the objective named by cfg (loading or generating data for logistic).
std::unique_ptr<Objective> make_objective(const RunConfig& cfg);

/// Training/test datasets for a logistic configuration, before partitioning.
struct LogisticData {
  LabeledDataset train;
  std::optional<LabeledDataset> test;
};
LogisticData load_logistic_data(const RunConfig& cfg);

}  // namespace pfl
