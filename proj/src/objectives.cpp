#include "pfl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pfl {

void Objective::check_args(std::size_t client, const ModelVector& x) const {
  if (client >= num_clients())
    throw std::out_of_range("client " + std::to_string(client) + " out of range");
  if (x.size() != dimension())
    throw DimensionError("model has dimension " + std::to_string(x.size()) + ", objective expects " +
                         std::to_string(dimension()));
}

double Objective::eval_global(const ModelVector& x) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < num_clients(); ++i) acc += eval_local(i, x);
  return acc / static_cast<double>(num_clients());
}

ModelVector Objective::grad_global(const ModelVector& x) const {
  ModelVector acc(dimension());
  for (std::size_t i = 0; i < num_clients(); ++i) acc += grad_local(i, x);
  acc *= 1.0 / static_cast<double>(num_clients());
  return acc;
}

// ---------------------------------------------------------------------------

SyntheticHardObjective::SyntheticHardObjective(const SyntheticHardParams& params)
    : params_(params), x2_star_(std::sqrt(params.mu_pl) * params.c / std::sqrt(params.h)) {
  if (!(params.h > 0.0 && params.mu_pl > 0.0 && params.sigma >= 0.0 && params.kappa >= 0.0))
    throw std::invalid_argument("synthetic_hard requires H > 0, mu > 0, sigma >= 0, kappa >= 0");
}

double SyntheticHardObjective::eval_local(std::size_t client, const ModelVector& x) const {
  check_args(client, x);
  const auto& p = params_;
  const double d1 = x[0] - p.c;
  const double d2 = x[1] - x2_star_;
  const double pos = std::max(x[2], 0.0);
  const double sign = client == 0 ? 1.0 : -1.0;
  return 0.5 * p.mu_pl * d1 * d1 + 0.5 * p.h * d2 * d2 + p.h / 8.0 * (x[2] * x[2] + pos * pos) +
         sign * p.kappa * x[3];
}

ModelVector SyntheticHardObjective::grad_local(std::size_t client, const ModelVector& x) const {
  check_args(client, x);
  const auto& p = params_;
  const double sign = client == 0 ? 1.0 : -1.0;
  // d/dx3 of [x3]_+^2 is 2 [x3]_+, which is 0 at the kink.
  return ModelVector{p.mu_pl * (x[0] - p.c), p.h * (x[1] - x2_star_),
                     p.h / 4.0 * (x[2] + std::max(x[2], 0.0)), sign * p.kappa};
}

ModelVector SyntheticHardObjective::stoch_grad_local(std::size_t client, const ModelVector& x,
                                                     const RngStreamKey& key) const {
  ModelVector g = grad_local(client, x);
  if (params_.sigma > 0.0) g[2] += RngStream(key).gaussian(params_.sigma);
  return g;
}

ModelVector SyntheticHardObjective::minimizer() const { return ModelVector{params_.c, x2_star_, 0.0, 0.0}; }

// ---------------------------------------------------------------------------

QuadraticObjective::QuadraticObjective(std::vector<ModelVector> centers, double sigma)
    : centers_(std::move(centers)), sigma_(sigma) {
  if (centers_.empty()) throw std::invalid_argument("quadratic objective needs at least one center");
  if (sigma_ < 0.0) throw std::invalid_argument("quadratic sigma must be >= 0");
  for (const auto& c : centers_) c.require_same_dim(centers_.front());
}

double QuadraticObjective::eval_local(std::size_t client, const ModelVector& x) const {
  check_args(client, x);
  const ModelVector diff = x - centers_[client];
  return 0.5 * dot(diff, diff);
}

ModelVector QuadraticObjective::grad_local(std::size_t client, const ModelVector& x) const {
  check_args(client, x);
  return x - centers_[client];
}

ModelVector QuadraticObjective::stoch_grad_local(std::size_t client, const ModelVector& x,
                                                 const RngStreamKey& key) const {
  ModelVector g = grad_local(client, x);
  if (sigma_ > 0.0) {
    RngStream rng(key);
    for (double& v : g) v += rng.gaussian(sigma_);
  }
  return g;
}

// ---------------------------------------------------------------------------

LogisticObjective::LogisticObjective(std::vector<LabeledDataset> client_data, LogisticParams params,
                                     std::optional<LabeledDataset> test_set)
    : clients_(std::move(client_data)), params_(params), test_(std::move(test_set)) {
  if (clients_.empty()) throw std::invalid_argument("logistic objective needs at least one client");
  if (params_.num_classes < 2 || params_.num_features == 0)
    throw std::invalid_argument("logistic objective needs >= 2 classes and >= 1 feature");
  if (params_.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  auto check = [&](const LabeledDataset& ds) {
    ds.validate();
    if (ds.num_features != params_.num_features || ds.num_classes > params_.num_classes)
      throw std::invalid_argument("client dataset shape does not match logistic parameters");
  };
  for (const auto& ds : clients_) check(ds);
  if (test_) check(*test_);
}

double LogisticObjective::sample_loss(std::span<const double> features, std::uint32_t label,
                                      const ModelVector& x, std::vector<double>& logits, ModelVector* grad,
                                      double grad_scale) const {
  const std::size_t classes = params_.num_classes;
  const std::size_t stride = params_.num_features + 1;
  logits.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const double* w = x.span().data() + c * stride;
    double z = w[params_.num_features];
    for (std::size_t f = 0; f < features.size(); ++f) z += w[f] * features[f];
    logits[c] = z;
  }
  const double zmax = *std::max_element(logits.begin(), logits.end());
  const double label_shifted = logits[label] - zmax;
  double sum = 0.0;
  for (double& z : logits) {
    z = std::exp(z - zmax);
    sum += z;
  }
  const double loss = std::log(sum) - label_shifted;
  if (grad) {
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = logits[c] / sum;
      const double coeff = grad_scale * (p - (c == label ? 1.0 : 0.0));
      double* g = &(*grad)[c * stride];
      for (std::size_t f = 0; f < features.size(); ++f) g[f] += coeff * features[f];
      g[params_.num_features] += coeff;
    }
  }
  return loss;
}

void LogisticObjective::add_l2(const ModelVector& x, double& loss, ModelVector* grad) const {
  if (params_.l2 == 0.0) return;
  const std::size_t stride = params_.num_features + 1;
  double sq = 0.0;
  for (std::size_t c = 0; c < params_.num_classes; ++c)
    for (std::size_t f = 0; f < params_.num_features; ++f) {
      const double w = x[c * stride + f];
      sq += w * w;
      if (grad) (*grad)[c * stride + f] += params_.l2 * w;
    }
  loss += 0.5 * params_.l2 * sq;
}

const LabeledDataset& LogisticObjective::nonempty_shard(std::size_t client) const {
  const auto& ds = clients_[client];
  if (ds.empty()) throw std::invalid_argument("client " + std::to_string(client) + " has an empty local dataset");
  return ds;
}

double LogisticObjective::eval_local(std::size_t client, const ModelVector& x) const {
  check_args(client, x);
  const auto& ds = nonempty_shard(client);
  std::vector<double> scratch;
  double loss = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) loss += sample_loss(ds.row(i), ds.labels[i], x, scratch, nullptr, 0.0);
  loss /= static_cast<double>(ds.size());
  add_l2(x, loss, nullptr);
  return loss;
}

ModelVector LogisticObjective::grad_local(std::size_t client, const ModelVector& x) const {
  check_args(client, x);
  const auto& ds = nonempty_shard(client);
  std::vector<double> scratch;
  ModelVector grad(dimension());
  const double scale = 1.0 / static_cast<double>(ds.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) loss += sample_loss(ds.row(i), ds.labels[i], x, scratch, &grad, scale);
  add_l2(x, loss, &grad);
  return grad;
}

ModelVector LogisticObjective::stoch_grad_local(std::size_t client, const ModelVector& x,
                                                const RngStreamKey& key) const {
  check_args(client, x);
  const auto& ds = nonempty_shard(client);
  RngStream rng(key);
  std::vector<double> scratch;
  ModelVector grad(dimension());
  const double scale = 1.0 / static_cast<double>(params_.batch_size);
  double loss = 0.0;
  for (std::size_t b = 0; b < params_.batch_size; ++b) {
    const std::size_t i = ds.size() == 1 ? 0 : rng.below(ds.size());
    loss += sample_loss(ds.row(i), ds.labels[i], x, scratch, &grad, scale);
  }
  add_l2(x, loss, &grad);
  return grad;
}

double LogisticObjective::accuracy(const LabeledDataset& ds, const ModelVector& x) const {
  if (ds.empty()) return 0.0;
  const std::size_t stride = params_.num_features + 1;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.row(i);
    std::size_t best = 0;
    double best_z = -INFINITY;
    for (std::size_t c = 0; c < params_.num_classes; ++c) {
      const double* w = x.span().data() + c * stride;
      double z = w[params_.num_features];
      for (std::size_t f = 0; f < row.size(); ++f) z += w[f] * row[f];
      if (z > best_z) {
        best_z = z;
        best = c;
      }
    }
    correct += best == ds.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::optional<double> LogisticObjective::test_metric(const ModelVector& x) const {
  if (!test_) return std::nullopt;
  return accuracy(*test_, x);
}

// ---------------------------------------------------------------------------

LogisticData load_logistic_data(const RunConfig& cfg) {
  const auto& lc = cfg.logistic;
  LogisticData out;
  if (lc.source == DataSource::idx) {
    out.train = load_idx(lc.train_images, lc.train_labels);
    if (!lc.test_images.empty() && !lc.test_labels.empty()) out.test = load_idx(lc.test_images, lc.test_labels);
  } else {
    BlobParams bp{.num_classes = lc.blob_classes,
                  .num_features = lc.blob_features,
                  .num_samples = lc.blob_samples,
                  .separation = lc.blob_separation,
                  .noise = lc.blob_noise};
    out.train = make_synthetic_dataset(SyntheticDataKind::blobs, bp, cfg.seed, 0);
    if (lc.blob_test_samples > 0) {
      bp.num_samples = lc.blob_test_samples;
      out.test = make_synthetic_dataset(SyntheticDataKind::blobs, bp, cfg.seed, 1);
    }
  }
  if (out.test) out.test->num_classes = std::max(out.test->num_classes, out.train.num_classes);
  if (lc.subset_size > 0 && lc.subset_size < out.train.size()) {
    // Seeded random subset; the partition purpose with round 1 keeps it apart from the shard shuffle.
    std::vector<std::size_t> idx(out.train.size());
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng({.seed = cfg.seed, .round = 1, .purpose = RngPurpose::partition});
    for (std::size_t i = 0; i < lc.subset_size; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    idx.resize(lc.subset_size);
    std::sort(idx.begin(), idx.end());
    const auto classes = out.train.num_classes;
    out.train = out.train.subset(idx);
    out.train.num_classes = classes;
  }
  return out;
}

std::unique_ptr<Objective> make_objective(const RunConfig& cfg) {
  switch (cfg.objective) {
    case ObjectiveKind::synthetic_hard:
      return std::make_unique<SyntheticHardObjective>(cfg.hard);
    case ObjectiveKind::quadratic: {
      std::vector<ModelVector> centers;
      if (!cfg.quad.centers.empty()) {
        for (const auto& c : cfg.quad.centers) centers.emplace_back(c);
      } else {
        for (std::size_t i = 0; i < cfg.n_clients; ++i) {
          ModelVector c(cfg.quad.dim);
          RngStream rng({.seed = cfg.seed, .client = i, .purpose = RngPurpose::init});
          rng.fill_gaussian(c.span(), cfg.quad.spread);
          centers.push_back(std::move(c));
        }
      }
      return std::make_unique<QuadraticObjective>(std::move(centers), cfg.quad.sigma);
    }
    case ObjectiveKind::logistic: {
      auto data = load_logistic_data(cfg);
      const auto classes = data.train.num_classes;
      const auto features = data.train.num_features;
      auto shards = partition_by_similarity(
          data.train, {.n_clients = cfg.n_clients, .similarity = cfg.logistic.similarity, .seed = cfg.seed});
      return std::make_unique<LogisticObjective>(std::move(shards),
                                                 LogisticParams{.num_classes = classes,
                                                                .num_features = features,
                                                                .l2 = cfg.logistic.l2,
                                                                .batch_size = cfg.logistic.batch_size},
                                                 std::move(data.test));
    }
  }
  throw std::invalid_argument("unknown objective");
}

}  // namespace pfl
