#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pfl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Algorithm { fedavg, fedprox, scaffold, amp_fedavg, amp_scaffold };
enum class PatternKind { iid, cyclic, grouped_cyclic, regularized, sca };
enum class ObjectiveKind { synthetic_hard, quadratic, logistic };
enum class CvInit { warm_start, zero };
enum class DataSource { blobs, idx };

std::string_view to_string(Algorithm a);
std::string_view to_string(PatternKind p);
std::string_view to_string(ObjectiveKind o);
std::string_view to_string(CvInit c);
std::string_view to_string(DataSource d);

bool is_amplified(Algorithm a);
bool uses_control_variates(Algorithm a);

struct PatternConfig {
  PatternKind kind = PatternKind::iid;
  std::size_t k_bar = 1;
  std::size_t avail_rounds_g = 1;
  double p_active = 0.8;
  double p_inactive = 0.05;

  friend bool operator==(const PatternConfig&, const PatternConfig&) = default;
};

struct SyntheticHardParams {
  double h = 16.0;
  double kappa = 16.0;
  double sigma = 1.0;
  double c = 1.0;
  double mu_pl = 2.0;

  friend bool operator==(const SyntheticHardParams&, const SyntheticHardParams&) = default;
};

struct QuadraticConfig {
  // Explicit per-client centers; when empty, centers are drawn from the seed.
  std::vector<std::vector<double>> centers;
  std::size_t dim = 2;
  double spread = 1.0;
  double sigma = 0.0;

  friend bool operator==(const QuadraticConfig&, const QuadraticConfig&) = default;
};

struct LogisticConfig {
  DataSource source = DataSource::blobs;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::size_t subset_size = 0;  // 0 keeps the whole training file
  double similarity = 5.0;      // percent
  double l2 = 0.0;
  std::size_t batch_size = 1;
  std::size_t blob_classes = 10;
  std::size_t blob_features = 32;
  std::size_t blob_samples = 10000;
  std::size_t blob_test_samples = 2000;
  double blob_separation = 1.0;
  double blob_noise = 1.0;

  friend bool operator==(const LogisticConfig&, const LogisticConfig&) = default;
};

struct RunConfig {
  std::size_t n_clients = 2;
  std::size_t rounds = 100;
  std::size_t local_steps = 1;
  std::size_t window_p = 0;  // 0: take the pattern's natural window
  std::size_t s_clients = 1;
  double eta = 0.01;
  std::optional<double> gamma_eta;  // when set, eta = gamma_eta / gamma
  double gamma = 1.0;
  double mu = 0.0;
  Algorithm algorithm = Algorithm::fedavg;
  PatternConfig pattern;
  ObjectiveKind objective = ObjectiveKind::quadratic;
  SyntheticHardParams hard;
  QuadraticConfig quad;
  LogisticConfig logistic;
  std::uint64_t seed = 0;
  CvInit cv_init = CvInit::warm_start;
  std::size_t eval_every = 20;

  double effective_eta() const { return gamma_eta ? *gamma_eta / gamma : eta; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

using KeyValue = std::pair<std::string, std::string>;

/// Parses `key = value` lines; `#` starts a comment. Keys are returned in file order.
std::vector<KeyValue> parse_key_values(std::istream& in, std::string_view source_name = "<input>");
/// Splits a `KEY=VALUE` command-line override.
KeyValue parse_override(std::string_view text);

/// Sets one field by its config-file key. Unknown keys throw ConfigError.
void apply_config_entry(RunConfig& cfg, std::string_view key, std::string_view value);

RunConfig parse_run_config(std::istream& in, std::string_view source_name = "<input>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Serializes every key so that parse_run_config(to_config_text(c)) == c.
std::string to_config_text(const RunConfig& cfg);

}  // namespace pfl
