#include "pfl/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

namespace pfl {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string describe(std::string_view key, std::string_view value) {
  return "invalid value '" + std::string(value) + "' for key '" + std::string(key) + "'";
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(out))
    throw ConfigError(describe(key, value));
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) throw ConfigError(describe(key, value));
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view key, std::string_view value, const Enum (&options)[N]) {
  for (Enum e : options)
    if (to_string(e) == value) return e;
  throw ConfigError(describe(key, value));
}

constexpr Algorithm kAlgorithms[] = {Algorithm::fedavg, Algorithm::fedprox, Algorithm::scaffold,
                                     Algorithm::amp_fedavg, Algorithm::amp_scaffold};
constexpr PatternKind kPatterns[] = {PatternKind::iid, PatternKind::cyclic, PatternKind::grouped_cyclic,
                                     PatternKind::regularized, PatternKind::sca};
constexpr ObjectiveKind kObjectives[] = {ObjectiveKind::synthetic_hard, ObjectiveKind::quadratic,
                                         ObjectiveKind::logistic};
constexpr CvInit kCvInits[] = {CvInit::warm_start, CvInit::zero};
constexpr DataSource kSources[] = {DataSource::blobs, DataSource::idx};

// "1,2;3,4" -> {{1,2},{3,4}}
std::vector<std::vector<double>> parse_centers(std::string_view key, std::string_view value) {
  std::vector<std::vector<double>> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    auto end = value.find(';', start);
    if (end == std::string_view::npos) end = value.size();
    std::string_view row = trim(value.substr(start, end - start));
    std::vector<double> coords;
    std::size_t s = 0;
    while (s <= row.size()) {
      auto e = row.find(',', s);
      if (e == std::string_view::npos) e = row.size();
      coords.push_back(parse_double(key, trim(row.substr(s, e - s))));
      s = e + 1;
    }
    out.push_back(std::move(coords));
    start = end + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

using Setter = std::function<void(RunConfig&, std::string_view, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"n_clients", [](RunConfig& c, auto k, auto v) { c.n_clients = parse_size(k, v); }},
      {"rounds", [](RunConfig& c, auto k, auto v) { c.rounds = parse_size(k, v); }},
      {"local_steps", [](RunConfig& c, auto k, auto v) { c.local_steps = parse_size(k, v); }},
      {"window_p", [](RunConfig& c, auto k, auto v) { c.window_p = parse_size(k, v); }},
      {"s_clients", [](RunConfig& c, auto k, auto v) { c.s_clients = parse_size(k, v); }},
      {"eta", [](RunConfig& c, auto k, auto v) { c.eta = parse_double(k, v); }},
      {"gamma_eta", [](RunConfig& c, auto k, auto v) { c.gamma_eta = parse_double(k, v); }},
      {"gamma", [](RunConfig& c, auto k, auto v) { c.gamma = parse_double(k, v); }},
      {"mu", [](RunConfig& c, auto k, auto v) { c.mu = parse_double(k, v); }},
      {"algorithm", [](RunConfig& c, auto k, auto v) { c.algorithm = parse_enum(k, v, kAlgorithms); }},
      {"pattern", [](RunConfig& c, auto k, auto v) { c.pattern.kind = parse_enum(k, v, kPatterns); }},
      {"k_bar", [](RunConfig& c, auto k, auto v) { c.pattern.k_bar = parse_size(k, v); }},
      {"avail_rounds_g", [](RunConfig& c, auto k, auto v) { c.pattern.avail_rounds_g = parse_size(k, v); }},
      {"p_active", [](RunConfig& c, auto k, auto v) { c.pattern.p_active = parse_double(k, v); }},
      {"p_inactive", [](RunConfig& c, auto k, auto v) { c.pattern.p_inactive = parse_double(k, v); }},
      {"objective", [](RunConfig& c, auto k, auto v) { c.objective = parse_enum(k, v, kObjectives); }},
      {"hard_h", [](RunConfig& c, auto k, auto v) { c.hard.h = parse_double(k, v); }},
      {"hard_kappa", [](RunConfig& c, auto k, auto v) { c.hard.kappa = parse_double(k, v); }},
      {"hard_sigma", [](RunConfig& c, auto k, auto v) { c.hard.sigma = parse_double(k, v); }},
      {"hard_c", [](RunConfig& c, auto k, auto v) { c.hard.c = parse_double(k, v); }},
      {"hard_mu", [](RunConfig& c, auto k, auto v) { c.hard.mu_pl = parse_double(k, v); }},
      {"quad_centers", [](RunConfig& c, auto k, auto v) { c.quad.centers = parse_centers(k, v); }},
      {"quad_dim", [](RunConfig& c, auto k, auto v) { c.quad.dim = parse_size(k, v); }},
      {"quad_spread", [](RunConfig& c, auto k, auto v) { c.quad.spread = parse_double(k, v); }},
      {"quad_sigma", [](RunConfig& c, auto k, auto v) { c.quad.sigma = parse_double(k, v); }},
      {"data_source", [](RunConfig& c, auto k, auto v) { c.logistic.source = parse_enum(k, v, kSources); }},
      {"train_images", [](RunConfig& c, auto, auto v) { c.logistic.train_images = std::string(v); }},
      {"train_labels", [](RunConfig& c, auto, auto v) { c.logistic.train_labels = std::string(v); }},
      {"test_images", [](RunConfig& c, auto, auto v) { c.logistic.test_images = std::string(v); }},
      {"test_labels", [](RunConfig& c, auto, auto v) { c.logistic.test_labels = std::string(v); }},
      {"subset_size", [](RunConfig& c, auto k, auto v) { c.logistic.subset_size = parse_size(k, v); }},
      {"similarity", [](RunConfig& c, auto k, auto v) { c.logistic.similarity = parse_double(k, v); }},
      {"l2", [](RunConfig& c, auto k, auto v) { c.logistic.l2 = parse_double(k, v); }},
      {"batch_size", [](RunConfig& c, auto k, auto v) { c.logistic.batch_size = parse_size(k, v); }},
      {"blob_classes", [](RunConfig& c, auto k, auto v) { c.logistic.blob_classes = parse_size(k, v); }},
      {"blob_features", [](RunConfig& c, auto k, auto v) { c.logistic.blob_features = parse_size(k, v); }},
      {"blob_samples", [](RunConfig& c, auto k, auto v) { c.logistic.blob_samples = parse_size(k, v); }},
      {"blob_test_samples",
       [](RunConfig& c, auto k, auto v) { c.logistic.blob_test_samples = parse_size(k, v); }},
      {"blob_separation",
       [](RunConfig& c, auto k, auto v) { c.logistic.blob_separation = parse_double(k, v); }},
      {"blob_noise", [](RunConfig& c, auto k, auto v) { c.logistic.blob_noise = parse_double(k, v); }},
      {"seed", [](RunConfig& c, auto k, auto v) { c.seed = parse_u64(k, v); }},
      {"cv_init", [](RunConfig& c, auto k, auto v) { c.cv_init = parse_enum(k, v, kCvInits); }},
      {"eval_every", [](RunConfig& c, auto k, auto v) { c.eval_every = parse_size(k, v); }},
  };
  return table;
}

}  // namespace

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedprox: return "fedprox";
    case Algorithm::scaffold: return "scaffold";
    case Algorithm::amp_fedavg: return "amp_fedavg";
    case Algorithm::amp_scaffold: return "amp_scaffold";
  }
  return "?";
}

std::string_view to_string(PatternKind p) {
  switch (p) {
    case PatternKind::iid: return "iid";
    case PatternKind::cyclic: return "cyclic";
    case PatternKind::grouped_cyclic: return "grouped_cyclic";
    case PatternKind::regularized: return "regularized";
    case PatternKind::sca: return "sca";
  }
  return "?";
}

std::string_view to_string(ObjectiveKind o) {
  switch (o) {
    case ObjectiveKind::synthetic_hard: return "synthetic_hard";
    case ObjectiveKind::quadratic: return "quadratic";
    case ObjectiveKind::logistic: return "logistic";
  }
  return "?";
}

std::string_view to_string(CvInit c) { return c == CvInit::warm_start ? "warm_start" : "zero"; }

std::string_view to_string(DataSource d) { return d == DataSource::blobs ? "blobs" : "idx"; }

bool is_amplified(Algorithm a) { return a == Algorithm::amp_fedavg || a == Algorithm::amp_scaffold; }

bool uses_control_variates(Algorithm a) { return a == Algorithm::scaffold || a == Algorithm::amp_scaffold; }

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid configuration: " + msg); };
  if (n_clients == 0) fail("n_clients must be positive");
  if (local_steps == 0) fail("local_steps must be positive");
  if (eval_every == 0) fail("eval_every must be positive");
  if (!(effective_eta() > 0.0)) fail("eta must be positive");
  if (!(gamma >= 1.0)) fail("gamma must be >= 1");
  if (!(mu >= 0.0)) fail("mu must be >= 0");
  if (!is_amplified(algorithm) && gamma != 1.0)
    fail("gamma != 1 requires an amplified algorithm (got " + std::string(to_string(algorithm)) + ")");
  if (algorithm != Algorithm::fedprox && mu != 0.0) fail("mu is only meaningful for fedprox");

  const auto& p = pattern;
  switch (p.kind) {
    case PatternKind::iid:
      if (s_clients == 0 || s_clients > n_clients) fail("s_clients must be in [1, n_clients]");
      break;
    case PatternKind::cyclic:
    case PatternKind::grouped_cyclic:
    case PatternKind::sca:
      if (p.k_bar == 0 || n_clients % p.k_bar != 0) fail("n_clients must be a multiple of k_bar");
      if (s_clients == 0 || s_clients > n_clients / p.k_bar) fail("s_clients must be in [1, n_clients / k_bar]");
      if (p.avail_rounds_g == 0) fail("avail_rounds_g must be positive");
      if (p.kind == PatternKind::sca) {
        if (!(p.p_active > 0.0 && p.p_active <= 1.0)) fail("p_active must be in (0, 1]");
        if (!(p.p_inactive >= 0.0 && p.p_inactive <= 1.0)) fail("p_inactive must be in [0, 1]");
      }
      break;
    case PatternKind::regularized:
      if (window_p == 0) fail("regularized pattern requires window_p");
      if (n_clients % window_p != 0) fail("n_clients must be a multiple of window_p for regularized");
      break;
  }

  switch (objective) {
    case ObjectiveKind::synthetic_hard:
      if (n_clients != 2) fail("synthetic_hard requires n_clients = 2");
      if (!(hard.h > 0.0 && hard.mu_pl > 0.0 && hard.sigma >= 0.0 && hard.kappa >= 0.0))
        fail("synthetic_hard requires hard_h > 0, hard_mu > 0, hard_sigma >= 0, hard_kappa >= 0");
      break;
    case ObjectiveKind::quadratic:
      if (!quad.centers.empty()) {
        if (quad.centers.size() != n_clients) fail("quad_centers must list one center per client");
        for (const auto& c : quad.centers)
          if (c.size() != quad.centers.front().size()) fail("quad_centers must share one dimension");
      } else if (quad.dim == 0) {
        fail("quad_dim must be positive");
      }
      if (!(quad.sigma >= 0.0)) fail("quad_sigma must be >= 0");
      break;
    case ObjectiveKind::logistic:
      if (!(logistic.similarity >= 0.0 && logistic.similarity <= 100.0)) fail("similarity must be in [0, 100]");
      if (logistic.batch_size == 0) fail("batch_size must be positive");
      if (!(logistic.l2 >= 0.0)) fail("l2 must be >= 0");
      if (logistic.source == DataSource::idx &&
          (logistic.train_images.empty() || logistic.train_labels.empty()))
        fail("data_source = idx requires train_images and train_labels");
      if (logistic.source == DataSource::blobs &&
          (logistic.blob_classes < 2 || logistic.blob_features == 0 || logistic.blob_samples == 0))
        fail("blob dataset needs >= 2 classes, features > 0 and samples > 0");
      break;
  }
}

std::vector<KeyValue> parse_key_values(std::istream& in, std::string_view source_name) {
  std::vector<KeyValue> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(std::string(source_name) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    auto key = trim(view.substr(0, eq));
    auto value = trim(view.substr(eq + 1));
    if (key.empty())
      throw ConfigError(std::string(source_name) + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::string(key), std::string(value));
  }
  return out;
}

KeyValue parse_override(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || trim(text.substr(0, eq)).empty())
    throw ConfigError("override '" + std::string(text) + "' is not KEY=VALUE");
  return {std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1)))};
}

void apply_config_entry(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second(cfg, key, value);
}

RunConfig parse_run_config(std::istream& in, std::string_view source_name) {
  RunConfig cfg;
  for (const auto& [k, v] : parse_key_values(in, source_name)) apply_config_entry(cfg, k, v);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  return parse_run_config(in, path.string());
}

std::string to_config_text(const RunConfig& c) {
  std::ostringstream os;
  auto kv = [&](std::string_view k, const std::string& v) { os << k << " = " << v << '\n'; };
  kv("n_clients", std::to_string(c.n_clients));
  kv("rounds", std::to_string(c.rounds));
  kv("local_steps", std::to_string(c.local_steps));
  kv("window_p", std::to_string(c.window_p));
  kv("s_clients", std::to_string(c.s_clients));
  kv("eta", format_double(c.eta));
  if (c.gamma_eta) kv("gamma_eta", format_double(*c.gamma_eta));
  kv("gamma", format_double(c.gamma));
  kv("mu", format_double(c.mu));
  kv("algorithm", std::string(to_string(c.algorithm)));
  kv("pattern", std::string(to_string(c.pattern.kind)));
  kv("k_bar", std::to_string(c.pattern.k_bar));
  kv("avail_rounds_g", std::to_string(c.pattern.avail_rounds_g));
  kv("p_active", format_double(c.pattern.p_active));
  kv("p_inactive", format_double(c.pattern.p_inactive));
  kv("objective", std::string(to_string(c.objective)));
  kv("hard_h", format_double(c.hard.h));
  kv("hard_kappa", format_double(c.hard.kappa));
  kv("hard_sigma", format_double(c.hard.sigma));
  kv("hard_c", format_double(c.hard.c));
  kv("hard_mu", format_double(c.hard.mu_pl));
  if (!c.quad.centers.empty()) {
    std::string centers;
    for (std::size_t i = 0; i < c.quad.centers.size(); ++i) {
      if (i) centers += ';';
      for (std::size_t j = 0; j < c.quad.centers[i].size(); ++j) {
        if (j) centers += ',';
        centers += format_double(c.quad.centers[i][j]);
      }
    }
    kv("quad_centers", centers);
  }
  kv("quad_dim", std::to_string(c.quad.dim));
  kv("quad_spread", format_double(c.quad.spread));
  kv("quad_sigma", format_double(c.quad.sigma));
  kv("data_source", std::string(to_string(c.logistic.source)));
  if (!c.logistic.train_images.empty()) kv("train_images", c.logistic.train_images);
  if (!c.logistic.train_labels.empty()) kv("train_labels", c.logistic.train_labels);
  if (!c.logistic.test_images.empty()) kv("test_images", c.logistic.test_images);
  if (!c.logistic.test_labels.empty()) kv("test_labels", c.logistic.test_labels);
  kv("subset_size", std::to_string(c.logistic.subset_size));
  kv("similarity", format_double(c.logistic.similarity));
  kv("l2", format_double(c.logistic.l2));
  kv("batch_size", std::to_string(c.logistic.batch_size));
  kv("blob_classes", std::to_string(c.logistic.blob_classes));
  kv("blob_features", std::to_string(c.logistic.blob_features));
  kv("blob_samples", std::to_string(c.logistic.blob_samples));
  kv("blob_test_samples", std::to_string(c.logistic.blob_test_samples));
  kv("blob_separation", format_double(c.logistic.blob_separation));
  kv("blob_noise", format_double(c.logistic.blob_noise));
  kv("seed", std::to_string(c.seed));
  kv("cv_init", std::string(to_string(c.cv_init)));
  kv("eval_every", std::to_string(c.eval_every));
  return os.str();
}

}  // namespace pfl
