// Command-line front end: run, grid, verify, partition-report, datagen, gradcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include "pfl/data.hpp"
#include "pfl/diagnostics.hpp"
#include "pfl/harness.hpp"
#include "pfl/objectives.hpp"
#include "pfl/participation.hpp"
#include "pfl/run_config.hpp"

namespace fs = std::filesystem;
using namespace pfl;

namespace {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kConfigError = 2,
  kIoError = 3,
  kDataError = 4,
  kRuntimeError = 5,
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Writes via a sibling temp file and rename, so readers never see a partial file.
void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into '" + path.string() + "'");
  }
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-")
    std::cout << content;
  else
    write_atomic(out_path, content);
}

RunConfig build_config(const std::string& config_path, const std::vector<std::string>& overrides,
                       std::optional<std::uint64_t> seed) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  for (const auto& o : overrides) {
    const auto [key, value] = parse_override(o);
    apply_config_entry(cfg, key, value);
  }
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::size_t threads = 1;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config, "Configuration file (key = value lines)");
  if (config_required) c->required()->check(CLI::ExistingFile);
  cmd->add_option("--override", o.overrides, "KEY=VALUE override, repeatable")->allow_extra_args(false);
  cmd->add_option("--out", o.out, "Output file (default: stdout)");
  cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Override the configured seed");
}

struct VerifyOptions {
  std::string pattern = "cyclic";
  std::size_t n = 0, k_bar = 1, s = 1, g = 1, window = 0, trials = 10000;
  double p_active = 0.8, p_inactive = 0.05;
  std::uint64_t seed = 0;
  std::string out;
};

int run_verify(const VerifyOptions& v) {
  RunConfig cfg;
  apply_config_entry(cfg, "pattern", v.pattern);
  cfg.n_clients = v.n;
  cfg.s_clients = v.s;
  cfg.window_p = v.window;
  cfg.pattern.k_bar = v.k_bar;
  cfg.pattern.avail_rounds_g = v.g;
  cfg.pattern.p_active = v.p_active;
  cfg.pattern.p_inactive = v.p_inactive;
  cfg.objective = ObjectiveKind::quadratic;
  cfg.quad.centers.clear();
  const auto scheduler = make_scheduler(cfg);

  auto report = assumption_suite(*scheduler, v.trials, v.seed, v.window);
  const bool cyclic_family = cfg.pattern.kind == PatternKind::iid || cfg.pattern.kind == PatternKind::cyclic ||
                             cfg.pattern.kind == PatternKind::grouped_cyclic;
  if (cyclic_family) {
    const auto var = qbar_variance_check(*scheduler, v.trials, v.seed, v.window);
    const std::size_t k = cfg.pattern.kind == PatternKind::iid ? 1 : v.k_bar;
    const double closed = cyclic_qbar_variance(v.n, k, v.s, var.window);
    // Pooled over clients, 5% is many standard errors at 10^4 trials.
    const bool ok = closed == 0.0 ? var.mean_variance <= 1e-15
                                  : std::abs(var.mean_variance - closed) <= 0.05 * closed;
    report.checks.push_back({"qbar_variance_closed_form", "mean_over_clients", closed, var.mean_variance, ok});
  }
  std::cout << report.to_text();
  if (!v.out.empty()) write_atomic(v.out, report.to_csv());
  return report.all_passed() ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated optimization simulator"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "Run one configuration and write its metric CSV");
  add_common(run, run_opts, true);
  bool print_config = false;
  run->add_flag("--print-config", print_config, "Print the resolved configuration to stderr");

  CommonOptions grid_opts;
  std::string spec_path;
  auto* grid = app.add_subcommand("grid", "Run a grid of configurations over several seeds");
  grid->add_option("--spec", spec_path, "Experiment file (config lines plus grid.<key>, seeds, target_value)")
      ->required()
      ->check(CLI::ExistingFile);
  grid->add_option("--override", grid_opts.overrides, "KEY=VALUE override of the base config, repeatable");
  grid->add_option("--out", grid_opts.out, "Output CSV (default: stdout)");
  grid->add_option("--threads", grid_opts.threads, "Concurrent runs")->check(CLI::PositiveNumber);

  VerifyOptions vopt;
  auto* verify = app.add_subcommand("verify", "Monte Carlo check of a participation pattern");
  verify->add_option("--pattern", vopt.pattern, "iid, cyclic, grouped_cyclic, regularized or sca");
  verify->add_option("--n", vopt.n, "Number of clients")->required()->check(CLI::PositiveNumber);
  verify->add_option("--k-bar", vopt.k_bar, "Number of groups")->check(CLI::PositiveNumber);
  verify->add_option("--s", vopt.s, "Clients sampled per round")->check(CLI::PositiveNumber);
  verify->add_option("--g", vopt.g, "Rounds each group stays available")->check(CLI::PositiveNumber);
  verify->add_option("--window", vopt.window, "Window length (0: the pattern's own)");
  verify->add_option("--p-active", vopt.p_active, "sca: availability inside the active group");
  verify->add_option("--p-inactive", vopt.p_inactive, "sca: availability outside it");
  verify->add_option("--trials", vopt.trials, "Number of windows drawn");
  verify->add_option("--seed", vopt.seed, "Sampling seed");
  verify->add_option("--out", vopt.out, "Also write the report as CSV");

  CommonOptions part_opts;
  auto* partition = app.add_subcommand("partition-report", "Label histogram of the client partition");
  add_common(partition, part_opts, true);

  std::string datagen_dir;
  BlobParams blob{.num_classes = 10, .num_features = 64, .num_samples = 10000, .separation = 1.0, .noise = 1.0};
  std::size_t test_samples = 2000;
  std::uint64_t datagen_seed = 0;
  auto* datagen = app.add_subcommand("datagen", "Write a synthetic blob dataset as IDX files");
  datagen->add_option("--out-dir", datagen_dir, "Output directory")->required();
  datagen->add_option("--classes", blob.num_classes)->check(CLI::PositiveNumber);
  datagen->add_option("--features", blob.num_features)->check(CLI::PositiveNumber);
  datagen->add_option("--samples", blob.num_samples)->check(CLI::PositiveNumber);
  datagen->add_option("--test-samples", test_samples);
  datagen->add_option("--separation", blob.separation);
  datagen->add_option("--noise", blob.noise);
  datagen->add_option("--seed", datagen_seed);

  CommonOptions gc_opts;
  std::size_t gc_points = 20;
  double gc_h = 1e-5, gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the objective's gradients");
  add_common(gradcheck, gc_opts, true);
  gradcheck->add_option("--points", gc_points);
  gradcheck->add_option("--fd-step", gc_h, "Central-difference step");
  gradcheck->add_option("--tol", gc_tol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) {
      const RunConfig cfg = build_config(run_opts.config, run_opts.overrides, run_opts.seed);
      if (print_config) std::cerr << to_config_text(cfg);
      const auto record = run_once(cfg, run_opts.threads);
      emit(run_opts.out, record.to_csv());
      if (record.diverged())
        std::cerr << "warning: run diverged at round " << *record.diverged_round() << '\n';
      return kOk;
    }
    if (*grid) {
      auto spec = load_experiment_spec(spec_path);
      for (const auto& o : grid_opts.overrides) {
        const auto [key, value] = parse_override(o);
        apply_config_entry(spec.base, key, value);
      }
      const auto report = run_grid(spec, grid_opts.threads);
      emit(grid_opts.out, report.to_csv());
      const auto& best = report.cells[report.best_cell];
      std::cerr << "runs: " << report.runs_executed << ", best cell " << best.cell_id;
      for (std::size_t k = 0; k < report.keys.size(); ++k) std::cerr << ' ' << report.keys[k] << '=' << best.values[k];
      std::cerr << " (mean final loss " << format_number(best.mean_final_loss) << ")\n";
      return kOk;
    }
    if (*verify) return run_verify(vopt);
    if (*partition) {
      const RunConfig cfg = build_config(part_opts.config, part_opts.overrides, part_opts.seed);
      if (cfg.objective != ObjectiveKind::logistic) throw ConfigError("partition-report needs objective = logistic");
      const auto data = load_logistic_data(cfg);
      const auto shards = partition_by_similarity(
          data.train, {.n_clients = cfg.n_clients, .similarity = cfg.logistic.similarity, .seed = cfg.seed});
      emit(part_opts.out, label_histogram_csv(shards));
      return kOk;
    }
    if (*datagen) {
      fs::create_directories(datagen_dir);
      auto train = make_synthetic_dataset(SyntheticDataKind::blobs, blob, datagen_seed, 0);
      std::optional<LabeledDataset> test;
      if (test_samples > 0) {
        BlobParams tp = blob;
        tp.num_samples = test_samples;
        test = make_synthetic_dataset(SyntheticDataKind::blobs, tp, datagen_seed, 1);
      }
      std::vector<LabeledDataset*> all{&train};
      if (test) all.push_back(&*test);
      scale_to_unit_range(all);
      const fs::path dir(datagen_dir);
      write_idx(train, dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
      if (test) write_idx(*test, dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
      std::cerr << "wrote " << train.size() << " training rows" << (test ? " and a test set" : "") << " to "
                << dir.string() << '\n';
      return kOk;
    }
    if (*gradcheck) {
      const RunConfig cfg = build_config(gc_opts.config, gc_opts.overrides, gc_opts.seed);
      const auto objective = make_objective(cfg);
      const auto res = grad_check(*objective, gc_points, gc_h, gc_tol, cfg.seed);
      std::cout << (res.pass ? "PASS" : "FAIL") << " max relative error " << format_number(res.max_rel_error)
                << " (point " << res.worst_point << ", client " << res.worst_client << ")\n";
      return res.pass ? kOk : kCheckFailed;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIoError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfigError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
