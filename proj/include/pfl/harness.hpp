#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pfl/objectives.hpp"
#include "pfl/participation.hpp"
#include "pfl/run_config.hpp"
#include "pfl/run_record.hpp"

namespace pfl {

/// Runs one configuration and records rounds 0, eval_every, 2 eval_every, ...
/// and the final round R. Divergence ends the run and is recorded, not thrown.
RunRecord run_once(const RunConfig& cfg, std::size_t threads = 1);
/// Same, with a caller-supplied objective and scheduler.
RunRecord run_once(const RunConfig& cfg, const Objective& objective, const Scheduler& scheduler,
                   std::size_t threads = 1);

/// A base configuration plus a Cartesian grid over config keys and a seed list.
/// File format: ordinary config lines, plus `grid.<key> = v1, v2, ...`,
/// `seeds = s1, s2, ...` and optionally `target_value = t`.
struct ExperimentSpec {
  RunConfig base;
  std::vector<std::pair<std::string, std::vector<std::string>>> grid;
  std::vector<std::uint64_t> seeds{0};
  std::optional<double> target_value;

  std::size_t num_cells() const;
  /// Values of each grid key for a cell; the first key varies slowest.
  std::vector<std::string> cell_values(std::size_t cell) const;
  RunConfig cell_config(std::size_t cell, std::uint64_t seed) const;
};

ExperimentSpec parse_experiment_spec(std::istream& in, std::string_view source_name = "<input>");
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

struct GridCellResult {
  std::size_t cell_id = 0;
  std::vector<std::string> values;
  double mean_final_loss = 0.0;  // +inf if any seed diverged
  double std_final_loss = 0.0;   // sample standard deviation over seeds
  /// Mean rounds to reach the target; empty unless every seed reached it.
  std::optional<double> mean_rounds_to_target;
  std::size_t diverged_runs = 0;
};

struct GridReport {
  std::vector<std::string> keys;
  std::vector<GridCellResult> cells;
  std::size_t runs_executed = 0;
  std::size_t best_cell = 0;  // lowest mean final loss, ties to the lower id

  /// `cell_id,<keys>,mean_final_loss,std_final_loss,mean_rounds_to_target`
  std::string to_csv() const;
};

/// Runs every (cell, seed) pair, `threads` runs at a time.
GridReport run_grid(const ExperimentSpec& spec, std::size_t threads = 1);

}  // namespace pfl
