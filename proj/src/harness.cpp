#include "pfl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "pfl/algorithms.hpp"
#include "pfl/worker_pool.hpp"

namespace pfl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (const auto& v : out)
    if (v.empty()) throw ConfigError("empty entry in list '" + std::string(text) + "'");
  return out;
}

RunRow evaluate(const Objective& objective, const ModelVector& x, std::size_t round, std::uint64_t uplink) {
  RunRow row;
  row.round = round;
  row.train_loss = objective.eval_global(x);
  row.grad_norm = norm(objective.grad_global(x));
  row.test_metric = objective.test_metric(x);
  row.uplink_scalars = uplink;
  return row;
}

bool finite_row(const RunRow& row) {
  return std::isfinite(row.train_loss) && std::isfinite(row.grad_norm) &&
         (!row.test_metric || std::isfinite(*row.test_metric));
}

}  // namespace

RunRecord run_once(const RunConfig& cfg, std::size_t threads) {
  cfg.validate();
  const auto objective = make_objective(cfg);
  const auto scheduler = make_scheduler(cfg);
  return run_once(cfg, *objective, *scheduler, threads);
}

RunRecord run_once(const RunConfig& cfg, const Objective& objective, const Scheduler& scheduler,
                   std::size_t threads) {
  cfg.validate();
  WorkerPool pool(threads);
  Simulation sim(cfg, objective, scheduler, &pool);
  RunRecord record;
  auto record_now = [&]() -> bool {
    const RunRow row = evaluate(objective, sim.model(), sim.round(), sim.uplink_scalars());
    if (!finite_row(row)) {
      record.mark_diverged(sim.round());
      return false;
    }
    record.append(row);
    return true;
  };
  if (!record_now()) return record;
  while (sim.round() < cfg.rounds) {
    try {
      sim.step();
    } catch (const NonFiniteError&) {
      record.mark_diverged(sim.round());
      return record;
    }
    if (sim.round() % cfg.eval_every == 0 || sim.round() == cfg.rounds)
      if (!record_now()) return record;
  }
  return record;
}

// ---------------------------------------------------------------------------

std::size_t ExperimentSpec::num_cells() const {
  std::size_t n = 1;
  for (const auto& [key, values] : grid) n *= values.size();
  return n;
}

std::vector<std::string> ExperimentSpec::cell_values(std::size_t cell) const {
  if (cell >= num_cells()) throw std::out_of_range("grid cell out of range");
  std::vector<std::string> out(grid.size());
  for (std::size_t k = grid.size(); k-- > 0;) {
    const auto& values = grid[k].second;
    out[k] = values[cell % values.size()];
    cell /= values.size();
  }
  return out;
}

RunConfig ExperimentSpec::cell_config(std::size_t cell, std::uint64_t seed) const {
  RunConfig cfg = base;
  const auto values = cell_values(cell);
  for (std::size_t k = 0; k < grid.size(); ++k) apply_config_entry(cfg, grid[k].first, values[k]);
  cfg.seed = seed;
  return cfg;
}

ExperimentSpec parse_experiment_spec(std::istream& in, std::string_view source_name) {
  ExperimentSpec spec;
  for (const auto& [key, value] : parse_key_values(in, source_name)) {
    if (key.starts_with("grid.")) {
      const std::string sub = key.substr(5);
      RunConfig probe;
      auto values = split_list(value);
      for (const auto& v : values) apply_config_entry(probe, sub, v);  // rejects bad keys and values early
      auto it = std::find_if(spec.grid.begin(), spec.grid.end(), [&](const auto& g) { return g.first == sub; });
      if (it != spec.grid.end()) throw ConfigError(std::string(source_name) + ": duplicate grid key '" + sub + "'");
      spec.grid.emplace_back(sub, std::move(values));
    } else if (key == "seeds") {
      spec.seeds.clear();
      for (const auto& v : split_list(value)) {
        std::uint64_t s = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
        if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("invalid seed '" + v + "'");
        spec.seeds.push_back(s);
      }
    } else if (key == "target_value") {
      double t = 0.0;
      const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), t);
      if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(t))
        throw ConfigError("invalid target_value '" + value + "'");
      spec.target_value = t;
    } else {
      apply_config_entry(spec.base, key, value);
    }
  }
  if (spec.seeds.empty()) throw ConfigError("seeds must not be empty");
  for (std::size_t c = 0; c < spec.num_cells(); ++c) spec.cell_config(c, spec.seeds.front()).validate();
  return spec;
}

ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open experiment file '" + path.string() + "'");
  return parse_experiment_spec(in, path.string());
}

// ---------------------------------------------------------------------------

std::string GridReport::to_csv() const {
  std::ostringstream os;
  os << "cell_id";
  for (const auto& k : keys) os << ',' << k;
  os << ",mean_final_loss,std_final_loss,mean_rounds_to_target\n";
  for (const auto& c : cells) {
    os << c.cell_id;
    for (const auto& v : c.values) os << ',' << v;
    os << ',' << format_number(c.mean_final_loss) << ',' << format_number(c.std_final_loss) << ',';
    if (c.mean_rounds_to_target) os << format_number(*c.mean_rounds_to_target);
    os << '\n';
  }
  return os.str();
}

GridReport run_grid(const ExperimentSpec& spec, std::size_t threads) {
  const std::size_t cells = spec.num_cells();
  const std::size_t seeds = spec.seeds.size();
  std::vector<RunRecord> records(cells * seeds);
  WorkerPool pool(threads);
  pool.parallel_for(records.size(), [&](std::size_t job) {
    const RunConfig cfg = spec.cell_config(job / seeds, spec.seeds[job % seeds]);
    records[job] = run_once(cfg, 1);
  });

  GridReport report;
  report.runs_executed = records.size();
  for (const auto& [key, values] : spec.grid) report.keys.push_back(key);
  for (std::size_t c = 0; c < cells; ++c) {
    GridCellResult res;
    res.cell_id = c;
    res.values = spec.cell_values(c);
    std::vector<double> finals;
    std::vector<double> reached;
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto& rec = records[c * seeds + s];
      if (rec.diverged() || rec.empty()) {
        ++res.diverged_runs;
        finals.push_back(std::numeric_limits<double>::infinity());
      } else {
        finals.push_back(rec.back().train_loss);
      }
      if (spec.target_value)
        if (auto r = rounds_to_target(rec, *spec.target_value)) reached.push_back(static_cast<double>(*r));
    }
    double mean = 0.0;
    for (double f : finals) mean += f;
    mean /= static_cast<double>(finals.size());
    double var = 0.0;
    if (finals.size() > 1 && std::isfinite(mean)) {
      for (double f : finals) var += (f - mean) * (f - mean);
      var /= static_cast<double>(finals.size() - 1);
    }
    res.mean_final_loss = mean;
    res.std_final_loss = std::isfinite(mean) ? std::sqrt(var) : std::numeric_limits<double>::infinity();
    if (spec.target_value && reached.size() == seeds) {
      double m = 0.0;
      for (double r : reached) m += r;
      res.mean_rounds_to_target = m / static_cast<double>(seeds);
    }
    report.cells.push_back(std::move(res));
  }
  for (std::size_t c = 1; c < cells; ++c)
    if (report.cells[c].mean_final_loss < report.cells[report.best_cell].mean_final_loss) report.best_cell = c;
  return report;
}

}  // namespace pfl
