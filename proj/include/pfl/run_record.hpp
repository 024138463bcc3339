#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pfl {

struct RunRow {
  std::size_t round = 0;
  double grad_norm = 0.0;
  double train_loss = 0.0;
  std::optional<double> test_metric;
  std::uint64_t uplink_scalars = 0;
};

/// Metric time series of one seeded run.
class RunRecord {
 public:
  /// Rows must be appended with strictly increasing round index.
  void append(const RunRow& row);

  const std::vector<RunRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  const RunRow& back() const { return rows_.back(); }

  bool diverged() const { return diverged_round_.has_value(); }
  std::optional<std::size_t> diverged_round() const { return diverged_round_; }
  void mark_diverged(std::size_t round) { diverged_round_ = round; }

  /// CSV with header `round,grad_norm,train_loss,test_metric,uplink_scalars`.
  /// Numbers use shortest round-trip formatting, so equal records give equal bytes.
  std::string to_csv() const;

 private:
  std::vector<RunRow> rows_;
  std::optional<std::size_t> diverged_round_;
};

/// First recorded round whose train loss is at or below target.
std::optional<std::size_t> rounds_to_target(const RunRecord& record, double target);

/// Shortest representation that parses back to the same double.
std::string format_number(double v);

}  // namespace pfl
