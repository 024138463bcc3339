#include "pfl/run_record.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace pfl {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void RunRecord::append(const RunRow& row) {
  if (!rows_.empty() && row.round <= rows_.back().round)
    throw std::logic_error("RunRecord rows must have strictly increasing rounds");
  rows_.push_back(row);
}

std::string RunRecord::to_csv() const {
  std::string out = "round,grad_norm,train_loss,test_metric,uplink_scalars\n";
  for (const auto& r : rows_) {
    out += std::to_string(r.round);
    out += ',';
    out += format_number(r.grad_norm);
    out += ',';
    out += format_number(r.train_loss);
    out += ',';
    if (r.test_metric) out += format_number(*r.test_metric);
    out += ',';
    out += std::to_string(r.uplink_scalars);
    out += '\n';
  }
  return out;
}

std::optional<std::size_t> rounds_to_target(const RunRecord& record, double target) {
  for (const auto& r : record.rows())
    if (r.train_loss <= target) return r.round;
  return std::nullopt;
}

}  // namespace pfl
