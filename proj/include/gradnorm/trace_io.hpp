#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradnorm/harness.hpp"

namespace gradnorm {

/// Formats a real with 9 significant digits.
std::string format_real(double value);

/// Column names: step, w_1..w_T, train_loss_1..T, test_loss_1..T, ratio_1..T,
/// rate_1..T, gnorm_1..T, gbar, lgrad.
std::vector<std::string> trace_header(std::size_t num_tasks);

void write_trace_csv(const RunRecord& record, std::ostream& out);

struct TraceTable {
  std::size_t num_tasks = 0;
  std::vector<TraceRow> rows;
};

/// Parses a trace written by write_trace_csv. Throws std::runtime_error on malformed input.
TraceTable read_trace_csv(std::istream& in);

nlohmann::json run_summary(const RunRecord& record);

void write_study_csv(const StudyResult& study, std::ostream& out);
nlohmann::json study_summary(const StudyResult& study);

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

}  // namespace gradnorm
