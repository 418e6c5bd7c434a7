#include "gradnorm/trace_io.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "gradnorm/config_io.hpp"

namespace gradnorm {

namespace {

constexpr const char* kTaskColumns[] = {"w", "train_loss", "test_loss", "ratio", "rate", "gnorm"};

void write_joined(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) out << ',';
    out << cells[i];
  }
  out << '\n';
}

void append_reals(std::vector<std::string>& cells, const std::vector<double>& values) {
  for (double v : values) cells.push_back(format_real(v));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& cell, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("trace line " + std::to_string(line_no) + ": bad number '" + cell +
                             "'");
  }
}

}  // namespace

std::string format_real(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

std::vector<std::string> trace_header(std::size_t num_tasks) {
  std::vector<std::string> h{"step"};
  for (const char* name : kTaskColumns) {
    for (std::size_t t = 1; t <= num_tasks; ++t) h.push_back(std::string(name) + "_" + std::to_string(t));
  }
  h.push_back("gbar");
  h.push_back("lgrad");
  return h;
}

void write_trace_csv(const RunRecord& record, std::ostream& out) {
  write_joined(out, trace_header(record.num_tasks));
  for (const auto& row : record.rows) {
    std::vector<std::string> cells{std::to_string(row.step)};
    append_reals(cells, row.weights);
    append_reals(cells, row.train_losses);
    append_reals(cells, row.test_losses);
    append_reals(cells, row.loss_ratios);
    append_reals(cells, row.rates);
    append_reals(cells, row.grad_norms);
    cells.push_back(format_real(row.mean_grad_norm));
    cells.push_back(format_real(row.lgrad));
    write_joined(out, cells);
  }
}

TraceTable read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trace is empty: missing header");
  const auto header = split(line);
  if (header.size() < 9 || (header.size() - 3) % 6 != 0) {
    throw std::runtime_error("trace header has an unexpected column count");
  }
  TraceTable table;
  table.num_tasks = (header.size() - 3) / 6;
  if (header != trace_header(table.num_tasks)) {
    throw std::runtime_error("trace header does not match the expected columns");
  }
  const std::size_t n = table.num_tasks;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("trace line " + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " columns");
    }
    TraceRow row;
    row.step = static_cast<std::size_t>(parse_real(cells[0], line_no));
    auto block = [&](std::size_t index) {
      std::vector<double> out(n);
      for (std::size_t t = 0; t < n; ++t) out[t] = parse_real(cells[1 + index * n + t], line_no);
      return out;
    };
    row.weights = block(0);
    row.train_losses = block(1);
    row.test_losses = block(2);
    row.loss_ratios = block(3);
    row.rates = block(4);
    row.grad_norms = block(5);
    row.mean_grad_norm = parse_real(cells[1 + 6 * n], line_no);
    row.lgrad = parse_real(cells[2 + 6 * n], line_no);
    table.rows.push_back(std::move(row));
  }
  return table;
}

nlohmann::json run_summary(const RunRecord& record) {
  nlohmann::json s = {
      {"format_version", kFormatVersion},
      {"strategy", std::string(to_string(record.strategy))},
      {"num_tasks", record.num_tasks},
      {"sigmas", record.sigmas},
      {"diverged", record.diverged},
      {"diagnostic", record.diagnostic},
      {"warnings", record.warnings},
      {"initial_train_losses", record.initial_train_losses},
      {"initial_test_losses", record.initial_test_losses},
      {"rows", record.rows.size()},
      {"timing_seconds",
       {{"total", record.total_seconds}, {"balancer", record.balancer_seconds}}},
  };
  if (!record.rows.empty()) {
    s["final_step"] = record.rows.back().step;
    s["final_test_loss_ratios"] = final_test_loss_ratios(record);
    s["task_normalized_test_loss"] = task_normalized_test_loss(record);
    s["time_averaged_weights"] = time_averaged_weights(record);
    s["static_weights"] = extract_static_weights(record);
  }
  return s;
}

void write_study_csv(const StudyResult& study, std::ostream& out) {
  const std::size_t n = study.reference_weights.size();
  std::vector<std::string> header{"index", "kind"};
  for (std::size_t t = 1; t <= n; ++t) header.push_back("w_" + std::to_string(t));
  for (const char* c : {"normalized_loss", "distance", "delta_percent", "diverged"}) {
    header.emplace_back(c);
  }
  write_joined(out, header);
  for (const auto& row : study.rows) {
    std::vector<std::string> cells{std::to_string(row.index), row.reference ? "gradnorm" : "random"};
    append_reals(cells, row.weights);
    cells.push_back(format_real(row.normalized_loss));
    cells.push_back(format_real(row.distance));
    cells.push_back(format_real(row.delta_percent));
    cells.push_back(row.diverged ? "1" : "0");
    write_joined(out, cells);
  }
}

nlohmann::json study_summary(const StudyResult& study) {
  double best_delta = 0.0;
  std::size_t random_runs = 0;
  for (const auto& row : study.rows) {
    if (row.reference) continue;
    ++random_runs;
    if (random_runs == 1 || row.delta_percent < best_delta) best_delta = row.delta_percent;
  }
  return {{"format_version", kFormatVersion},
          {"steps", study.steps},
          {"random_runs", random_runs},
          {"reference_weights", study.reference_weights},
          {"reference_loss", study.reference_loss},
          {"spearman", study.spearman},
          {"best_random_delta_percent", best_delta}};
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  const std::size_t n = rows.empty() ? 0 : rows.front().percent_change.size();
  std::vector<std::string> header{"alpha"};
  for (std::size_t t = 1; t <= n; ++t) header.push_back("change_" + std::to_string(t));
  for (const char* c : {"mean_change", "gain", "diverged"}) header.emplace_back(c);
  write_joined(out, header);
  for (const auto& row : rows) {
    std::vector<std::string> cells{format_real(row.alpha)};
    append_reals(cells, row.percent_change);
    cells.push_back(format_real(row.mean_percent_change));
    cells.push_back(format_real(row.gain));
    cells.push_back(row.diverged ? "1" : "0");
    write_joined(out, cells);
  }
}

}  // namespace gradnorm
