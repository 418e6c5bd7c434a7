// Command-line driver: train, gridsearch, sweep-alpha, plot, selftest.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradnorm/checks.hpp"
#include "gradnorm/config_io.hpp"
#include "gradnorm/harness.hpp"
#include "gradnorm/svg_plot.hpp"
#include "gradnorm/trace_io.hpp"

namespace fs = std::filesystem;
using namespace gradnorm;

namespace {

constexpr int kExitDiverged = 1;
constexpr int kExitInvalid = 2;

struct RunOptions {
  std::string config_path;
  std::string preset = "toy2";
  std::string strategy;
  std::optional<double> alpha;
  std::vector<double> weights;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string out;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
};

void add_run_flags(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config_path, "Configuration file (JSON)");
  cmd->add_option("--preset", o.preset, "Preset when no config is given")
      ->check(CLI::IsMember({"toy2", "toy10"}));
  cmd->add_option("--strategy", o.strategy, "gradnorm|equal|uncertainty|static");
  cmd->add_option("--alpha", o.alpha, "GradNorm asymmetry");
  cmd->add_option("--weights", o.weights, "Static weights, comma separated")->delimiter(',');
  cmd->add_option("--seed", o.seed, "Master seed; derives every seed in the config");
  cmd->add_option("--steps", o.steps, "Training steps");
  cmd->add_option("--out", o.out, "Output directory (default: $GRADNORM_OUT_DIR or ./gradnorm_out)");
}

fs::path output_dir(const std::string& flag) {
  fs::path dir;
  if (!flag.empty()) {
    dir = flag;
  } else if (const char* env = std::getenv("GRADNORM_OUT_DIR"); env && *env) {
    dir = env;
  } else {
    dir = "gradnorm_out";
  }
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig resolve_config(const RunOptions& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    c = load_config(o.config_path);
    if (o.seed) apply_master_seed(c, *o.seed);
  } else {
    const std::uint64_t seed = o.seed.value_or(0);
    c = o.preset == "toy10" ? preset_toy10(seed) : preset_toy2(seed);
  }
  if (!o.strategy.empty()) {
    c.strategy.kind = parse_strategy(o.strategy);
    if (c.strategy.kind != StrategyKind::fixed) c.strategy.static_weights.clear();
  }
  if (o.alpha) {
    if (c.strategy.kind != StrategyKind::gradnorm) {
      throw ConfigError("strategy.alpha: only valid for the gradnorm strategy");
    }
    c.strategy.alpha = *o.alpha;
  }
  if (!o.weights.empty()) {
    if (c.strategy.kind != StrategyKind::fixed) {
      throw ConfigError("strategy.weights: only valid for the static strategy");
    }
    c.strategy.static_weights = o.weights;
  }
  if (o.steps) c.training.steps = *o.steps;
  try {
    validate(c);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

int cmd_train(const RunOptions& o) {
  const ExperimentConfig config = resolve_config(o);
  const fs::path dir = output_dir(o.out);
  save_config(config, dir / "config.json");

  const RunRecord record = train_run(config);
  {
    std::ofstream trace(dir / "trace.csv", std::ios::binary);
    write_trace_csv(record, trace);
  }
  nlohmann::json summary = run_summary(record);
  summary["trace"] = "trace.csv";
  summary["config"] = "config.json";
  write_json(dir / "summary.json", summary);

  for (const auto& w : record.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "strategy " << to_string(record.strategy) << ", " << record.rows.size()
            << " trace rows, " << format_real(record.total_seconds) << " s\n";
  if (record.diverged) {
    std::cerr << "error: run diverged: " << record.diagnostic << "\n";
    return kExitDiverged;
  }
  std::cout << "task-normalized test loss " << format_real(task_normalized_test_loss(record))
            << "\nwrote " << (dir / "trace.csv").string() << "\n";
  return 0;
}

int cmd_gridsearch(const RunOptions& o, std::size_t runs) {
  const ExperimentConfig config = resolve_config(o);
  const fs::path dir = output_dir(o.out);
  save_config(config, dir / "config.json");
  const std::uint64_t study_seed = derive_seed(o.seed.value_or(0), 201);
  const StudyResult study = grid_search_study(config, runs, study_seed, o.workers);
  {
    std::ofstream table(dir / "study.csv", std::ios::binary);
    write_study_csv(study, table);
  }
  write_json(dir / "study_summary.json", study_summary(study));
  std::cout << runs << " random runs at " << study.steps << " steps, spearman "
            << format_real(study.spearman) << "\nwrote " << (dir / "study.csv").string() << "\n";
  return 0;
}

int cmd_sweep(const RunOptions& o, const std::vector<double>& alphas) {
  ExperimentConfig config = resolve_config(o);
  const fs::path dir = output_dir(o.out);
  save_config(config, dir / "config.json");
  const auto rows = alpha_sweep(config, alphas, o.workers);
  {
    std::ofstream table(dir / "sweep.csv", std::ios::binary);
    write_sweep_csv(rows, table);
  }
  for (const auto& row : rows) {
    std::cout << "alpha " << format_real(row.alpha) << ": mean change "
              << format_real(row.mean_percent_change) << "%\n";
  }
  std::cout << "wrote " << (dir / "sweep.csv").string() << "\n";
  bool diverged = false;
  for (const auto& row : rows) diverged = diverged || row.diverged;
  return diverged ? kExitDiverged : 0;
}

int cmd_plot(const std::string& trace_path, const std::string& kind_name, std::string out) {
  const PlotKind kind = parse_plot_kind(kind_name);
  std::ifstream in(trace_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace " + trace_path);
  const TraceTable table = read_trace_csv(in);

  std::vector<double> sigmas;
  const fs::path summary_path = fs::path(trace_path).parent_path() / "summary.json";
  if (std::ifstream s(summary_path); s) {
    const auto doc = nlohmann::json::parse(s, nullptr, false);
    if (!doc.is_discarded() && doc.contains("sigmas")) sigmas = doc["sigmas"].get<std::vector<double>>();
  }
  const std::string svg = render_trace_svg(table, kind, sigmas);
  if (out.empty()) {
    fs::path p(trace_path);
    out = (p.parent_path() / (p.stem().string() + "_" + kind_name + ".svg")).string();
  }
  write_text(out, svg);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_selftest() {
  bool all = true;
  for (const auto& c : run_selftest()) {
    std::printf("%s  %-40s %s (%.2f s)\n", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                c.detail.c_str(), c.seconds);
    all = all && c.passed;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive multitask loss balancing experiments"};
  app.require_subcommand(1);

  RunOptions train_opts;
  auto* train = app.add_subcommand("train", "Train one run and write its trace");
  add_run_flags(train, train_opts);

  RunOptions grid_opts;
  std::size_t runs = 20;
  auto* grid = app.add_subcommand("gridsearch", "Random static weights vs a GradNorm reference");
  add_run_flags(grid, grid_opts);
  grid->add_option("--runs", runs, "Number of random static-weight runs")
      ->check(CLI::Range(std::size_t{2}, std::size_t{100000}));
  grid->add_option("--workers", grid_opts.workers, "Parallel runs");

  RunOptions sweep_opts;
  std::vector<double> alphas;
  auto* sweep = app.add_subcommand("sweep-alpha", "Percent change vs equal weights for each alpha");
  add_run_flags(sweep, sweep_opts);
  sweep->add_option("--alphas", alphas, "Comma separated alphas")->delimiter(',')->required();
  sweep->add_option("--workers", sweep_opts.workers, "Parallel runs");

  std::string trace_path, kind = "weights", plot_out;
  auto* plot = app.add_subcommand("plot", "Render a trace CSV as SVG");
  plot->add_option("trace", trace_path, "Trace CSV")->required();
  plot->add_option("--kind", kind, "weights|losses|normalized");
  plot->add_option("--out", plot_out, "SVG path (default: next to the trace)");

  auto* selftest = app.add_subcommand("selftest", "Gradient, invariant and fixed-point checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*train) return cmd_train(train_opts);
    if (*grid) return cmd_gridsearch(grid_opts, runs);
    if (*sweep) return cmd_sweep(sweep_opts, alphas);
    if (*plot) return cmd_plot(trace_path, kind, plot_out);
    if (*selftest) return cmd_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid config: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  }
  return 0;
}
