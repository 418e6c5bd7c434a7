#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gradnorm/config_io.hpp"
#include "gradnorm/svg_plot.hpp"
#include "gradnorm/trace_io.hpp"

using namespace gradnorm;
using nlohmann::json;

namespace {

RunRecord tiny_run(StrategyKind kind) {
  ExperimentConfig c = preset_toy2(5);
  c.taskset.input_dim = 12;
  c.taskset.output_dim = 6;
  c.model.hidden = 8;
  c.strategy.kind = kind;
  c.training.steps = 40;
  c.training.eval_every = 10;
  c.training.batch_size = 8;
  c.training.test_batch_size = 16;
  return train_run(c);
}

std::string expect_config_error(const json& doc) {
  try {
    config_from_json(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::size_t count(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("config round trip preserves every field") {
  ExperimentConfig c = preset_toy10(42);
  c.taskset.convention = SpreadConvention::variance;
  c.model.shared_layer = 2;
  c.optimizer.persistent_weight_state = false;
  c.training.steps = 77;
  const ExperimentConfig back = config_from_json(json::parse(config_to_json(c).dump()));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(back.taskset.seed == c.taskset.seed);
  CHECK(back.training.test_seed == c.training.test_seed);
  CHECK(back.taskset.convention == SpreadConvention::variance);

  ExperimentConfig s = preset_toy2(1);
  s.strategy.kind = StrategyKind::fixed;
  s.strategy.static_weights = {0.25, 1.75};
  const json doc = config_to_json(s);
  CHECK_FALSE(doc["strategy"].contains("alpha"));
  CHECK(config_from_json(doc).strategy.static_weights == s.strategy.static_weights);
}

TEST_CASE("missing keys keep defaults") {
  const ExperimentConfig c = config_from_json(json::parse(R"({"training": {"steps": 10}})"));
  CHECK(c.training.steps == 10);
  CHECK(c.training.batch_size == 100);
  CHECK(c.strategy.kind == StrategyKind::gradnorm);
}

TEST_CASE("config errors name the field") {
  CHECK(expect_config_error(json::parse(R"({"trainig": {}})")) == "config.trainig: unknown key");
  CHECK(expect_config_error(json::parse(R"({"training": {"stepz": 1}})")) ==
        "config.training.stepz: unknown key");
  CHECK(expect_config_error(json::parse(R"({"training": {"steps": -4}})"))
            .starts_with("config.training.steps:"));
  CHECK(expect_config_error(json::parse(R"({"strategy": {"kind": "magic"}})"))
            .starts_with("config.strategy.kind:"));
  CHECK(expect_config_error(json::parse(R"({"strategy": {"kind": "equal", "alpha": 0.5}})"))
            .starts_with("config.strategy.alpha:"));
  CHECK(expect_config_error(json::parse(R"({"strategy": {"kind": "static"}})"))
            .starts_with("config.strategy.weights:"));
  CHECK(expect_config_error(json::parse(R"({"taskset": {"sigmas": [1, 2, 3]}})"))
            .starts_with("config.taskset.sigmas:"));
  CHECK(expect_config_error(json::parse(R"({"format_version": 99})"))
            .starts_with("config.format_version:"));
  CHECK(expect_config_error(json::parse(R"({"model": {"hidden": "wide"}})"))
            .starts_with("config.model.hidden:"));
  CHECK(expect_config_error(json::parse("[1, 2]")).starts_with("config:"));
}

TEST_CASE("config files") {
  const auto dir = std::filesystem::temp_directory_path() / "gradnorm_test_config";
  std::filesystem::create_directories(dir);
  const auto path = dir / "c.json";
  save_config(preset_toy2(8), path);
  CHECK(config_to_json(load_config(path)) == config_to_json(preset_toy2(8)));
  {
    std::ofstream bad(dir / "bad.json");
    bad << "{ not json";
  }
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("trace CSV layout") {
  CHECK(trace_header(2) == std::vector<std::string>{
                               "step", "w_1", "w_2", "train_loss_1", "train_loss_2",
                               "test_loss_1", "test_loss_2", "ratio_1", "ratio_2", "rate_1",
                               "rate_2", "gnorm_1", "gnorm_2", "gbar", "lgrad"});
  CHECK(format_real(1.0 / 3.0) == "0.333333333");
  CHECK(format_real(123456789012.0) == "1.23456789e+11");

  const RunRecord r = tiny_run(StrategyKind::gradnorm);
  std::ostringstream os;
  write_trace_csv(r, os);
  const std::string text = os.str();
  CHECK(count(text, "\n") == r.rows.size() + 1);

  std::istringstream in(text);
  const TraceTable t = read_trace_csv(in);
  CHECK(t.num_tasks == 2);
  REQUIRE(t.rows.size() == r.rows.size());
  CHECK(t.rows[2].step == r.rows[2].step);
  CHECK(t.rows[2].weights[1] == doctest::Approx(r.rows[2].weights[1]).epsilon(1e-8));

  RunRecord empty;
  empty.num_tasks = 3;
  std::ostringstream header_only;
  write_trace_csv(empty, header_only);
  CHECK(header_only.str().starts_with("step,w_1,w_2,w_3,"));
}

TEST_CASE("malformed traces are rejected") {
  std::istringstream empty("");
  CHECK_THROWS(read_trace_csv(empty));
  std::istringstream wrong_header("a,b,c\n");
  CHECK_THROWS(read_trace_csv(wrong_header));
  std::ostringstream os;
  write_trace_csv(tiny_run(StrategyKind::equal), os);
  std::istringstream short_row(os.str() + "5,1\n");
  CHECK_THROWS(read_trace_csv(short_row));
}

TEST_CASE("study and sweep tables") {
  StudyResult s;
  s.steps = 10;
  s.reference_weights = {1.5, 0.5};
  s.reference_loss = 1.0;
  s.spearman = 0.7;
  s.rows.push_back({0, false, {1.0, 1.0}, 1.2, 0.7071, 20.0, false});
  s.rows.push_back({1, true, {1.5, 0.5}, 1.0, 0.0, 0.0, false});
  std::ostringstream os;
  write_study_csv(s, os);
  CHECK(os.str() ==
        "index,kind,w_1,w_2,normalized_loss,distance,delta_percent,diverged\n"
        "0,random,1,1,1.2,0.7071,20,0\n"
        "1,gradnorm,1.5,0.5,1,0,0,0\n");
  const json summary = study_summary(s);
  CHECK(summary["spearman"] == 0.7);
  CHECK(summary["random_runs"] == 1);

  std::ostringstream sw;
  write_sweep_csv({{0.12, {-10.0, 5.0}, -2.5, 2.5, false}}, sw);
  CHECK(sw.str() == "alpha,change_1,change_2,mean_change,gain,diverged\n0.12,-10,5,-2.5,2.5,0\n");
}

TEST_CASE("run summary") {
  const RunRecord r = tiny_run(StrategyKind::uncertainty);
  const json s = run_summary(r);
  CHECK(s["strategy"] == "uncertainty");
  CHECK(s["sigmas"] == json::array({1.0, 100.0}));
  CHECK(s["final_step"] == 40);
  CHECK(s.contains("timing_seconds"));
}

TEST_CASE("SVG plots") {
  const RunRecord equal = tiny_run(StrategyKind::equal);
  std::ostringstream os;
  write_trace_csv(equal, os);
  std::istringstream in(os.str());
  const TraceTable table = read_trace_csv(in);

  SUBCASE("equal weights draw two horizontal lines at 1") {
    const std::string svg = render_trace_svg(table, PlotKind::weights, std::vector<double>{1, 100});
    CHECK(svg.starts_with("<svg"));
    CHECK(count(svg, "<polyline") == 2);
    CHECK(svg.find("task 2 (sigma=100)") != std::string::npos);
    // Every point of both lines sits at the same height.
    const auto first = svg.find("points=\"");
    const auto end = svg.find('"', first + 8);
    std::istringstream pts(svg.substr(first + 8, end - first - 8));
    std::string pt;
    std::string y0;
    while (pts >> pt) {
      const std::string y = pt.substr(pt.find(',') + 1);
      if (y0.empty()) y0 = y;
      CHECK(y == y0);
    }
  }
  SUBCASE("deterministic bytes") {
    CHECK(render_trace_svg(table, PlotKind::losses) == render_trace_svg(table, PlotKind::losses));
    CHECK(render_trace_svg(table, PlotKind::normalized) !=
          render_trace_svg(table, PlotKind::losses));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(render_trace_svg(TraceTable{2, {}}, PlotKind::weights), std::invalid_argument);
    CHECK_THROWS_AS(parse_plot_kind("bars"), std::invalid_argument);
    CHECK(parse_plot_kind("normalized") == PlotKind::normalized);
  }
}
