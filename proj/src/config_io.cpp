#include "gradnorm/config_io.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace gradnorm {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  const std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!known.contains(key)) throw ConfigError(path + "." + key + ": unknown key");
  }
}

template <typename T>
void read(const json& obj, const std::string& path, const char* key, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key + ": " + e.what());
  }
}

void read_unsigned(const json& obj, const std::string& path, const char* key, std::size_t& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number_unsigned()) {
    throw ConfigError(path + "." + key + ": expected a nonnegative integer");
  }
  out = it->get<std::size_t>();
}

void read_seed(const json& obj, const std::string& path, const char* key, std::uint64_t& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number_unsigned()) throw ConfigError(path + "." + key + ": expected a seed");
  out = it->get<std::uint64_t>();
}

std::string convention_name(SpreadConvention c) {
  return c == SpreadConvention::variance ? "variance" : "stddev";
}

}  // namespace

StrategyKind parse_strategy(const std::string& name) {
  if (name == "gradnorm") return StrategyKind::gradnorm;
  if (name == "equal") return StrategyKind::equal;
  if (name == "uncertainty") return StrategyKind::uncertainty;
  if (name == "static") return StrategyKind::fixed;
  throw ConfigError("unknown strategy '" + name + "' (expected gradnorm|equal|uncertainty|static)");
}

json config_to_json(const ExperimentConfig& c) {
  json strategy = {{"kind", std::string(to_string(c.strategy.kind))}};
  if (c.strategy.kind == StrategyKind::gradnorm) strategy["alpha"] = c.strategy.alpha;
  if (c.strategy.kind == StrategyKind::fixed) strategy["weights"] = c.strategy.static_weights;

  json model = {{"hidden", c.model.hidden},
                {"depth", c.model.depth},
                {"init_seed", c.model.init_seed},
                {"shared_layer", c.model.shared_layer.value_or(c.model.depth - 1)}};

  return {
      {"format_version", kFormatVersion},
      {"taskset",
       {{"seed", c.taskset.seed},
        {"num_tasks", c.taskset.num_tasks},
        {"sigmas", c.taskset.sigmas},
        {"sigma_sampling_std", c.taskset.sigma_sampling_std},
        {"input_dim", c.taskset.input_dim},
        {"output_dim", c.taskset.output_dim},
        {"base_spread", c.taskset.base_spread},
        {"epsilon_spread", c.taskset.epsilon_spread},
        {"spread_convention", convention_name(c.taskset.convention)}}},
      {"model", model},
      {"strategy", strategy},
      {"optimizer",
       {{"network_lr", c.optimizer.network_lr},
        {"weight_lr", c.optimizer.weight_lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon},
        {"persistent_weight_state", c.optimizer.persistent_weight_state}}},
      {"training",
       {{"steps", c.training.steps},
        {"batch_size", c.training.batch_size},
        {"eval_every", c.training.eval_every},
        {"data_seed", c.training.data_seed},
        {"test_seed", c.training.test_seed},
        {"test_batch_size", c.training.test_batch_size},
        {"weight_floor", c.training.weight_floor}}},
  };
}

ExperimentConfig config_from_json(const json& doc) {
  check_keys(doc, "config",
             {"format_version", "taskset", "model", "strategy", "optimizer", "training"});
  if (doc.contains("format_version") && doc["format_version"] != kFormatVersion) {
    throw ConfigError("config.format_version: unsupported version " + doc["format_version"].dump());
  }
  ExperimentConfig c;

  if (doc.contains("taskset")) {
    const auto& t = doc["taskset"];
    const std::string p = "config.taskset";
    check_keys(t, p,
               {"seed", "num_tasks", "sigmas", "sigma_sampling_std", "input_dim", "output_dim",
                "base_spread", "epsilon_spread", "spread_convention"});
    read_seed(t, p, "seed", c.taskset.seed);
    read_unsigned(t, p, "num_tasks", c.taskset.num_tasks);
    read(t, p, "sigmas", c.taskset.sigmas);
    read(t, p, "sigma_sampling_std", c.taskset.sigma_sampling_std);
    read_unsigned(t, p, "input_dim", c.taskset.input_dim);
    read_unsigned(t, p, "output_dim", c.taskset.output_dim);
    read(t, p, "base_spread", c.taskset.base_spread);
    read(t, p, "epsilon_spread", c.taskset.epsilon_spread);
    std::string convention = convention_name(c.taskset.convention);
    read(t, p, "spread_convention", convention);
    if (convention == "stddev") {
      c.taskset.convention = SpreadConvention::stddev;
    } else if (convention == "variance") {
      c.taskset.convention = SpreadConvention::variance;
    } else {
      throw ConfigError(p + ".spread_convention: expected stddev|variance");
    }
  }

  if (doc.contains("model")) {
    const auto& m = doc["model"];
    const std::string p = "config.model";
    check_keys(m, p, {"hidden", "depth", "init_seed", "shared_layer"});
    read_unsigned(m, p, "hidden", c.model.hidden);
    read_unsigned(m, p, "depth", c.model.depth);
    read_seed(m, p, "init_seed", c.model.init_seed);
    if (m.contains("shared_layer")) {
      std::size_t layer = 0;
      read_unsigned(m, p, "shared_layer", layer);
      c.model.shared_layer = layer;
    }
  }

  if (doc.contains("strategy")) {
    const auto& s = doc["strategy"];
    const std::string p = "config.strategy";
    check_keys(s, p, {"kind", "alpha", "weights"});
    std::string kind = "gradnorm";
    read(s, p, "kind", kind);
    try {
      c.strategy.kind = parse_strategy(kind);
    } catch (const ConfigError& e) {
      throw ConfigError(p + ".kind: " + e.what());
    }
    if (s.contains("alpha") && c.strategy.kind != StrategyKind::gradnorm) {
      throw ConfigError(p + ".alpha: only valid for the gradnorm strategy");
    }
    if (s.contains("weights") && c.strategy.kind != StrategyKind::fixed) {
      throw ConfigError(p + ".weights: only valid for the static strategy");
    }
    if (c.strategy.kind == StrategyKind::fixed && !s.contains("weights")) {
      throw ConfigError(p + ".weights: required for the static strategy");
    }
    read(s, p, "alpha", c.strategy.alpha);
    read(s, p, "weights", c.strategy.static_weights);
  }

  if (doc.contains("optimizer")) {
    const auto& o = doc["optimizer"];
    const std::string p = "config.optimizer";
    check_keys(o, p,
               {"network_lr", "weight_lr", "beta1", "beta2", "epsilon", "persistent_weight_state"});
    read(o, p, "network_lr", c.optimizer.network_lr);
    read(o, p, "weight_lr", c.optimizer.weight_lr);
    read(o, p, "beta1", c.optimizer.beta1);
    read(o, p, "beta2", c.optimizer.beta2);
    read(o, p, "epsilon", c.optimizer.epsilon);
    read(o, p, "persistent_weight_state", c.optimizer.persistent_weight_state);
  }

  if (doc.contains("training")) {
    const auto& t = doc["training"];
    const std::string p = "config.training";
    check_keys(t, p,
               {"steps", "batch_size", "eval_every", "data_seed", "test_seed", "test_batch_size",
                "weight_floor"});
    read_unsigned(t, p, "steps", c.training.steps);
    read_unsigned(t, p, "batch_size", c.training.batch_size);
    read_unsigned(t, p, "eval_every", c.training.eval_every);
    read_seed(t, p, "data_seed", c.training.data_seed);
    read_seed(t, p, "test_seed", c.training.test_seed);
    read_unsigned(t, p, "test_batch_size", c.training.test_batch_size);
    read(t, p, "weight_floor", c.training.weight_floor);
  }

  try {
    validate(c);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << config_to_json(config).dump(2) << "\n";
}

}  // namespace gradnorm
