#pragma once

// JSON configuration for experiments, optimization instances and synthetic
// specs. Unknown keys are rejected by name.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "streamweave/allocator.hpp"
#include "streamweave/error.hpp"
#include "streamweave/harness.hpp"

namespace streamweave::config {

using Json = nlohmann::json;

struct Experiment {
  harness::ExperimentConfig run;
  std::optional<std::filesystem::path> output;
};

namespace detail {

inline void check_keys(const Json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw Error(Errc::ConfigError, std::string(where.empty() ? "config" : where) + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) {
      throw Error(Errc::ConfigError,
                  "unknown config key '" + (where.empty() ? key : std::string(where) + "." + key) + "'");
    }
  }
}

template <class T>
T get(const Json& j, std::string_view where) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::ConfigError, "config key '" + std::string(where) + "' has the wrong type");
  }
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

/// Applies `a.b.c=value`. The value is parsed as JSON and falls back to a
/// plain string, so `methods=["SRS"]`, `threads=2` and `iid.mode=thinning`
/// all work.
inline void apply_override(Json& root, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(Errc::ConfigError, "override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Error(Errc::ConfigError, "override key '" + path + "' has an empty segment");
    if (!node->is_object()) throw Error(Errc::ConfigError, "override key '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

[[nodiscard]] inline harness::SyntheticSpec parse_synthetic(const Json& j, std::string_view where = "data.synthetic") {
  const std::string w(where);
  detail::check_keys(j, w, {"k", "means", "covariance", "samples_per_window", "windows", "ar"});
  harness::SyntheticSpec s;
  for (auto key : {"k", "means", "covariance"}) {
    if (!j.contains(key)) throw Error(Errc::ConfigError, "missing config key '" + w + "." + key + "'");
  }
  s.k = detail::get<std::size_t>(j["k"], w + ".k");
  s.means = detail::get<std::vector<double>>(j["means"], w + ".means");
  s.covariance = detail::get<std::vector<std::vector<double>>>(j["covariance"], w + ".covariance");
  if (j.contains("samples_per_window")) {
    s.samples_per_window = detail::get<std::size_t>(j["samples_per_window"], w + ".samples_per_window");
  }
  if (j.contains("windows")) s.windows = detail::get<std::size_t>(j["windows"], w + ".windows");
  if (j.contains("ar")) s.ar = detail::get<std::vector<double>>(j["ar"], w + ".ar");
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(Errc::InvalidSpec, w + ": " + e.what());
  }
  return s;
}

/// `base` resolves relative paths (normally the config file's directory).
[[nodiscard]] inline Experiment parse_experiment(const Json& root, const std::filesystem::path& base = {}) {
  using detail::get;
  detail::check_keys(root, "",
                     {"data", "window", "sweep", "methods", "iid", "epsilon", "dependence", "imputation", "cost", "seeds",
                      "output", "threads", "timing", "store_dir", "transport"});
  Experiment e;
  auto& c = e.run;

  if (!root.contains("data")) throw Error(Errc::ConfigError, "missing config key 'data'");
  const auto& data = root["data"];
  detail::check_keys(data, "data", {"source", "csv", "synthetic"});
  std::string source = data.contains("source") ? get<std::string>(data["source"], "data.source")
                       : data.contains("csv")  ? "csv"
                                               : "synthetic";
  if (source == "csv") {
    if (!data.contains("csv")) throw Error(Errc::ConfigError, "missing config key 'data.csv'");
    c.csv = detail::resolve(base, get<std::string>(data["csv"], "data.csv"));
  } else if (source == "synthetic") {
    if (!data.contains("synthetic")) throw Error(Errc::ConfigError, "missing config key 'data.synthetic'");
    c.synthetic = parse_synthetic(data["synthetic"]);
  } else {
    throw Error(Errc::ConfigError, "data.source must be csv or synthetic");
  }

  if (root.contains("window")) {
    detail::check_keys(root["window"], "window", {"size"});
    if (root["window"].contains("size")) c.window_size = get<std::size_t>(root["window"]["size"], "window.size");
  }
  if (c.synthetic) c.window_size = c.synthetic->samples_per_window;

  if (root.contains("sweep")) {
    const auto& s = root["sweep"];
    detail::check_keys(s, "sweep", {"rates", "epsilons"});
    if (s.contains("rates")) c.rates = get<std::vector<double>>(s["rates"], "sweep.rates");
    if (s.contains("epsilons")) c.epsilons = get<std::vector<double>>(s["epsilons"], "sweep.epsilons");
  }

  if (root.contains("methods")) {
    c.methods.clear();
    for (const auto& name : get<std::vector<std::string>>(root["methods"], "methods")) {
      const auto m = harness::parse_method(name);
      if (!m) throw Error(Errc::ConfigError, "unknown method '" + name + "'");
      c.methods.push_back(*m);
    }
  }

  if (root.contains("iid")) {
    const auto& j = root["iid"];
    detail::check_keys(j, "iid", {"mode", "thinning_factor", "m"});
    const std::string mode = j.contains("mode") ? get<std::string>(j["mode"], "iid.mode") : "assume_iid";
    if (mode == "assume_iid") c.iid = edge::IidConfig::assume_iid();
    else if (mode == "thinning") c.iid = edge::IidConfig::thinning(2);
    else if (mode == "m_dependence") c.iid = edge::IidConfig::m_dependence(1);
    else throw Error(Errc::ConfigError, "iid.mode must be assume_iid, thinning or m_dependence");
    if (j.contains("thinning_factor")) c.iid.thinning_factor = get<std::size_t>(j["thinning_factor"], "iid.thinning_factor");
    if (j.contains("m")) c.iid.m = get<std::size_t>(j["m"], "iid.m");
  }

  if (root.contains("epsilon")) {
    detail::check_keys(root["epsilon"], "epsilon", {"strategy"});
    if (root["epsilon"].contains("strategy")) {
      const auto s = get<std::string>(root["epsilon"]["strategy"], "epsilon.strategy");
      if (s == "std_err") c.epsilon_kind = alloc::EpsilonStrategy::Kind::StdErrMultiple;
      else if (s == "fraction") c.epsilon_kind = alloc::EpsilonStrategy::Kind::FractionOfVariance;
      else throw Error(Errc::ConfigError, "epsilon.strategy must be std_err or fraction");
    }
  }

  if (root.contains("dependence")) {
    const auto d = get<std::string>(root["dependence"], "dependence");
    if (d == "pearson") c.dependence = stats::DependenceMethod::Pearson;
    else if (d == "spearman") c.dependence = stats::DependenceMethod::Spearman;
    else throw Error(Errc::ConfigError, "dependence must be pearson or spearman");
  }
  if (root.contains("imputation")) c.imputation = get<bool>(root["imputation"], "imputation");

  if (root.contains("cost")) {
    const auto& j = root["cost"];
    detail::check_keys(j, "cost", {"per_sample", "model"});
    if (!j.contains("per_sample") || !j.contains("model")) {
      throw Error(Errc::ConfigError, "cost needs both per_sample and model");
    }
    alloc::CostModel cm;
    cm.per_sample_cost = get<std::vector<double>>(j["per_sample"], "cost.per_sample");
    cm.model_cost = get<std::vector<double>>(j["model"], "cost.model");
    if (cm.per_sample_cost.size() != cm.model_cost.size()) {
      throw Error(Errc::ConfigError, "cost.per_sample and cost.model differ in length");
    }
    for (std::size_t i = 0; i < cm.per_sample_cost.size(); ++i) {
      if (!(cm.per_sample_cost[i] > 0.0) || !(cm.model_cost[i] >= 0.0)) {
        throw Error(Errc::ConfigError, "costs must be positive");
      }
    }
    c.cost_model = std::move(cm);
  }

  if (root.contains("seeds")) c.seeds = get<std::vector<std::uint64_t>>(root["seeds"], "seeds");
  if (root.contains("output")) e.output = detail::resolve(base, get<std::string>(root["output"], "output"));
  if (root.contains("threads")) c.threads = get<unsigned>(root["threads"], "threads");
  if (root.contains("timing")) c.timing = get<bool>(root["timing"], "timing");
  if (root.contains("store_dir")) c.store_dir = detail::resolve(base, get<std::string>(root["store_dir"], "store_dir"));
  if (root.contains("transport")) {
    const auto t = get<std::string>(root["transport"], "transport");
    if (t == "memory") c.loopback = false;
    else if (t == "loopback") c.loopback = true;
    else throw Error(Errc::ConfigError, "transport must be memory or loopback");
  }

  if (c.synthetic && c.cost_model && c.cost_model->per_sample_cost.size() != c.synthetic->k) {
    throw Error(Errc::ConfigError, "cost vectors must have one entry per stream");
  }
  c.validate();
  return e;
}

[[nodiscard]] inline Experiment load_experiment(const std::filesystem::path& path,
                                                const std::vector<std::string>& overrides = {}) {
  Json root = detail::read_json(path);
  for (const auto& o : overrides) apply_override(root, o);
  return parse_experiment(root, path.parent_path());
}

/// Optimization instance. `weights` defaults to 1/mean^2, `autocovariance_penalty` to zeros,
/// and `predictors` entries may be null for streams without a predictor.
[[nodiscard]] inline alloc::ProblemInstance parse_instance(const Json& j) {
  using detail::get;
  detail::check_keys(j, "", {"arrivals", "variances", "means", "weights", "explained_variance", "predictors", "epsilons",
                             "cost", "budget", "autocovariance_penalty"});
  for (auto key : {"arrivals", "variances", "means", "explained_variance", "predictors", "epsilons", "budget"}) {
    if (!j.contains(key)) throw Error(Errc::ConfigError, std::string("missing instance key '") + key + "'");
  }
  alloc::ProblemInstance inst;
  inst.arrivals = get<std::vector<std::size_t>>(j["arrivals"], "arrivals");
  inst.k = inst.arrivals.size();
  inst.variances = get<std::vector<double>>(j["variances"], "variances");
  inst.means = get<std::vector<double>>(j["means"], "means");
  inst.weights = j.contains("weights") ? get<std::vector<double>>(j["weights"], "weights")
                                       : alloc::default_weights(inst.means);
  inst.explained_variance = get<std::vector<double>>(j["explained_variance"], "explained_variance");
  if (!j["predictors"].is_array()) throw Error(Errc::ConfigError, "config key 'predictors' has the wrong type");
  for (const auto& p : j["predictors"]) {
    inst.predictors.push_back(p.is_null() ? alloc::kNoPredictor : get<std::size_t>(p, "predictors"));
  }
  inst.epsilons = get<std::vector<double>>(j["epsilons"], "epsilons");
  inst.budget = get<double>(j["budget"], "budget");
  inst.autocovariance_penalty = j.contains("autocovariance_penalty")
                                    ? get<std::vector<double>>(j["autocovariance_penalty"], "autocovariance_penalty")
                                    : std::vector<double>(inst.k, 0.0);
  if (j.contains("cost")) {
    detail::check_keys(j["cost"], "cost", {"per_sample", "model"});
    inst.cost_model.per_sample_cost = get<std::vector<double>>(j["cost"].value("per_sample", Json::array()), "cost.per_sample");
    inst.cost_model.model_cost = get<std::vector<double>>(j["cost"].value("model", Json::array()), "cost.model");
  } else {
    inst.cost_model.per_sample_cost.assign(inst.k, 1.0);
    inst.cost_model.model_cost.assign(inst.k, 0.0);
  }
  try {
    inst.validate();
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, e.what());
  }
  return inst;
}

[[nodiscard]] inline alloc::ProblemInstance load_instance(const std::filesystem::path& path,
                                                          const std::vector<std::string>& overrides = {}) {
  Json root = detail::read_json(path);
  for (const auto& o : overrides) apply_override(root, o);
  return parse_instance(root);
}

/// Accepts a bare synthetic spec or an experiment config carrying one.
[[nodiscard]] inline harness::SyntheticSpec load_synthetic(const std::filesystem::path& path,
                                                           const std::vector<std::string>& overrides = {}) {
  Json root = detail::read_json(path);
  for (const auto& o : overrides) apply_override(root, o);
  if (root.is_object() && root.contains("data")) {
    const auto& d = root["data"];
    if (!d.is_object() || !d.contains("synthetic")) throw Error(Errc::ConfigError, "missing config key 'data.synthetic'");
    return parse_synthetic(d["synthetic"]);
  }
  return parse_synthetic(root, "spec");
}

}  // namespace streamweave::config
