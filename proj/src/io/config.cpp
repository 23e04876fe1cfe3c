#include "svf/io/config.hpp"

#include <set>

#include "svf/io/atomic_file.hpp"

namespace svf::io {

using nlohmann::json;

namespace {

// Reads known keys from an object and rejects anything left over.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown field '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json load_json(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace

void check_schema_version(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw ConfigError(what + ": missing schema_version");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
    throw ConfigError(what + ": unsupported schema_version " + j["schema_version"].dump());
}

json to_json(const ModelConfig& c) {
  return {{"n_features", c.n_features},
          {"token_dim", c.token_dim},
          {"head_dim", c.head_dim},
          {"context_len", c.context_len},
          {"feature_prob", c.feature_prob},
          {"lambda", c.lambda},
          {"seed", c.seed},
          {"recon_reduction", c.recon_reduction == ReconReduction::mean ? "mean" : "sum"}};
}

json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"base_lr", c.base_lr},
          {"batch_keys", c.batch_keys},
          {"checkpoint_every", c.checkpoint_every},
          {"warmup_steps", c.warmup_steps},
          {"adamw",
           {{"beta1", c.adamw.beta1},
            {"beta2", c.adamw.beta2},
            {"eps", c.adamw.eps},
            {"weight_decay", c.adamw.weight_decay}}},
          {"eval_seed", c.eval_seed}};
}

json to_json(const TargetSpec& t) {
  json arr = json::array();
  for (const auto& e : t.entries())
    arr.push_back({{"query", e.query_feature}, {"key", e.key_feature}, {"logit", e.logit}});
  return arr;
}

json to_json(const RunConfig& c) {
  return {{"schema_version", kSchemaVersion},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"target", to_json(c.target)}};
}

json to_json(const SweepSpec& s) {
  return {{"schema_version", kSchemaVersion},
          {"base", {{"model", to_json(s.model)}, {"train", to_json(s.train)}, {"target", to_json(s.target)}}},
          {"axis", axis_name(s.axis)},
          {"values", s.values},
          {"replicates", s.replicates},
          {"escalate_steps", s.escalate_steps}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  Fields f(j, "model");
  f.get("n_features", c.n_features);
  f.get("token_dim", c.token_dim);
  f.get("head_dim", c.head_dim);
  f.get("context_len", c.context_len);
  f.get("feature_prob", c.feature_prob);
  f.get("lambda", c.lambda);
  f.get("seed", c.seed);
  std::string red = "sum";
  f.get("recon_reduction", red);
  if (red == "mean")
    c.recon_reduction = ReconReduction::mean;
  else if (red == "sum")
    c.recon_reduction = ReconReduction::sum;
  else
    throw ConfigError("model.recon_reduction: expected \"mean\" or \"sum\"");
  f.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Fields f(j, "train");
  f.get("steps", c.steps);
  f.get("base_lr", c.base_lr);
  f.get("batch_keys", c.batch_keys);
  f.get("checkpoint_every", c.checkpoint_every);
  f.get("warmup_steps", c.warmup_steps);
  f.get("eval_seed", c.eval_seed);
  if (const json* a = f.sub("adamw")) {
    Fields g(*a, "train.adamw");
    g.get("beta1", c.adamw.beta1);
    g.get("beta2", c.adamw.beta2);
    g.get("eps", c.adamw.eps);
    g.get("weight_decay", c.adamw.weight_decay);
    g.finish();
  }
  f.finish();
  return c;
}

TargetSpec target_from_json(const json& j) {
  if (j.is_object()) {
    Fields f(j, "target");
    std::string preset;
    f.get("preset", preset);
    f.finish();
    if (preset == "four_pairs") return TargetSpec::default_four_pairs();
    throw ConfigError("target.preset: unknown preset '" + preset + "'");
  }
  if (!j.is_array()) throw ConfigError("target: expected an array or a preset object");
  std::vector<TargetEntry> entries;
  for (const auto& e : j) {
    TargetEntry t;
    Fields f(e, "target[]");
    f.get("query", t.query_feature);
    f.get("key", t.key_feature);
    f.get("logit", t.logit);
    f.finish();
    entries.push_back(t);
  }
  try {
    return TargetSpec(std::move(entries));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("target: ") + e.what());
  }
}

namespace {

RunConfig run_config_body(const json& j, const std::string& where, bool versioned) {
  RunConfig c;
  Fields f(j, where);
  if (versioned) f.sub("schema_version");
  if (const json* m = f.sub("model")) c.model = model_config_from_json(*m);
  if (const json* t = f.sub("train")) c.train = train_config_from_json(*t);
  if (const json* t = f.sub("target")) c.target = target_from_json(*t);
  f.finish();
  try {
    c.target.validate(c.model.n_features);
    c.train.validate(c.model);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  check_schema_version(j, "run config");
  return run_config_body(j, "run config", true);
}

SweepSpec sweep_spec_from_json(const json& j) {
  check_schema_version(j, "sweep spec");
  SweepSpec s;
  Fields f(j, "sweep spec");
  f.sub("schema_version");
  if (const json* b = f.sub("base")) {
    RunConfig rc;
    Fields g(*b, "sweep spec.base");
    if (const json* m = g.sub("model")) rc.model = model_config_from_json(*m);
    if (const json* t = g.sub("train")) rc.train = train_config_from_json(*t);
    rc.target = TargetSpec::default_four_pairs();
    if (const json* t = g.sub("target")) rc.target = target_from_json(*t);
    g.finish();
    s.model = rc.model;
    s.train = rc.train;
    s.target = rc.target;
  }
  std::string axis;
  f.get("axis", axis);
  try {
    s.axis = parse_axis(axis);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  f.get("values", s.values);
  f.get("replicates", s.replicates);
  f.get("escalate_steps", s.escalate_steps);
  f.finish();
  if (s.values.empty()) s.values = SweepSpec::default_values(s.axis);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(load_json(path));
}

SweepSpec load_sweep_spec(const std::filesystem::path& path) {
  return sweep_spec_from_json(load_json(path));
}

}  // namespace svf::io
