#include "tgrl/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "tgrl/error.hpp"

namespace tgrl {

using nlohmann::json;

namespace {

// Reads one JSON object section, tracking consumed keys so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string prefix) : prefix_(std::move(prefix)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ConfigError("must be an object", prefix_.empty() ? "<root>" : prefix_);
    obj_ = j;
  }

  std::string key(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

  const json* find(const std::string& name) {
    seen_.insert(name);
    auto it = obj_.find(name);
    return it == obj_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(const std::string& name, T& out) {
    if (const json* v = find(name)) out = convert<T>(*v, name);
  }

  template <typename T>
  void get_optional(const std::string& name, std::optional<T>& out) {
    if (const json* v = find(name)) {
      if (v->is_null()) {
        out.reset();
      } else {
        out = convert<T>(*v, name);
      }
    }
  }

  template <typename T>
  T convert(const json& v, const std::string& name) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("expected a boolean", key(name));
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer", key(name));
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
          throw ConfigError("expected a non-negative integer", key(name));
        }
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("expected a number", key(name));
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("expected a string", key(name));
    }
    try {
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(e.what(), key(name));
    }
  }

  template <typename T>
  std::vector<T> list(const std::string& name) {
    std::vector<T> out;
    const json* v = find(name);
    if (!v || v->is_null()) return out;
    if (!v->is_array()) throw ConfigError("expected an array", key(name));
    for (const auto& item : *v) out.push_back(convert<T>(item, name));
    return out;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key", key(it.key()));
    }
  }

 private:
  json obj_ = json::object();
  std::string prefix_;
  std::set<std::string> seen_;
};

template <typename F>
auto with_key(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    if (!e.key().empty()) throw;
    throw ConfigError(e.what(), key);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), key);
  }
}

EnvConfig parse_env(Section& s) {
  std::string preset = "standard";
  s.get("preset", preset);
  EnvConfig env = with_key(s.key("preset"), [&] { return EnvConfig::from_preset(preset); });
  const EnvConfig fixed = env;
  s.get("num_cells", env.num_cells);
  s.get("num_symbols", env.num_symbols);
  s.get("max_len", env.max_len);
  if (const json* mix = s.find("query_mix")) {
    if (!mix->is_array() || mix->size() != 3) {
      throw ConfigError("expected [point, majority, parity] weights", s.key("query_mix"));
    }
    for (std::size_t i = 0; i < 3; ++i) env.query_mix[i] = s.convert<double>((*mix)[i], "query_mix");
  }
  if (preset != "custom" && !(env == fixed)) {
    throw ConfigError("fields are fixed by preset '" + preset + "'; use preset custom to change them",
                      s.key("preset"));
  }
  s.finish();
  return env;
}

PolicyConfig parse_policy(Section& s) {
  PolicyConfig p;
  std::string arch = to_string(p.arch);
  s.get("arch", arch);
  p.arch = with_key(s.key("arch"), [&] { return arch_kind_from_string(arch); });
  s.get("hidden", p.hidden);
  s.get("window", p.window);
  s.get("table_rows", p.table_rows);
  s.finish();
  return p;
}

ObjectiveConfig parse_objective(Section& s) {
  ObjectiveConfig o;
  std::string variant = to_string(o.variant);
  s.get("variant", variant);
  o.variant = with_key(s.key("variant"), [&] { return variant_from_string(variant); });
  s.get("clip_eps", o.clip_eps);
  s.get("clip_eps_low", o.clip_eps_low);
  s.get("clip_eps_high", o.clip_eps_high);
  s.get("kl_coef", o.kl_coef);
  s.get_optional("beta", o.beta);
  s.get("perception_lambda", o.perception_lambda);
  s.get("eps_std", o.eps_std);
  s.get("filtering", o.filtering);
  s.get("reweighting", o.reweighting);
  s.get_optional("dynamic_sampling", o.dynamic_sampling);
  s.get("detach_weight", o.detach_weight);
  s.get("n_on", o.n_on);
  s.get("n_off", o.n_off);
  s.finish();
  return o;
}

ExpertConfig parse_expert(Section& s) {
  ExpertConfig e;
  s.get("kind", e.kind);
  s.get("eta", e.eta);
  s.get("checkpoint", e.checkpoint);
  s.get("cache", e.cache);
  s.get("pool_size", e.pool_size);
  s.finish();
  return e;
}

void parse_train(Section& s, TrainConfig& t) {
  s.get("batch_size", t.batch_size);
  s.get_optional("lr", t.lr);
  std::string opt = to_string(t.optimizer);
  s.get("optimizer", opt);
  t.optimizer = with_key(s.key("optimizer"), [&] { return optimizer_from_string(opt); });
  s.get("updates_per_snapshot", t.updates_per_snapshot);
  s.get("steps", t.steps);
  s.get("eval_every", t.eval_every);
  s.get("eval_size", t.eval_size);
  s.finish();
}

void parse_ablation(Section& s, ExperimentConfig& c) {
  for (const auto& name : s.list<std::string>("variant")) {
    c.ablation.variant.push_back(with_key(s.key("variant"), [&] { return variant_from_string(name); }));
  }
  c.ablation.filtering = s.list<bool>("filtering");
  c.ablation.reweighting = s.list<bool>("reweighting");
  c.ablation.n_off = s.list<int>("n_off");
  c.ablation.beta = s.list<double>("beta");
  s.get("workers", c.ablation_workers);
  s.finish();
}

void parse_gradcheck(Section& s, GradcheckOptions& g) {
  s.get("trials", g.trials);
  s.get("coords", g.coords);
  s.get("step", g.step);
  s.get("tolerance", g.tolerance);
  s.get("param_scale", g.param_scale);
  s.get("seed", g.seed);
  s.finish();
}

json section(Section& root, const std::string& name) {
  const json* v = root.find(name);
  return v ? *v : json();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (seeds.empty()) throw ConfigError("at least one seed required", "seeds");
  if (output_dir.empty()) throw ConfigError("must not be empty", "output_dir");
  if (ablation_workers < 1) throw ConfigError("must be >= 1", "ablation.workers");
  for (double b : ablation.beta) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("values must be finite and >= 0", "ablation.beta");
  }
  for (int n : ablation.n_off) {
    if (n < 0) throw ConfigError("values must be >= 0", "ablation.n_off");
  }
  if (gradcheck.trials < 1) throw ConfigError("must be >= 1", "gradcheck.trials");
  if (gradcheck.coords < 1) throw ConfigError("must be >= 1", "gradcheck.coords");
  if (!(gradcheck.step > 0.0)) throw ConfigError("must be > 0", "gradcheck.step");
  if (!(gradcheck.tolerance > 0.0)) throw ConfigError("must be > 0", "gradcheck.tolerance");
  if (!(gradcheck.param_scale > 0.0)) throw ConfigError("must be > 0", "gradcheck.param_scale");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  {
    Section s(section(root, "env"), "env");
    c.train.env = parse_env(s);
  }
  {
    Section s(section(root, "policy"), "policy");
    c.train.policy = parse_policy(s);
  }
  {
    Section s(section(root, "objective"), "objective");
    c.train.objective = parse_objective(s);
  }
  {
    Section s(section(root, "expert"), "expert");
    c.train.expert = parse_expert(s);
  }
  {
    Section s(section(root, "train"), "train");
    parse_train(s, c.train);
  }
  {
    Section s(section(root, "ablation"), "ablation");
    parse_ablation(s, c);
  }
  {
    Section s(section(root, "gradcheck"), "gradcheck");
    parse_gradcheck(s, c.gradcheck);
  }
  root.get("output_dir", c.output_dir);
  if (root.find("seeds")) c.seeds = root.list<std::uint64_t>("seeds");
  root.finish();
  c.gradcheck.base = c.train.objective;
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& o = t.objective;
  json j;
  j["env"] = {{"preset", t.env.preset},
              {"num_cells", t.env.num_cells},
              {"num_symbols", t.env.num_symbols},
              {"query_mix", t.env.query_mix},
              {"max_len", t.env.max_len}};
  j["policy"] = {{"arch", to_string(t.policy.arch)},
                 {"hidden", t.policy.hidden},
                 {"window", t.policy.window},
                 {"table_rows", t.policy.table_rows}};
  j["objective"] = {{"variant", to_string(o.variant)},
                    {"clip_eps", o.clip_eps},
                    {"clip_eps_low", o.clip_eps_low},
                    {"clip_eps_high", o.clip_eps_high},
                    {"kl_coef", o.kl_coef},
                    {"beta", optional_json(o.beta)},
                    {"perception_lambda", o.perception_lambda},
                    {"eps_std", o.eps_std},
                    {"filtering", o.filtering},
                    {"reweighting", o.reweighting},
                    {"dynamic_sampling", o.dynamic_sampling ? json(*o.dynamic_sampling) : json(nullptr)},
                    {"detach_weight", o.detach_weight},
                    {"n_on", o.n_on},
                    {"n_off", o.n_off}};
  j["expert"] = {{"kind", t.expert.kind},
                 {"eta", t.expert.eta},
                 {"checkpoint", t.expert.checkpoint},
                 {"cache", t.expert.cache},
                 {"pool_size", t.expert.pool_size}};
  j["train"] = {{"batch_size", t.batch_size},
                {"lr", optional_json(t.lr)},
                {"optimizer", to_string(t.optimizer)},
                {"updates_per_snapshot", t.updates_per_snapshot},
                {"steps", t.steps},
                {"eval_every", t.eval_every},
                {"eval_size", t.eval_size}};
  json variants = json::array();
  for (Variant v : c.ablation.variant) variants.push_back(to_string(v));
  j["ablation"] = {{"variant", variants},
                   {"filtering", c.ablation.filtering},
                   {"reweighting", c.ablation.reweighting},
                   {"n_off", c.ablation.n_off},
                   {"beta", c.ablation.beta},
                   {"workers", c.ablation_workers}};
  j["gradcheck"] = {{"trials", c.gradcheck.trials},
                    {"coords", c.gradcheck.coords},
                    {"step", c.gradcheck.step},
                    {"tolerance", c.gradcheck.tolerance},
                    {"param_scale", c.gradcheck.param_scale},
                    {"seed", c.gradcheck.seed}};
  j["output_dir"] = c.output_dir;
  j["seeds"] = c.seeds;
  return j;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value: '" + assignment + "'");
  }
  std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (path == "seed") {
    path = "seeds";
    value = json::array({value});
  }
  if (!doc.is_object()) doc = json::object();
  json* node = &doc;
  std::stringstream parts(path);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("empty path component", path);
    keys.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    json& child = (*node)[keys[i]];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("not a section", path);
    node = &child;
  }
  (*node)[keys.back()] = value;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'", "config");
  json doc = json::parse(in, nullptr, false, true);
  if (doc.is_discarded()) throw ConfigError("malformed JSON in '" + path.string() + "'", "config");
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

TrainConfig train_config_for(const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig t = config.train;
  t.seed = seed;
  return t;
}

std::filesystem::path output_path(const ExperimentConfig& config) {
  std::filesystem::path dir(config.output_dir);
  const char* root = std::getenv("TGRL_OUTPUT_ROOT");
  if (root && *root && dir.is_relative()) return std::filesystem::path(root) / dir;
  return dir;
}

}  // namespace tgrl
