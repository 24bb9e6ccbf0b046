// tgrl command-line driver.
//
// Exit codes: 0 success, 1 failure (including a failed gradient check),
// 2 invalid configuration, 3 non-finite loss/gradient during training.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tgrl/analysis.hpp"
#include "tgrl/config.hpp"
#include "tgrl/error.hpp"
#include "tgrl/io.hpp"
#include "tgrl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tgrl;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNonFinite = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

fs::path seed_dir(const fs::path& root, std::uint64_t seed) { return root / ("seed_" + std::to_string(seed)); }

const ExpertSpec* procedure_expert(const ExpertSource& src) { return std::get_if<ExpertSpec>(&src); }

int cmd_train(const ExperimentConfig& config, bool dump_trajectories) {
  const fs::path root = output_path(config);
  fs::create_directories(root);
  write_text(root / "resolved_config.json", config_to_json(config).dump(2) + "\n");

  for (std::uint64_t seed : config.seeds) {
    const TrainConfig tc = train_config_for(config, seed);
    const fs::path dir = seed_dir(root, seed);
    fs::create_directories(dir);

    std::ofstream traj_out;
    BatchObserver observer;
    const ExpertSource expert = make_expert(tc);
    if (dump_trajectories) {
      traj_out.open(dir / "trajectories.jsonl");
      observer = [&](int step, std::span<const RolloutGroup> batch, const Policy& theta) {
        if (step % tc.updates_per_snapshot != 0) return;
        for (const auto& group : batch) {
          for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
            json rec = trajectory_record(group, i, &theta, procedure_expert(expert), tc.env);
            rec["step"] = step;
            traj_out << rec.dump() << "\n";
          }
        }
      };
    }

    try {
      const TrainResult result = train(tc, observer);
      std::ofstream metrics(dir / "metrics.jsonl");
      for (const auto& rec : result.history) metrics << to_json(rec).dump() << "\n";
      save_checkpoint(result.params, dir / "checkpoint.bin");
      std::printf("seed %llu: final_accuracy %.4f (%s)\n", static_cast<unsigned long long>(seed),
                  result.final_accuracy, dir.string().c_str());
    } catch (const NonFiniteError& e) {
      const fs::path dump = dir / "nonfinite_dump.json";
      write_text(dump, e.dump() + "\n");
      std::fprintf(stderr, "error: %s\ndiagnostic dump: %s\n", e.what(), dump.string().c_str());
      return kExitNonFinite;
    }
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const ExperimentConfig& config, std::optional<double> expert_eta,
             int n, std::uint64_t seed) {
  const EnvConfig& env = config.train.env;
  const auto instances = make_instances(env, seed, n);
  double acc = 0.0;
  if (expert_eta) {
    ExpertSpec spec{*expert_eta};
    spec.validate();
    acc = evaluate(spec, env, instances);
  } else {
    const Policy policy = load_checkpoint(checkpoint);
    if (policy.vocab_size() != env.vocab().size()) {
      throw ConfigError("checkpoint vocabulary does not match the environment", "env.preset");
    }
    acc = evaluate(policy, env, instances);
  }
  std::printf("%.3f\n", acc);
  return 0;
}

int cmd_gradcheck(const ExperimentConfig& config) {
  const auto reports = gradcheck_all(config.gradcheck);
  bool ok = true;
  std::printf("%-11s %-8s %12s %12s %8s %8s %8s  %s\n", "variant", "arch", "max_rel_err", "resolved_err",
              "checked", "small", "skipped", "result");
  for (const auto& r : reports) {
    std::printf("%-11s %-8s %12.3e %12.3e %8d %8d %8d  %s\n", to_string(r.variant).c_str(),
                to_string(r.arch).c_str(), r.max_rel_error, r.max_rel_error_resolved, r.coords_checked,
                r.coords_small, r.coords_skipped, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitFailure;
}

int cmd_ablate(const ExperimentConfig& config) {
  const fs::path root = output_path(config);
  fs::create_directories(root);
  write_text(root / "resolved_config.json", config_to_json(config).dump(2) + "\n");
  TrainConfig base = config.train;
  const auto rows = ablation_matrix(base, config.ablation, config.seeds, config.ablation_workers);
  write_text(root / "ablation.csv", ablation_table(rows));

  int failures = 0;
  for (const auto& s : summarize(rows)) {
    std::string axes;
    for (const auto& [k, v] : s.axis_values) axes += (axes.empty() ? "" : " ") + k + "=" + v;
    std::printf("%s [%s] accuracy %.4f +- %.4f over %d runs", s.cell_id.c_str(), axes.c_str(), s.mean_accuracy,
                s.std_accuracy, s.runs);
    if (s.failures) std::printf(" (%d failed)", s.failures);
    std::printf("\n");
    failures += s.failures;
  }
  for (const auto& r : rows) {
    if (!r.error.empty()) std::fprintf(stderr, "%s seed %llu: %s\n", r.cell_id.c_str(),
                                       static_cast<unsigned long long>(r.seed), r.error.c_str());
  }
  std::printf("table: %s\n", (root / "ablation.csv").string().c_str());
  return failures ? kExitFailure : 0;
}

int cmd_dump(const ExperimentConfig& config, const std::string& checkpoint, int groups) {
  const fs::path root = output_path(config);
  fs::create_directories(root);
  for (std::uint64_t seed : config.seeds) {
    const TrainConfig tc = train_config_for(config, seed);
    const Policy theta = checkpoint.empty() ? initial_policy(tc) : load_checkpoint(checkpoint);
    if (theta.vocab_size() != tc.env.vocab().size()) {
      throw ConfigError("checkpoint vocabulary does not match the environment", "env.preset");
    }
    const ExpertSource expert = make_expert(tc);
    const fs::path dir = seed_dir(root, seed);
    fs::create_directories(dir);
    std::ofstream out(dir / "trajectories.jsonl");
    Rng rng(derive_seed(seed, 0x64756d70));
    GroupRequest req{tc.objective.n_on, tc.objective.n_off, nullptr};
    for (int g = 0; g < groups; ++g) {
      const auto inst = generate_instance(tc.env, rng, static_cast<std::uint64_t>(g));
      const auto group = sample_group(theta, expert, tc.env, inst, req, rng());
      for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
        out << trajectory_record(group, i, &theta, procedure_expert(expert), tc.env).dump() << "\n";
      }
    }
    std::printf("%s\n", (dir / "trajectories.jsonl").string().c_str());
  }
  return 0;
}

ExperimentConfig resolve(const std::string& path, const std::vector<std::string>& overrides) {
  if (path.empty()) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& o : overrides) apply_override(doc, o);
    return config_from_json(doc);
  }
  return load_config(path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed expert/on-policy group RL on synthetic perception-reasoning tasks"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("-c,--config", config_path, "JSON experiment config");
    if (required) opt->required();
    cmd->add_option("--set", overrides, "Override as key.path=value (repeatable)")->take_all();
  };

  auto* train_cmd = app.add_subcommand("train", "Train for every seed in the config");
  bool dump_trajectories = false;
  add_config(train_cmd, true);
  train_cmd->add_flag("--dump-trajectories", dump_trajectories, "Write every sampled trajectory");

  auto* eval_cmd = app.add_subcommand("eval", "Greedy accuracy of a checkpoint or of the expert procedure");
  std::string checkpoint;
  std::optional<double> expert_eta;
  std::string preset = "standard";
  int eval_n = 512;
  std::uint64_t eval_seed = 0;
  add_config(eval_cmd, false);
  eval_cmd->add_option("--checkpoint", checkpoint, "Policy checkpoint");
  eval_cmd->add_option("--expert-eta", expert_eta, "Evaluate the expert procedure with this noise instead");
  eval_cmd->add_option("--preset", preset, "Environment preset when no config is given");
  eval_cmd->add_option("-n,--num", eval_n, "Number of instances")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_seed, "Instance seed");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every objective");
  add_config(grad_cmd, false);

  auto* ablate_cmd = app.add_subcommand("ablate", "Run the ablation matrix");
  add_config(ablate_cmd, true);

  auto* dump_cmd = app.add_subcommand("dump-trajectories", "Sample groups and write trajectory records");
  int dump_groups = 4;
  add_config(dump_cmd, true);
  dump_cmd->add_option("--checkpoint", checkpoint, "Student checkpoint (default: initial policy)");
  dump_cmd->add_option("--groups", dump_groups, "Groups per seed")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(resolve(config_path, overrides), dump_trajectories);
    if (eval_cmd->parsed()) {
      if (checkpoint.empty() && !expert_eta) throw ConfigError("give --checkpoint or --expert-eta", "checkpoint");
      if (config_path.empty()) overrides.insert(overrides.begin(), "env.preset=" + preset);
      return cmd_eval(checkpoint, resolve(config_path, overrides), expert_eta, eval_n, eval_seed);
    }
    if (grad_cmd->parsed()) return cmd_gradcheck(resolve(config_path, overrides));
    if (ablate_cmd->parsed()) return cmd_ablate(resolve(config_path, overrides));
    if (dump_cmd->parsed()) return cmd_dump(resolve(config_path, overrides), checkpoint, dump_groups);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "invalid config: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
