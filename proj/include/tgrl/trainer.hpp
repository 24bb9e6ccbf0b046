#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgrl/env.hpp"
#include "tgrl/objective.hpp"
#include "tgrl/policy.hpp"
#include "tgrl/rollout.hpp"

namespace tgrl {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct PolicyConfig {
  ArchKind arch = ArchKind::Mlp;
  int hidden = 32;
  int window = 4;
  int table_rows = 4096;

  PolicyArch arch_for(const EnvConfig& env) const;
};

struct ExpertConfig {
  std::string kind = "procedure";  // procedure | checkpoint
  double eta = 0.0;
  std::string checkpoint;          // policy checkpoint when kind = checkpoint
  bool cache = false;              // pre-generated pool per instance
  int pool_size = 8;
};

struct TrainConfig {
  EnvConfig env;
  PolicyConfig policy;
  ObjectiveConfig objective;
  ExpertConfig expert;
  int batch_size = 4;
  std::optional<double> lr;  // unset: 0.05 tabular, 0.005 mlp
  OptimizerKind optimizer = OptimizerKind::Adam;
  int updates_per_snapshot = 1;
  int steps = 2000;
  int eval_every = 200;
  int eval_size = 512;
  std::uint64_t seed = 0;

  double lr_value() const;
  void validate() const;
};

// One line of the metrics history. NaN marks "not measured at this step".
struct MetricsRecord {
  int step = 0;
  double loss = 0.0;
  double eval_acc = 0.0;
  double reward_on = 0.0;
  double reward_exp = 0.0;
  double mask_rate = 0.0;
  double mean_w = 0.0;
  double clip_frac_on = 0.0;
  double clip_frac_exp = 0.0;
  double kl = 0.0;
  double adv_abs_on = 0.0;
  double adv_abs_exp = 0.0;
  bool skipped = false;

  bool operator==(const MetricsRecord&) const;
};

struct TrainResult {
  Policy params;
  std::vector<MetricsRecord> history;
  double final_accuracy = 0.0;
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or plain SGD on a minimized loss.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::size_t n);
  void step(std::span<double> params, std::span<const double> grad);

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

// Called after each batch is sampled, before the update.
using BatchObserver = std::function<void(int step, std::span<const RolloutGroup>, const Policy& theta)>;

// Greedy-decoding success rate.
double evaluate(const Policy& policy, const EnvConfig& env, std::span<const TaskInstance> instances);
double evaluate(const ExpertSpec& expert, const EnvConfig& env, std::span<const TaskInstance> instances);

std::vector<TaskInstance> make_instances(const EnvConfig& env, std::uint64_t seed, int n);
// Fixed evaluation set for a master seed, shared by every run with that seed.
std::vector<TaskInstance> eval_instances(const TrainConfig& config);

Policy initial_policy(const TrainConfig& config);
ExpertSource make_expert(const TrainConfig& config);

// PPO-style loop: refresh the behavior snapshot every `updates_per_snapshot`
// steps (sampling a new batch), compute the configured loss and update.
// Skipped batches consume a step without updating. Throws NonFiniteError on
// a NaN/Inf loss or gradient.
TrainResult train(const TrainConfig& config, const BatchObserver& observer = {});

}  // namespace tgrl
