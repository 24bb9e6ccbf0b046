#include "tgrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tgrl/error.hpp"
#include "tgrl/io.hpp"

namespace tgrl {

namespace {

// Stream ids for derive_seed(master, id).
enum SeedStream : std::uint64_t {
  kInitStream = 1,
  kInstanceStream = 2,
  kGroupStream = 3,
  kEvalStream = 4,
  kCacheStream = 5,
};

bool same_double(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam|sgd)", "train.optimizer");
}

PolicyArch PolicyConfig::arch_for(const EnvConfig& env) const {
  PolicyArch a;
  a.kind = arch;
  a.layout = env.layout(window);
  a.hidden = hidden;
  a.table_rows = table_rows;
  return a;
}

double TrainConfig::lr_value() const {
  if (lr) return *lr;
  return policy.arch == ArchKind::Tabular ? 0.05 : 0.005;
}

void TrainConfig::validate() const {
  env.validate();
  objective.validate();
  if (policy.window < 0) throw ConfigError("must be >= 0", "policy.window");
  if (policy.hidden < 1) throw ConfigError("must be >= 1", "policy.hidden");
  if (policy.table_rows < 1) throw ConfigError("must be >= 1", "policy.table_rows");
  if (expert.kind != "procedure" && expert.kind != "checkpoint") {
    throw ConfigError("must be 'procedure' or 'checkpoint'", "expert.kind");
  }
  if (expert.kind == "procedure") ExpertSpec{expert.eta}.validate();
  if (expert.kind == "checkpoint" && expert.checkpoint.empty()) {
    throw ConfigError("checkpoint path required when expert.kind = checkpoint", "expert.checkpoint");
  }
  if (expert.cache && expert.pool_size < objective.n_off) {
    throw ConfigError("pool must hold at least n_off trajectories", "expert.pool_size");
  }
  if (batch_size < 1) throw ConfigError("must be >= 1", "train.batch_size");
  if (!(lr_value() > 0.0) || !std::isfinite(lr_value())) throw ConfigError("must be finite and > 0", "train.lr");
  if (updates_per_snapshot < 1) throw ConfigError("must be >= 1", "train.updates_per_snapshot");
  if (steps < 0) throw ConfigError("must be >= 0", "train.steps");
  if (eval_every < 1) throw ConfigError("must be >= 1", "train.eval_every");
  if (eval_size < 1) throw ConfigError("must be >= 1", "train.eval_size");
}

bool MetricsRecord::operator==(const MetricsRecord& o) const {
  return step == o.step && skipped == o.skipped && same_double(loss, o.loss) &&
         same_double(eval_acc, o.eval_acc) && same_double(reward_on, o.reward_on) &&
         same_double(reward_exp, o.reward_exp) && same_double(mask_rate, o.mask_rate) &&
         same_double(mean_w, o.mean_w) && same_double(clip_frac_on, o.clip_frac_on) &&
         same_double(clip_frac_exp, o.clip_frac_exp) && same_double(kl, o.kl) &&
         same_double(adv_abs_on, o.adv_abs_on) && same_double(adv_abs_exp, o.adv_abs_exp);
}

Optimizer::Optimizer(OptimizerKind kind, double lr, std::size_t n) : kind_(kind), lr_(lr) {
  if (kind_ == OptimizerKind::Adam) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
}

void Optimizer::step(std::span<double> params, std::span<const double> grad) {
  if (kind_ == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
    return;
  }
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

double evaluate(const Policy& policy, const EnvConfig& env, std::span<const TaskInstance> instances) {
  if (instances.empty()) return 0.0;
  int hits = 0;
  for (const auto& inst : instances) hits += greedy_decode(policy, env, inst).reward;
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

double evaluate(const ExpertSpec& expert, const EnvConfig& env, std::span<const TaskInstance> instances) {
  if (instances.empty()) return 0.0;
  int hits = 0;
  for (const auto& inst : instances) hits += greedy_decode(expert, env, inst).reward;
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

std::vector<TaskInstance> make_instances(const EnvConfig& env, std::uint64_t seed, int n) {
  Rng rng(seed);
  std::vector<TaskInstance> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_instance(env, rng, static_cast<std::uint64_t>(i)));
  return out;
}

std::vector<TaskInstance> eval_instances(const TrainConfig& config) {
  return make_instances(config.env, derive_seed(config.seed, kEvalStream), config.eval_size);
}

Policy initial_policy(const TrainConfig& config) {
  return Policy::initialize(config.policy.arch_for(config.env), derive_seed(config.seed, kInitStream));
}

ExpertSource make_expert(const TrainConfig& config) {
  if (config.expert.kind == "checkpoint") {
    Policy p = load_checkpoint(config.expert.checkpoint);
    if (p.vocab_size() != config.env.vocab().size()) {
      throw ConfigError("expert checkpoint vocabulary does not match environment", "expert.checkpoint");
    }
    return p;
  }
  return ExpertSpec{config.expert.eta};
}

TrainResult train(const TrainConfig& config, const BatchObserver& observer) {
  config.validate();
  const auto eval_set = eval_instances(config);
  const ExpertSource expert = make_expert(config);
  std::optional<ExpertCache> cache;
  if (config.expert.cache) cache.emplace(config.expert.pool_size, derive_seed(config.seed, kCacheStream));

  TrainResult result;
  Policy theta = initial_policy(config);
  const Policy ref = snapshot(theta);
  Policy theta_old = snapshot(theta);
  Optimizer optimizer(config.optimizer, config.lr_value(), theta.params().size());

  GroupRequest request{config.objective.n_on, config.objective.n_off, cache ? &*cache : nullptr};
  std::vector<RolloutGroup> batch;
  const auto instance_seed = derive_seed(config.seed, kInstanceStream);
  const auto group_seed = derive_seed(config.seed, kGroupStream);

  for (int step = 0; step < config.steps; ++step) {
    if (step % config.updates_per_snapshot == 0) {
      theta_old = snapshot(theta);
      Rng inst_rng(derive_seed(instance_seed, static_cast<std::uint64_t>(step)));
      batch.clear();
      for (int b = 0; b < config.batch_size; ++b) {
        const auto id = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(config.batch_size) +
                        static_cast<std::uint64_t>(b);
        const auto inst = generate_instance(config.env, inst_rng, id);
        batch.push_back(sample_group(theta_old, expert, config.env, inst, request, derive_seed(group_seed, id)));
      }
    }
    if (observer) observer(step, batch, theta);

    auto loss = loss_and_grad(batch, theta, ref, config.env, config.objective);
    const bool finite = std::isfinite(loss.loss) &&
                        std::all_of(loss.grad.begin(), loss.grad.end(), [](double g) { return std::isfinite(g); });
    if (!finite) {
      std::size_t offending = 0;
      for (std::size_t g = 0; g < batch.size(); ++g) {
        const auto single = loss_and_grad(std::span(batch).subspan(g, 1), theta, ref, config.env, config.objective);
        if (!std::isfinite(single.loss) ||
            !std::all_of(single.grad.begin(), single.grad.end(), [](double x) { return std::isfinite(x); })) {
          offending = g;
          break;
        }
      }
      throw NonFiniteError("non-finite loss or gradient at step " + std::to_string(step),
                           group_dump(batch[offending], theta, config.env, step).dump(2));
    }
    if (!loss.skipped) optimizer.step(theta.params_mut(), loss.grad);

    MetricsRecord rec;
    const auto& m = loss.metrics;
    rec.step = step + 1;
    rec.loss = m.loss;
    rec.reward_on = m.reward_on;
    rec.reward_exp = m.reward_exp;
    rec.mask_rate = m.mask_rate;
    rec.mean_w = m.mean_w;
    rec.clip_frac_on = m.clip_frac_on;
    rec.clip_frac_exp = m.clip_frac_exp;
    rec.kl = m.kl;
    rec.adv_abs_on = m.adv_abs_on;
    rec.adv_abs_exp = m.adv_abs_exp;
    rec.skipped = loss.skipped;
    rec.eval_acc = std::numeric_limits<double>::quiet_NaN();
    if (rec.step % config.eval_every == 0 || rec.step == config.steps) {
      rec.eval_acc = evaluate(theta, config.env, eval_set);
    }
    result.history.push_back(rec);
  }

  result.final_accuracy = result.history.empty() ? evaluate(theta, config.env, eval_set)
                                                 : result.history.back().eval_acc;
  result.params = std::move(theta);
  return result;
}

}  // namespace tgrl
