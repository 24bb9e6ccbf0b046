#include "tgrl/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tgrl/error.hpp"

namespace tgrl {

GroupStats group_stats(std::span<const double> rewards) {
  GroupStats s;
  if (rewards.empty()) return s;
  const auto n = static_cast<double>(rewards.size());
  s.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(ss / n);
  return s;
}

int RolloutGroup::n_off() const {
  return static_cast<int>(std::count_if(trajectories.begin(), trajectories.end(),
                                        [](const Trajectory& t) { return t.is_expert(); }));
}

std::vector<double> RolloutGroup::rewards() const {
  std::vector<double> r;
  r.reserve(trajectories.size());
  for (const auto& t : trajectories) r.push_back(static_cast<double>(t.reward));
  return r;
}

std::vector<Context> trajectory_contexts(const EnvConfig& config, const TaskInstance& instance,
                                         std::span<const Token> tokens, int window) {
  std::vector<Context> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    out.push_back(make_context(config, instance, tokens.first(t), window));
  }
  return out;
}

std::vector<double> score_under(const Policy& policy, const EnvConfig& config,
                                const TaskInstance& instance, std::span<const Token> tokens) {
  const int window = policy.arch().layout.window;
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto ctx = make_context(config, instance, tokens.first(t), window);
    out.push_back(policy.log_prob(ctx, tokens[t]));
  }
  return out;
}

Trajectory sample_trajectory(const Policy& policy, const EnvConfig& config,
                             const TaskInstance& instance, Rng& rng) {
  const Vocab vocab = config.vocab();
  if (policy.vocab_size() != vocab.size()) throw InputError("policy vocabulary does not match environment");
  const int window = policy.arch().layout.window;
  std::vector<Token> tokens;
  std::vector<double> logp;
  tokens.reserve(static_cast<std::size_t>(config.max_len));
  while (static_cast<int>(tokens.size()) < config.max_len) {
    const auto ctx = make_context(config, instance, tokens, window);
    const auto [tok, lp] = policy.sample_token(ctx, rng);
    tokens.push_back(tok);
    logp.push_back(lp);
    if (tok == vocab.eos()) break;
  }
  return finalize_trajectory(std::move(tokens), std::move(logp), Origin::OnPolicy, config, instance);
}

Trajectory sample_expert(const ExpertSource& expert, const EnvConfig& config,
                         const TaskInstance& instance, Rng& rng) {
  if (const auto* spec = std::get_if<ExpertSpec>(&expert)) {
    return expert_rollout(*spec, config, instance, rng);
  }
  Trajectory traj = sample_trajectory(std::get<Policy>(expert), config, instance, rng);
  traj.origin = Origin::Expert;
  return traj;
}

const std::vector<Trajectory>& ExpertCache::pool(const ExpertSpec& spec, const EnvConfig& config,
                                                 const TaskInstance& instance) {
  std::vector<int> key = instance.cells;
  key.push_back(static_cast<int>(instance.query.type));
  key.push_back(instance.query.arg);
  std::lock_guard<std::mutex> lock(mutex_);
  auto& slot = pools_[key];
  if (!slot) {
    std::uint64_t h = seed_;
    for (int v : key) h = derive_seed(h, static_cast<std::uint64_t>(v));
    auto pool = std::make_unique<std::vector<Trajectory>>();
    for (int i = 0; i < pool_size_; ++i) {
      Rng rng(derive_seed(h, static_cast<std::uint64_t>(i)));
      pool->push_back(expert_rollout(spec, config, instance, rng));
    }
    slot = std::move(pool);
  }
  return *slot;
}

RolloutGroup sample_group(const Policy& behavior, const ExpertSource& expert,
                          const EnvConfig& config, const TaskInstance& instance,
                          const GroupRequest& request, std::uint64_t seed) {
  if (request.n_on < 0 || request.n_off < 0) throw ConfigError("group sizes must be non-negative");
  if (request.n_on + request.n_off < 2) {
    throw ConfigError("rollout group needs at least 2 members (n_on + n_off >= 2)", "objective.n_on");
  }
  RolloutGroup group;
  group.instance = instance;
  group.trajectories.reserve(static_cast<std::size_t>(request.n_on + request.n_off));
  for (int i = 0; i < request.n_on; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    group.trajectories.push_back(sample_trajectory(behavior, config, instance, rng));
  }
  const auto* spec = std::get_if<ExpertSpec>(&expert);
  if (request.cache != nullptr && spec != nullptr && request.n_off > 0) {
    const auto& pool = request.cache->pool(*spec, config, instance);
    if (request.n_off > static_cast<int>(pool.size())) {
      throw ConfigError("n_off exceeds expert pool size", "expert.pool_size");
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(request.n_on)));
    std::vector<int> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < request.n_off; ++i) {
      const int j = i + uniform_int(rng, static_cast<int>(idx.size()) - i);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      group.trajectories.push_back(pool[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    }
  } else {
    for (int i = 0; i < request.n_off; ++i) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(request.n_on + i)));
      group.trajectories.push_back(sample_expert(expert, config, instance, rng));
    }
  }
  const auto rewards = group.rewards();
  group.stats = group_stats(rewards);
  return group;
}

Trajectory greedy_decode(const Policy& policy, const EnvConfig& config, const TaskInstance& instance) {
  const Vocab vocab = config.vocab();
  const int window = policy.arch().layout.window;
  std::vector<Token> tokens;
  std::vector<double> logp;
  while (static_cast<int>(tokens.size()) < config.max_len) {
    const auto lp = policy.log_probs(make_context(config, instance, tokens, window));
    const auto tok = static_cast<Token>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    tokens.push_back(tok);
    logp.push_back(lp[static_cast<std::size_t>(tok)]);
    if (tok == vocab.eos()) break;
  }
  return finalize_trajectory(std::move(tokens), std::move(logp), Origin::OnPolicy, config, instance);
}

Trajectory greedy_decode(const ExpertSpec& expert, const EnvConfig& config,
                         const TaskInstance& instance) {
  const Vocab vocab = config.vocab();
  std::vector<Token> tokens;
  std::vector<double> logp;
  while (static_cast<int>(tokens.size()) < config.max_len) {
    const auto lp = expert_log_probs(expert, config, instance, tokens);
    const auto tok = static_cast<Token>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    tokens.push_back(tok);
    logp.push_back(lp[static_cast<std::size_t>(tok)]);
    if (tok == vocab.eos()) break;
  }
  return finalize_trajectory(std::move(tokens), std::move(logp), Origin::Expert, config, instance);
}

}  // namespace tgrl
