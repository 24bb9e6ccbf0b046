#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <variant>
#include <vector>

#include "tgrl/env.hpp"
#include "tgrl/policy.hpp"
#include "tgrl/trajectory.hpp"

namespace tgrl {

// Population mean and standard deviation of the group rewards.
struct GroupStats {
  double mean = 0.0;
  double std = 0.0;
};

GroupStats group_stats(std::span<const double> rewards);

// G = N_on + N_off trajectories for one instance. On-policy members come
// first, expert members last.
struct RolloutGroup {
  TaskInstance instance;
  std::vector<Trajectory> trajectories;
  GroupStats stats;

  int size() const { return static_cast<int>(trajectories.size()); }
  int n_off() const;
  std::vector<double> rewards() const;
};

// Pre-generated expert pools keyed by instance. Pools are a pure function
// of (instance, pool seed), so memoization order does not affect results.
class ExpertCache {
 public:
  ExpertCache(int pool_size, std::uint64_t seed) : pool_size_(pool_size), seed_(seed) {}

  int pool_size() const { return pool_size_; }
  // Shared pool for an instance; generated on first use.
  const std::vector<Trajectory>& pool(const ExpertSpec& spec, const EnvConfig& config,
                                      const TaskInstance& instance);

 private:
  int pool_size_;
  std::uint64_t seed_;
  std::mutex mutex_;
  std::map<std::vector<int>, std::unique_ptr<std::vector<Trajectory>>> pools_;
};

// Where expert trajectories come from: the hand-coded procedure, or any
// policy with the same interface as the student.
using ExpertSource = std::variant<ExpertSpec, Policy>;

struct GroupRequest {
  int n_on = 7;
  int n_off = 1;
  // Draw experts without replacement from a per-instance pool instead of
  // sampling fresh ones. Only used with an ExpertSpec source.
  ExpertCache* cache = nullptr;
};

// Samples one trajectory token-by-token from `policy`, recording the
// log-probability of every emitted token.
Trajectory sample_trajectory(const Policy& policy, const EnvConfig& config,
                             const TaskInstance& instance, Rng& rng);

// Expert trajectory from either source.
Trajectory sample_expert(const ExpertSource& expert, const EnvConfig& config,
                         const TaskInstance& instance, Rng& rng);

// Builds the joint group. Each member i draws from its own generator seeded
// with derive_seed(seed, i), so members are independent of sampling order.
RolloutGroup sample_group(const Policy& behavior, const ExpertSource& expert,
                          const EnvConfig& config, const TaskInstance& instance,
                          const GroupRequest& request, std::uint64_t seed);

// Contexts seen at each position of `traj` (teacher forcing on its own prefix).
std::vector<Context> trajectory_contexts(const EnvConfig& config, const TaskInstance& instance,
                                         std::span<const Token> tokens, int window);

// Per-token log-probabilities of `tokens` under `policy`, teacher-forced.
std::vector<double> score_under(const Policy& policy, const EnvConfig& config,
                                const TaskInstance& instance, std::span<const Token> tokens);

// Greedy (argmax) decode; ties go to the lowest token id.
Trajectory greedy_decode(const Policy& policy, const EnvConfig& config, const TaskInstance& instance);
Trajectory greedy_decode(const ExpertSpec& expert, const EnvConfig& config,
                         const TaskInstance& instance);

}  // namespace tgrl
