#pragma once

#include <cmath>
#include <vector>

#include "tgrl/env.hpp"
#include "tgrl/policy.hpp"
#include "tgrl/rollout.hpp"

namespace tgrl::testing {

inline EnvConfig small_env(int k = 2, int s = 3, int max_len = 12) {
  EnvConfig env;
  env.preset = "custom";
  env.num_cells = k;
  env.num_symbols = s;
  env.max_len = max_len;
  return env;
}

inline PolicyArch arch_for(const EnvConfig& env, ArchKind kind, int hidden = 8, int rows = 64) {
  PolicyArch a;
  a.kind = kind;
  a.layout = env.layout(4);
  a.hidden = hidden;
  a.table_rows = rows;
  return a;
}

inline Policy random_policy(const PolicyArch& arch, std::uint64_t seed, double scale) {
  Rng rng(seed);
  std::vector<double> p(arch.param_count());
  for (double& x : p) x = scale * (2.0 * uniform01(rng) - 1.0);
  return Policy(arch, std::move(p));
}

// Builds a trajectory from explicit tokens, scoring it under `behavior`.
inline Trajectory make_traj(std::vector<Token> tokens, const Policy& behavior, Origin origin,
                            const EnvConfig& env, const TaskInstance& inst) {
  auto logp = score_under(behavior, env, inst, tokens);
  return finalize_trajectory(std::move(tokens), std::move(logp), origin, env, inst);
}

}  // namespace tgrl::testing
