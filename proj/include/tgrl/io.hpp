#pragma once

#include <cstddef>
#include <optional>

#include <json.hpp>

#include "tgrl/env.hpp"
#include "tgrl/policy.hpp"
#include "tgrl/rollout.hpp"
#include "tgrl/trainer.hpp"

namespace tgrl {

// One trajectory dump record. Keys (stable):
//   instance_id, cells, query{type,arg}, y, origin, tokens,
//   spans{sep,perception_end,length}, logp_theta, logp_theta_old, logp_phi,
//   prediction, reward.
// logp_theta is null without a student policy; logp_theta_old is null for
// expert members; logp_phi is null for on-policy members unless the expert
// is the hand-coded procedure (then it is that procedure's teacher-forced score).
nlohmann::json trajectory_record(const RolloutGroup& group, std::size_t index, const Policy* theta,
                                 const ExpertSpec* expert, const EnvConfig& env);

// Every member of a group plus its statistics; used for non-finite diagnostics.
nlohmann::json group_dump(const RolloutGroup& group, const Policy& theta, const EnvConfig& env, int step);

// Metrics line: {step, loss, eval_acc, reward_on, reward_exp, mask_rate,
// mean_w, clip_frac_on, clip_frac_exp, kl, adv_abs_on, adv_abs_exp, skipped}.
// Unmeasured values are written as null.
nlohmann::json to_json(const MetricsRecord& rec);

}  // namespace tgrl
