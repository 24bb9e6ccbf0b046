#include "tgrl/io.hpp"

#include <cmath>

namespace tgrl {

namespace {

nlohmann::json number_or_null(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

nlohmann::json logp_array(const std::vector<double>& v) {
  auto arr = nlohmann::json::array();
  for (double x : v) arr.push_back(number_or_null(x));
  return arr;
}

}  // namespace

nlohmann::json trajectory_record(const RolloutGroup& group, std::size_t index, const Policy* theta,
                                 const ExpertSpec* expert, const EnvConfig& env) {
  const auto& traj = group.trajectories.at(index);
  const auto& inst = group.instance;
  nlohmann::json j;
  j["instance_id"] = inst.id;
  j["cells"] = inst.cells;
  j["query"] = {{"type", to_string(inst.query.type)}, {"arg", inst.query.arg}};
  j["y"] = inst.answer;
  j["origin"] = to_string(traj.origin);
  j["tokens"] = traj.tokens;
  j["spans"] = {{"sep", traj.spans.sep},
                {"perception_end", traj.spans.perception_end()},
                {"length", traj.spans.length}};
  j["logp_theta"] = theta ? logp_array(score_under(*theta, env, inst, traj.tokens)) : nlohmann::json(nullptr);
  if (traj.is_expert()) {
    j["logp_theta_old"] = nullptr;
    j["logp_phi"] = logp_array(traj.logp_behavior);
  } else {
    j["logp_theta_old"] = logp_array(traj.logp_behavior);
    j["logp_phi"] = expert ? logp_array(expert_score(*expert, env, inst, traj.tokens)) : nlohmann::json(nullptr);
  }
  j["prediction"] = traj.prediction ? nlohmann::json(*traj.prediction) : nlohmann::json(nullptr);
  j["reward"] = traj.reward;
  return j;
}

nlohmann::json group_dump(const RolloutGroup& group, const Policy& theta, const EnvConfig& env, int step) {
  nlohmann::json j;
  j["step"] = step;
  j["reward_mean"] = group.stats.mean;
  j["reward_std"] = group.stats.std;
  j["trajectories"] = nlohmann::json::array();
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    j["trajectories"].push_back(trajectory_record(group, i, &theta, nullptr, env));
  }
  return j;
}

nlohmann::json to_json(const MetricsRecord& rec) {
  return {{"step", rec.step},
          {"loss", number_or_null(rec.loss)},
          {"eval_acc", number_or_null(rec.eval_acc)},
          {"reward_on", number_or_null(rec.reward_on)},
          {"reward_exp", number_or_null(rec.reward_exp)},
          {"mask_rate", number_or_null(rec.mask_rate)},
          {"mean_w", number_or_null(rec.mean_w)},
          {"clip_frac_on", number_or_null(rec.clip_frac_on)},
          {"clip_frac_exp", number_or_null(rec.clip_frac_exp)},
          {"kl", number_or_null(rec.kl)},
          {"adv_abs_on", number_or_null(rec.adv_abs_on)},
          {"adv_abs_exp", number_or_null(rec.adv_abs_exp)},
          {"skipped", rec.skipped}};
}

}  // namespace tgrl
