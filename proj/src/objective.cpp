#include "tgrl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tgrl/error.hpp"

namespace tgrl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double mean_or_nan(double sum, double count) { return count > 0.0 ? sum / count : kNaN; }

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Grpo: return "grpo";
    case Variant::Dapo: return "dapo";
    case Variant::Perception: return "perception";
    case Variant::TgrlGrpo: return "tgrl_grpo";
    case Variant::TgrlDapo: return "tgrl_dapo";
  }
  return "?";
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name + "' (expected grpo|dapo|perception|tgrl_grpo|tgrl_dapo)",
                    "objective.variant");
}

bool is_dapo_family(Variant v) { return v == Variant::Dapo || v == Variant::TgrlDapo; }
bool is_tgrl(Variant v) { return v == Variant::TgrlGrpo || v == Variant::TgrlDapo; }

double ObjectiveConfig::beta_value() const {
  if (beta) return *beta;
  return is_dapo_family(variant) ? 14.0 : 5.0;
}

bool ObjectiveConfig::dynamic_sampling_on() const {
  if (dynamic_sampling) return *dynamic_sampling;
  return is_dapo_family(variant);
}

std::pair<double, double> ObjectiveConfig::clip_bounds() const {
  if (is_dapo_family(variant)) return {1.0 - clip_eps_low, 1.0 + clip_eps_high};
  return {1.0 - clip_eps, 1.0 + clip_eps};
}

ObjectiveConfig ObjectiveConfig::resolved() const {
  ObjectiveConfig out = *this;
  out.beta = beta_value();
  out.dynamic_sampling = dynamic_sampling_on();
  return out;
}

void ObjectiveConfig::validate() const {
  auto positive = [](double x, const char* key) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError("must be finite and > 0", key);
  };
  positive(clip_eps, "objective.clip_eps");
  positive(clip_eps_low, "objective.clip_eps_low");
  positive(clip_eps_high, "objective.clip_eps_high");
  positive(eps_std, "objective.eps_std");
  if (!(kl_coef >= 0.0) || !std::isfinite(kl_coef)) throw ConfigError("must be finite and >= 0", "objective.kl_coef");
  if (!(beta_value() >= 0.0) || !std::isfinite(beta_value())) throw ConfigError("must be finite and >= 0", "objective.beta");
  if (!(perception_lambda >= 0.0) || !std::isfinite(perception_lambda)) {
    throw ConfigError("must be finite and >= 0", "objective.perception_lambda");
  }
  if (n_on < 0) throw ConfigError("must be >= 0", "objective.n_on");
  if (n_off < 0) throw ConfigError("must be >= 0", "objective.n_off");
  if (n_on + n_off < 2) throw ConfigError("group size n_on + n_off must be >= 2", "objective.n_on");
  if (!is_tgrl(variant) && n_off != 0) {
    throw ConfigError("baseline variant '" + to_string(variant) + "' requires n_off = 0", "objective.n_off");
  }
}

std::vector<double> advantages(std::span<const double> rewards, double eps_std) {
  const auto stats = group_stats(rewards);
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i] - stats.mean) / (stats.std + eps_std);
  }
  return out;
}

double expert_ratio(std::span<const double> logp_theta, std::span<const double> logp_expert,
                    std::size_t t) {
  if (t >= logp_theta.size() || t >= logp_expert.size()) throw ContractError("expert_ratio: index out of range");
  return std::exp(logp_theta[t] - logp_expert[t]);
}

TokenWeights token_weights(std::span<const double> logp_theta, std::span<const double> logp_expert,
                           double beta, double eps_std) {
  if (logp_theta.size() != logp_expert.size() || logp_theta.empty()) {
    throw ContractError("token_weights: records must have equal non-zero length");
  }
  const std::size_t n = logp_theta.size();
  TokenWeights tw;
  tw.delta.resize(n);
  for (std::size_t t = 0; t < n; ++t) tw.delta[t] = logp_expert[t] - logp_theta[t];
  const auto stats = group_stats(tw.delta);
  tw.delta_mean = stats.mean;
  tw.delta_std = stats.std;
  tw.delta_norm.resize(n);
  tw.w.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    tw.delta_norm[t] = (tw.delta[t] - stats.mean) / (stats.std + eps_std);
    tw.w[t] = sigmoid(beta * tw.delta_norm[t]);
  }
  return tw;
}

int expert_mask(const Trajectory& traj) {
  if (!traj.is_expert()) throw ContractError("expert_mask called on an on-policy trajectory");
  return traj.reward == 1 ? 1 : 0;
}

TokenCoefficients unified_coefficients(const Trajectory& traj, std::span<const double> logp_theta,
                                       const ObjectiveConfig& config) {
  const auto n = traj.tokens.size();
  if (logp_theta.size() != n || traj.logp_behavior.size() != n) {
    throw ContractError("unified_coefficients: missing or mismatched log-prob records");
  }
  TokenCoefficients c;
  c.origin = traj.origin;
  c.coef.resize(n);
  c.clipped.assign(n, false);
  if (!traj.is_expert()) {
    for (std::size_t t = 0; t < n; ++t) c.coef[t] = std::exp(logp_theta[t] - traj.logp_behavior[t]);
    return c;
  }
  c.mask = config.filtering ? expert_mask(traj) : 1;
  c.rho.resize(n);
  for (std::size_t t = 0; t < n; ++t) c.rho[t] = expert_ratio(logp_theta, traj.logp_behavior, t);
  if (config.reweighting) {
    auto tw = token_weights(logp_theta, traj.logp_behavior, config.beta_value(), config.eps_std);
    c.delta = std::move(tw.delta);
    c.delta_norm = std::move(tw.delta_norm);
    c.w = std::move(tw.w);
  } else {
    c.delta.resize(n);
    for (std::size_t t = 0; t < n; ++t) c.delta[t] = traj.logp_behavior[t] - logp_theta[t];
    c.delta_norm.assign(n, 0.0);
    c.w.assign(n, 1.0);
  }
  for (std::size_t t = 0; t < n; ++t) c.coef[t] = static_cast<double>(c.mask) * c.rho[t] * c.w[t];
  return c;
}

std::vector<TokenCoefficients> unified_coefficients(const RolloutGroup& group, const Policy& theta,
                                                    const EnvConfig& env,
                                                    const ObjectiveConfig& config) {
  std::vector<TokenCoefficients> out;
  out.reserve(group.trajectories.size());
  for (const auto& traj : group.trajectories) {
    const auto lp = score_under(theta, env, group.instance, traj.tokens);
    out.push_back(unified_coefficients(traj, lp, config));
  }
  return out;
}

bool is_clipped(double ratio, double advantage, double lo, double hi) {
  return (advantage > 0.0 && ratio > hi) || (advantage < 0.0 && ratio < lo);
}

void mark_clipped(TokenCoefficients& coeffs, double advantage, std::pair<double, double> bounds) {
  coeffs.clipped.resize(coeffs.coef.size());
  for (std::size_t t = 0; t < coeffs.coef.size(); ++t) {
    coeffs.clipped[t] = is_clipped(coeffs.coef[t], advantage, bounds.first, bounds.second);
  }
}

std::vector<double> shaped_rewards(const RolloutGroup& group, const EnvConfig& env,
                                   const ObjectiveConfig& config) {
  auto rewards = group.rewards();
  if (config.variant == Variant::Perception) {
    const Vocab vocab = env.vocab();
    for (std::size_t i = 0; i < rewards.size(); ++i) {
      rewards[i] += config.perception_lambda *
                    perception_reward(group.trajectories[i].tokens, group.instance, vocab);
    }
  }
  return rewards;
}

namespace {

// Backpropagates dL/dw through w_t = sigmoid(beta * (delta_t - mean) / (std + eps))
// and delta_t = logp_expert_t - logp_theta_t; accumulates into dlogp.
void backprop_token_weights(const TokenCoefficients& c, std::span<const double> dw, double beta,
                            double eps_std, std::span<double> dlogp) {
  const std::size_t n = c.w.size();
  const auto stats = group_stats(c.delta);
  const double denom = stats.std + eps_std;
  std::vector<double> a(n);
  double a_mean = 0.0;
  double a_dot = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    a[t] = dw[t] * c.w[t] * (1.0 - c.w[t]) * beta;
    a_mean += a[t];
    a_dot += a[t] * (c.delta[t] - stats.mean);
  }
  a_mean /= static_cast<double>(n);
  for (std::size_t u = 0; u < n; ++u) {
    double ddelta = (a[u] - a_mean) / denom;
    if (stats.std > 0.0) {
      ddelta -= a_dot / (denom * denom) * (c.delta[u] - stats.mean) /
                (static_cast<double>(n) * stats.std);
    }
    dlogp[u] -= ddelta;  // d(delta)/d(logp_theta) = -1
  }
}

struct Accumulators {
  double reward_on = 0, n_on = 0, reward_exp = 0, n_exp = 0;
  double adv_on = 0, adv_n_on = 0, adv_exp = 0, adv_n_exp = 0;
  double w_sum = 0, w_n = 0, mask_sum = 0;
  double clip_on = 0, tok_on = 0, clip_exp = 0, tok_exp = 0;
  double kl_sum = 0, kl_n = 0;
};

}  // namespace

LossResult loss_and_grad(std::span<const RolloutGroup> groups, const Policy& theta,
                         const Policy& ref, const EnvConfig& env, const ObjectiveConfig& config,
                         const LossOptions& options) {
  if (!(theta.arch() == ref.arch())) throw InputError("loss_and_grad: theta/ref architecture mismatch");
  const Vocab vocab = env.vocab();
  if (theta.vocab_size() != vocab.size()) throw InputError("loss_and_grad: vocabulary mismatch");

  LossResult result;
  result.grad.assign(theta.params().size(), 0.0);
  Accumulators acc;
  result.metrics.groups_total = static_cast<int>(groups.size());

  // Reward metrics cover every sampled group, before dynamic sampling.
  std::vector<std::size_t> kept;
  std::vector<std::vector<double>> group_rewards(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    if (group.size() < 2) throw ContractError("rollout group must have at least 2 members");
    for (const auto& traj : group.trajectories) {
      if (traj.tokens.empty()) throw ContractError("empty trajectory");
      if (!is_tgrl(config.variant) && traj.is_expert()) {
        throw ContractError("baseline variant received an expert trajectory");
      }
      if (traj.is_expert()) {
        acc.reward_exp += traj.reward;
        acc.n_exp += 1;
        acc.mask_sum += traj.reward == 1 ? 1 : 0;
      } else {
        acc.reward_on += traj.reward;
        acc.n_on += 1;
      }
    }
    group_rewards[g] = shaped_rewards(group, env, config);
    const auto& r = group_rewards[g];
    const bool flat = std::all_of(r.begin(), r.end(), [&](double x) { return x == r.front(); });
    if (!(config.dynamic_sampling_on() && flat)) kept.push_back(g);
  }
  auto& m = result.metrics;
  m.reward_on = mean_or_nan(acc.reward_on, acc.n_on);
  m.reward_exp = mean_or_nan(acc.reward_exp, acc.n_exp);
  m.mask_rate = mean_or_nan(acc.mask_sum, acc.n_exp);
  m.groups_kept = static_cast<int>(kept.size());

  if (kept.empty()) {
    result.skipped = true;
    m.skipped_batches = 1;
    m.loss = 0.0;
    m.adv_abs_on = m.adv_abs_exp = m.mean_w = m.clip_frac_on = m.clip_frac_exp = m.kl = kNaN;
    return result;
  }

  const bool dapo = is_dapo_family(config.variant);
  const bool use_kl = !dapo && config.kl_coef > 0.0;
  const auto bounds = config.clip_bounds();
  const double beta = config.beta_value();
  const int window = theta.arch().layout.window;
  const auto vsize = static_cast<std::size_t>(vocab.size());

  double total_tokens = 0.0;
  for (std::size_t g : kept) {
    for (const auto& traj : groups[g].trajectories) total_tokens += static_cast<double>(traj.size());
  }

  double objective = 0.0;
  double kl_total = 0.0;
  std::vector<double> dlogits(vsize);
  std::vector<double> kl_dlogits(vsize);

  for (std::size_t g : kept) {
    const auto& group = groups[g];
    const auto adv = advantages(group_rewards[g], config.eps_std);
    const double group_size = static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const auto& traj = group.trajectories[i];
      const auto n = traj.tokens.size();
      const auto contexts = trajectory_contexts(env, group.instance, traj.tokens, window);
      std::vector<Activations> acts;
      acts.reserve(n);
      std::vector<double> logp(n);
      for (std::size_t t = 0; t < n; ++t) {
        acts.push_back(theta.forward(contexts[t]));
        logp[t] = acts.back().log_probs[static_cast<std::size_t>(traj.tokens[t])];
      }
      auto coeffs = unified_coefficients(traj, logp, config);
      mark_clipped(coeffs, adv[i], bounds);

      const double norm = dapo ? 1.0 / total_tokens
                               : 1.0 / (static_cast<double>(kept.size()) * group_size * static_cast<double>(n));
      const bool drop = options.drop_terms && options.drop_terms(g, i);

      // dL/d(logp_theta[t]) for every token of this trajectory.
      std::vector<double> dlogp(n, 0.0);
      std::vector<double> dw(n, 0.0);
      for (std::size_t t = 0; t < n; ++t) {
        const double r = coeffs.coef[t];
        const double clipped_r = std::clamp(r, bounds.first, bounds.second);
        const double term = std::min(r * adv[i], clipped_r * adv[i]);
        const bool clipped = coeffs.clipped[t];
        if (traj.is_expert()) {
          acc.clip_exp += clipped ? 1 : 0;
          acc.tok_exp += 1;
          acc.w_sum += coeffs.w[t];
          acc.w_n += 1;
        } else {
          acc.clip_on += clipped ? 1 : 0;
          acc.tok_on += 1;
        }
        if (drop) continue;
        result.clip_pattern.push_back(clipped ? 1 : 0);
        objective += norm * term;
        if (clipped || adv[i] == 0.0) continue;
        const double dr = -norm * adv[i];  // dL/dr~
        if (!traj.is_expert()) {
          dlogp[t] += dr * r;
        } else if (coeffs.mask != 0) {
          dlogp[t] += dr * r;  // through rho
          dw[t] = dr * coeffs.mask * coeffs.rho[t];
        }
      }
      if (traj.is_expert() && config.reweighting && !config.detach_weight && coeffs.mask != 0 && !drop) {
        backprop_token_weights(coeffs, dw, beta, config.eps_std, dlogp);
      }

      std::vector<double> ref_logp;
      for (std::size_t t = 0; t < n; ++t) {
        const auto& lp = acts[t].log_probs;
        for (std::size_t k = 0; k < vsize; ++k) dlogits[k] = -dlogp[t] * std::exp(lp[k]);
        dlogits[static_cast<std::size_t>(traj.tokens[t])] += dlogp[t];
        const auto ref_lp = ref.log_probs(contexts[t]);
        if (use_kl) {
          const double kl = categorical_kl(lp, ref_lp, kl_dlogits);
          kl_total += kl;
          const double scale = config.kl_coef / total_tokens;
          for (std::size_t k = 0; k < vsize; ++k) dlogits[k] += scale * kl_dlogits[k];
        } else {
          kl_total += categorical_kl(lp, ref_lp);
        }
        theta.backward(acts[t], dlogits, result.grad);
      }

      const double abs_adv = std::abs(adv[i]);
      if (traj.is_expert()) {
        acc.adv_exp += abs_adv;
        acc.adv_n_exp += 1;
      } else {
        acc.adv_on += abs_adv;
        acc.adv_n_on += 1;
      }
    }
  }

  const double kl_mean = kl_total / total_tokens;
  if (use_kl) objective -= config.kl_coef * kl_mean;
  result.loss = -objective;
  m.loss = result.loss;
  m.kl = kl_mean;
  m.adv_abs_on = mean_or_nan(acc.adv_on, acc.adv_n_on);
  m.adv_abs_exp = mean_or_nan(acc.adv_exp, acc.adv_n_exp);
  m.mean_w = mean_or_nan(acc.w_sum, acc.w_n);
  m.clip_frac_on = mean_or_nan(acc.clip_on, acc.tok_on);
  m.clip_frac_exp = mean_or_nan(acc.clip_exp, acc.tok_exp);
  return result;
}

}  // namespace tgrl
