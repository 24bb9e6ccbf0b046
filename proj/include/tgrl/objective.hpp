#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tgrl/env.hpp"
#include "tgrl/policy.hpp"
#include "tgrl/rollout.hpp"

namespace tgrl {

enum class Variant { Grpo, Dapo, Perception, TgrlGrpo, TgrlDapo };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);
inline constexpr Variant kAllVariants[] = {Variant::Grpo, Variant::Dapo, Variant::Perception,
                                           Variant::TgrlGrpo, Variant::TgrlDapo};

// DAPO family: decoupled clip bounds, token-level normalization, no KL.
bool is_dapo_family(Variant v);
bool is_tgrl(Variant v);

struct ObjectiveConfig {
  Variant variant = Variant::TgrlGrpo;
  double clip_eps = 0.2;
  double clip_eps_low = 0.2;
  double clip_eps_high = 0.28;
  double kl_coef = 0.01;
  // Token reweighting sensitivity; unset means 5 on a GRPO base, 14 on DAPO.
  std::optional<double> beta;
  double perception_lambda = 0.5;
  double eps_std = 1e-6;
  bool filtering = true;
  bool reweighting = true;
  // Unset means on for the DAPO family, off otherwise.
  std::optional<bool> dynamic_sampling;
  // Treat the token weight w as a constant instead of a function of theta.
  bool detach_weight = false;
  int n_on = 7;
  int n_off = 1;

  double beta_value() const;
  bool dynamic_sampling_on() const;
  std::pair<double, double> clip_bounds() const;
  // Copy with every optional filled in.
  ObjectiveConfig resolved() const;
  void validate() const;
};

// (R_i - mean) / (std + eps_std) over the joint group, population std.
std::vector<double> advantages(std::span<const double> rewards, double eps_std);

// exp(logp_theta[t] - logp_expert[t]).
double expert_ratio(std::span<const double> logp_theta, std::span<const double> logp_expert,
                    std::size_t t);

struct TokenWeights {
  std::vector<double> delta;       // logp_expert - logp_theta
  std::vector<double> delta_norm;  // standardized within the trajectory
  std::vector<double> w;           // sigmoid(beta * delta_norm)
  double delta_mean = 0.0;
  double delta_std = 0.0;
};

TokenWeights token_weights(std::span<const double> logp_theta, std::span<const double> logp_expert,
                           double beta, double eps_std);

// 1 iff the expert trajectory verified correct. On-policy input is a contract error.
int expert_mask(const Trajectory& traj);

// Per-token unified coefficient and the factors it was built from.
struct TokenCoefficients {
  Origin origin = Origin::OnPolicy;
  std::vector<double> coef;        // r~
  std::vector<double> rho;         // expert only
  std::vector<double> delta;       // expert only
  std::vector<double> delta_norm;  // expert only
  std::vector<double> w;           // expert only
  int mask = 1;
  std::vector<bool> clipped;       // filled by mark_clipped()
};

// On-policy: r~ = exp(logp_theta - logp_old). Expert: r~ = m * rho * w with
// w = 1 when reweighting is off and m = 1 when filtering is off.
TokenCoefficients unified_coefficients(const Trajectory& traj, std::span<const double> logp_theta,
                                       const ObjectiveConfig& config);

std::vector<TokenCoefficients> unified_coefficients(const RolloutGroup& group, const Policy& theta,
                                                    const EnvConfig& env,
                                                    const ObjectiveConfig& config);

// True when the clipped branch of min(r A, clip(r) A) is selected, which
// zeroes the token's gradient.
bool is_clipped(double ratio, double advantage, double lo, double hi);
void mark_clipped(TokenCoefficients& coeffs, double advantage, std::pair<double, double> bounds);

// Rewards fed into group normalization: verifier reward, plus lambda times
// the perception reward for the perception-augmented variant.
std::vector<double> shaped_rewards(const RolloutGroup& group, const EnvConfig& env,
                                   const ObjectiveConfig& config);

// NaN marks a metric that is undefined for the batch (e.g. no expert members).
struct BatchMetrics {
  double loss = 0.0;
  double reward_on = 0.0;
  double reward_exp = 0.0;
  double adv_abs_on = 0.0;
  double adv_abs_exp = 0.0;
  double mean_w = 0.0;
  double mask_rate = 0.0;
  double clip_frac_on = 0.0;
  double clip_frac_exp = 0.0;
  double kl = 0.0;
  int groups_total = 0;
  int groups_kept = 0;
  int skipped_batches = 0;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;
  BatchMetrics metrics;
  bool skipped = false;
  // One entry per surrogate token term, 1 where the clip branch was taken.
  std::vector<std::uint8_t> clip_pattern;
};

struct LossOptions {
  // Returns true for (group, trajectory) pairs whose surrogate token terms
  // are removed from the loss. Normalizers and group statistics are kept.
  std::function<bool(std::size_t, std::size_t)> drop_terms;
};

// Negated surrogate objective of the configured variant and its exact
// gradient with respect to theta's parameters. On-policy behavior
// log-probabilities come from the trajectories; `ref` anchors the KL term.
// When dynamic sampling removes every group the result has skipped = true,
// zero loss and a zero gradient.
LossResult loss_and_grad(std::span<const RolloutGroup> groups, const Policy& theta,
                         const Policy& ref, const EnvConfig& env, const ObjectiveConfig& config,
                         const LossOptions& options = {});

}  // namespace tgrl
