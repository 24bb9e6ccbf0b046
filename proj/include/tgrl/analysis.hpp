#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tgrl/objective.hpp"
#include "tgrl/policy.hpp"
#include "tgrl/rollout.hpp"
#include "tgrl/trainer.hpp"

namespace tgrl {

// Stage-wise split of the weighted score gradient
//   sum_i sum_t c_{i,t} grad log pi_theta(o_{i,t} | o_{i,<t})
// at each trajectory's SEP boundary. `outcome` is the same sum computed over
// whole trajectories without splitting.
struct GradientDecomposition {
  std::vector<double> perception;
  std::vector<double> reasoning;
  std::vector<double> outcome;
  double perception_norm = 0.0;
  double reasoning_norm = 0.0;
  // Norms of the stage parts restricted to each origin.
  double on_policy_perception_norm = 0.0;
  double on_policy_reasoning_norm = 0.0;
  double expert_perception_norm = 0.0;
  double expert_reasoning_norm = 0.0;
};

// Token weight c_{i,t} = advantages[i] * coefficients[i].coef[t]. An empty
// `coefficients` span means unit coefficients.
GradientDecomposition decompose_gradient(const Policy& theta, const RolloutGroup& group,
                                         const EnvConfig& env, std::span<const double> advantages,
                                         std::span<const TokenCoefficients> coefficients = {});

double relative_error(double a, double b);

struct GradcheckOptions {
  int trials = 50;         // random batches per variant/architecture
  int coords = 20;         // checked coordinates per trial
  double step = 1e-5;      // central-difference step
  double tolerance = 1e-6;
  double param_scale = 0.5;  // theta, ref ~ U(-scale, scale); theta_old = theta + U(-0.3 scale, 0.3 scale)
  std::uint64_t seed = 0;
  ObjectiveConfig base;    // hyperparameters shared by every variant
};

struct GradcheckReport {
  Variant variant = Variant::Grpo;
  ArchKind arch = ArchKind::Tabular;
  double max_rel_error = 0.0;
  int coords_checked = 0;
  // Coordinates whose stencil crossed a clip boundary (non-differentiable).
  int coords_skipped = 0;
  int groups = 0;
  // Coordinates whose analytic gradient is below 1e-5 in magnitude, where the
  // roundoff of a 64-bit central difference alone can exceed the tolerance.
  int coords_small = 0;
  double max_rel_error_resolved = 0.0;  // over the remaining coordinates
  bool passed = false;
};

// Compares loss_and_grad against central finite differences on random small
// groups (<= 4 trajectories of <= 12 tokens).
GradcheckReport gradcheck(Variant variant, ArchKind arch, const GradcheckOptions& options);
std::vector<GradcheckReport> gradcheck_all(const GradcheckOptions& options);

// Axes left empty are not varied.
struct AblationAxes {
  std::vector<Variant> variant;
  std::vector<bool> filtering;
  std::vector<bool> reweighting;
  std::vector<int> n_off;
  std::vector<double> beta;

  bool empty() const;
};

struct AblationCell {
  std::string id;
  std::map<std::string, std::string> axis_values;
  TrainConfig config;  // seed not yet set
};

struct AblationRow {
  std::string cell_id;
  std::map<std::string, std::string> axis_values;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double mean_reward = 0.0;
  std::string error;  // non-empty when the cell's run failed
};

struct AblationSummary {
  std::string cell_id;
  std::map<std::string, std::string> axis_values;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  int runs = 0;
  int failures = 0;
};

// Cartesian product of the axes. Baseline variants always get n_off = 0.
std::vector<AblationCell> ablation_cells(const TrainConfig& base, const AblationAxes& axes);

// Runs every cell for every seed. Rows come back in (cell, seed) order
// regardless of `workers`. A failing run is recorded in its row and the
// remaining cells still run.
std::vector<AblationRow> ablation_matrix(const TrainConfig& base, const AblationAxes& axes,
                                         std::span<const std::uint64_t> seeds, int workers = 1);

std::vector<AblationSummary> summarize(std::span<const AblationRow> rows);

// Delimited table: cell_id, one column per axis, seed, final_accuracy, mean_reward, error.
std::string ablation_table(std::span<const AblationRow> rows, char delimiter = ',');

}  // namespace tgrl
