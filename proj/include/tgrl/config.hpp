#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tgrl/analysis.hpp"
#include "tgrl/trainer.hpp"

namespace tgrl {

// Everything a CLI run needs. JSON layout (every key optional, unknown keys
// rejected at every level):
//   env        {preset, num_cells, num_symbols, query_mix, max_len}
//   policy     {arch, hidden, window, table_rows}
//   objective  {variant, clip_eps, clip_eps_low, clip_eps_high, kl_coef, beta,
//               perception_lambda, eps_std, filtering, reweighting,
//               dynamic_sampling, detach_weight, n_on, n_off}
//   expert     {kind, eta, checkpoint, cache, pool_size}
//   train      {batch_size, lr, optimizer, updates_per_snapshot, steps,
//               eval_every, eval_size}
//   ablation   {variant, filtering, reweighting, n_off, beta, workers}
//   gradcheck  {trials, coords, step, tolerance, param_scale, seed}
//   output_dir, seeds
// With preset standard or needle the env fields are fixed by the preset and
// may only be restated with the same values. beta, lr and dynamic_sampling
// accept null for the variant/architecture default.
struct ExperimentConfig {
  TrainConfig train;  // train.seed is ignored; see `seeds`
  AblationAxes ablation;
  int ablation_workers = 1;
  GradcheckOptions gradcheck;
  std::string output_dir = "runs/default";
  std::vector<std::uint64_t> seeds = {0};

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);

// Applies `path=value` to a raw config document. The value is parsed as JSON
// when possible, otherwise taken as a string. `seed=N` is shorthand for
// `seeds=[N]`.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Reads a config file, applies overrides in order, parses and validates.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// TrainConfig for one entry of `seeds`.
TrainConfig train_config_for(const ExperimentConfig& config, std::uint64_t seed);

// output_dir, placed under $TGRL_OUTPUT_ROOT when that is set and output_dir is relative.
std::filesystem::path output_path(const ExperimentConfig& config);

}  // namespace tgrl
