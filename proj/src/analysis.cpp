#include "tgrl/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "tgrl/error.hpp"

namespace tgrl {

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void add_into(std::vector<double>& dst, std::span<const double> a, std::span<const double> b) {
  dst.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) dst[k] = a[k] + b[k];
}

}  // namespace

GradientDecomposition decompose_gradient(const Policy& theta, const RolloutGroup& group,
                                         const EnvConfig& env, std::span<const double> advantages,
                                         std::span<const TokenCoefficients> coefficients) {
  if (advantages.size() != group.trajectories.size()) {
    throw ContractError("decompose_gradient: one advantage per trajectory required");
  }
  if (!coefficients.empty() && coefficients.size() != group.trajectories.size()) {
    throw ContractError("decompose_gradient: one coefficient record per trajectory required");
  }
  const auto n_params = theta.params().size();
  const Vocab vocab = env.vocab();
  const int window = theta.arch().layout.window;
  std::vector<double> on_p(n_params, 0.0), on_r(n_params, 0.0);
  std::vector<double> ex_p(n_params, 0.0), ex_r(n_params, 0.0);
  GradientDecomposition out;
  out.outcome.assign(n_params, 0.0);
  std::vector<double> dlogits(static_cast<std::size_t>(vocab.size()));

  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const auto& traj = group.trajectories[i];
    if (traj.spans.length != traj.size()) throw ContractError("decompose_gradient: trajectory spans missing");
    if (!coefficients.empty() && coefficients[i].coef.size() != traj.tokens.size()) {
      throw ContractError("decompose_gradient: coefficient length mismatch");
    }
    auto& perc = traj.is_expert() ? ex_p : on_p;
    auto& reas = traj.is_expert() ? ex_r : on_r;
    for (int t = 0; t < traj.size(); ++t) {
      const auto ut = static_cast<std::size_t>(t);
      const double c = advantages[i] * (coefficients.empty() ? 1.0 : coefficients[i].coef[ut]);
      const auto ctx = make_context(env, group.instance, std::span(traj.tokens).first(ut), window);
      const auto acts = theta.forward(ctx);
      for (std::size_t k = 0; k < dlogits.size(); ++k) dlogits[k] = -c * std::exp(acts.log_probs[k]);
      dlogits[static_cast<std::size_t>(traj.tokens[ut])] += c;
      theta.backward(acts, dlogits, traj.spans.in_perception(t) ? perc : reas);
      theta.backward(acts, dlogits, out.outcome);
    }
  }
  add_into(out.perception, on_p, ex_p);
  add_into(out.reasoning, on_r, ex_r);
  out.perception_norm = norm2(out.perception);
  out.reasoning_norm = norm2(out.reasoning);
  out.on_policy_perception_norm = norm2(on_p);
  out.on_policy_reasoning_norm = norm2(on_r);
  out.expert_perception_norm = norm2(ex_p);
  out.expert_reasoning_norm = norm2(ex_r);
  return out;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

namespace {

EnvConfig gradcheck_env() {
  EnvConfig env;
  env.preset = "custom";
  env.num_cells = 2;
  env.num_symbols = 3;
  env.query_mix = {1.0, 1.0, 1.0};
  env.max_len = 12;
  return env;
}

PolicyArch gradcheck_arch(ArchKind kind, const EnvConfig& env) {
  PolicyArch arch;
  arch.kind = kind;
  arch.layout = env.layout(4);
  arch.hidden = 8;
  arch.table_rows = 32;
  return arch;
}

Policy random_policy(const PolicyArch& arch, Rng& rng, double scale) {
  std::vector<double> p(arch.param_count());
  for (double& x : p) x = scale * (2.0 * uniform01(rng) - 1.0);
  return Policy(arch, std::move(p));
}

Policy perturbed(const Policy& base, Rng& rng, double scale) {
  Policy out = base;
  for (double& x : out.params_mut()) x += scale * (2.0 * uniform01(rng) - 1.0);
  return out;
}

// Random batch of 1-2 groups with 2-4 members. Rewards are re-drawn so that
// advantages and masks vary; each group has at least two distinct rewards.
std::vector<RolloutGroup> random_batch(const Policy& behavior, const EnvConfig& env, Variant variant,
                                       Rng& rng) {
  const int n_groups = 1 + uniform_int(rng, 2);
  std::vector<RolloutGroup> batch;
  for (int g = 0; g < n_groups; ++g) {
    const auto inst = generate_instance(env, rng, static_cast<std::uint64_t>(g));
    const int size = 2 + uniform_int(rng, 3);
    GroupRequest req;
    req.n_off = is_tgrl(variant) ? 1 + uniform_int(rng, std::min(2, size - 1)) : 0;
    req.n_on = size - req.n_off;
    auto group = sample_group(behavior, ExpertSpec{0.3}, env, inst, req, rng());
    for (auto& traj : group.trajectories) traj.reward = uniform01(rng) < 0.5 ? 1 : 0;
    if (group.trajectories[0].reward == group.trajectories[1].reward) {
      group.trajectories[0].reward = 1 - group.trajectories[1].reward;
    }
    group.stats = group_stats(group.rewards());
    batch.push_back(std::move(group));
  }
  return batch;
}

}  // namespace

GradcheckReport gradcheck(Variant variant, ArchKind arch_kind, const GradcheckOptions& options) {
  GradcheckReport report;
  report.variant = variant;
  report.arch = arch_kind;
  const EnvConfig env = gradcheck_env();
  const PolicyArch arch = gradcheck_arch(arch_kind, env);
  ObjectiveConfig config = options.base;
  config.variant = variant;
  Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(variant) * 2 +
                                        (arch_kind == ArchKind::Mlp ? 1 : 0)));

  for (int trial = 0; trial < options.trials; ++trial) {
    const Policy theta = random_policy(arch, rng, options.param_scale);
    const Policy theta_old = perturbed(theta, rng, 0.3 * options.param_scale);
    const Policy ref = random_policy(arch, rng, options.param_scale);
    const auto batch = random_batch(theta_old, env, variant, rng);
    report.groups += static_cast<int>(batch.size());

    const auto base = loss_and_grad(batch, theta, ref, env, config);
    std::vector<std::size_t> candidates;
    for (std::size_t k = 0; k < base.grad.size(); ++k) {
      if (base.grad[k] != 0.0) candidates.push_back(k);
    }
    const int n_check = std::min<int>(options.coords, static_cast<int>(candidates.size()));
    for (int c = 0; c < n_check; ++c) {
      const int j = c + uniform_int(rng, static_cast<int>(candidates.size()) - c);
      std::swap(candidates[static_cast<std::size_t>(c)], candidates[static_cast<std::size_t>(j)]);
      const std::size_t k = candidates[static_cast<std::size_t>(c)];

      Policy probe = theta;
      const double x0 = probe.params()[k];
      probe.params_mut()[k] = x0 + options.step;
      const auto plus = loss_and_grad(batch, probe, ref, env, config);
      probe.params_mut()[k] = x0 - options.step;
      const auto minus = loss_and_grad(batch, probe, ref, env, config);
      if (plus.clip_pattern != base.clip_pattern || minus.clip_pattern != base.clip_pattern) {
        ++report.coords_skipped;
        continue;
      }
      const double fd = (plus.loss - minus.loss) / (2.0 * options.step);
      const double err = relative_error(base.grad[k], fd);
      report.max_rel_error = std::max(report.max_rel_error, err);
      if (std::abs(base.grad[k]) < 1e-5) {
        ++report.coords_small;
      } else {
        report.max_rel_error_resolved = std::max(report.max_rel_error_resolved, err);
      }
      ++report.coords_checked;
    }
  }
  report.passed = report.coords_checked > 0 && report.max_rel_error <= options.tolerance;
  return report;
}

std::vector<GradcheckReport> gradcheck_all(const GradcheckOptions& options) {
  std::vector<GradcheckReport> out;
  for (ArchKind arch : {ArchKind::Tabular, ArchKind::Mlp}) {
    for (Variant v : kAllVariants) out.push_back(gradcheck(v, arch, options));
  }
  return out;
}

bool AblationAxes::empty() const {
  return variant.empty() && filtering.empty() && reweighting.empty() && n_off.empty() && beta.empty();
}

namespace {

std::string format_double(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

template <typename T>
std::vector<std::optional<T>> axis_or_unset(const std::vector<T>& values) {
  if (values.empty()) return {std::nullopt};
  return {values.begin(), values.end()};
}

}  // namespace

std::vector<AblationCell> ablation_cells(const TrainConfig& base, const AblationAxes& axes) {
  std::vector<AblationCell> cells;
  for (const auto& v : axis_or_unset(axes.variant)) {
    for (const auto& f : axis_or_unset(axes.filtering)) {
      for (const auto& r : axis_or_unset(axes.reweighting)) {
        for (const auto& n : axis_or_unset(axes.n_off)) {
          for (const auto& b : axis_or_unset(axes.beta)) {
            AblationCell cell;
            cell.config = base;
            auto& obj = cell.config.objective;
            if (v) {
              obj.variant = *v;
              cell.axis_values["variant"] = to_string(*v);
            }
            if (f) {
              obj.filtering = *f;
              cell.axis_values["filtering"] = *f ? "true" : "false";
            }
            if (r) {
              obj.reweighting = *r;
              cell.axis_values["reweighting"] = *r ? "true" : "false";
            }
            if (n) {
              obj.n_off = *n;
              cell.axis_values["n_off"] = std::to_string(*n);
            }
            if (b) {
              obj.beta = *b;
              cell.axis_values["beta"] = format_double(*b);
            }
            if (!is_tgrl(obj.variant)) obj.n_off = 0;
            std::ostringstream id;
            id << "c" << cells.size();
            cell.id = id.str();
            cells.push_back(std::move(cell));
          }
        }
      }
    }
  }
  return cells;
}

std::vector<AblationRow> ablation_matrix(const TrainConfig& base, const AblationAxes& axes,
                                         std::span<const std::uint64_t> seeds, int workers) {
  const auto cells = ablation_cells(base, axes);
  const std::size_t n_jobs = cells.size() * seeds.size();
  std::vector<AblationRow> rows(n_jobs);
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (std::size_t job = next++; job < n_jobs; job = next++) {
      const auto& cell = cells[job / seeds.size()];
      auto& row = rows[job];
      row.cell_id = cell.id;
      row.axis_values = cell.axis_values;
      row.seed = seeds[job % seeds.size()];
      try {
        TrainConfig cfg = cell.config;
        cfg.seed = row.seed;
        const auto result = train(cfg);
        row.final_accuracy = result.final_accuracy;
        double sum = 0.0;
        double n = 0.0;
        for (const auto& rec : result.history) {
          if (std::isfinite(rec.reward_on)) {
            sum += rec.reward_on;
            n += 1.0;
          }
        }
        row.mean_reward = n > 0.0 ? sum / n : 0.0;
      } catch (const std::exception& e) {
        row.error = e.what();
        row.final_accuracy = std::numeric_limits<double>::quiet_NaN();
        row.mean_reward = std::numeric_limits<double>::quiet_NaN();
      }
    }
  };

  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(n_jobs)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

std::vector<AblationSummary> summarize(std::span<const AblationRow> rows) {
  std::vector<AblationSummary> out;
  for (const auto& row : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.cell_id == row.cell_id; });
    if (it == out.end()) {
      out.push_back({row.cell_id, row.axis_values, 0.0, 0.0, 0, 0});
      it = out.end() - 1;
    }
    if (!row.error.empty()) {
      ++it->failures;
      continue;
    }
    ++it->runs;
    it->mean_accuracy += row.final_accuracy;
    it->std_accuracy += row.final_accuracy * row.final_accuracy;
  }
  for (auto& s : out) {
    if (s.runs == 0) {
      s.mean_accuracy = s.std_accuracy = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    s.mean_accuracy /= s.runs;
    s.std_accuracy = std::sqrt(std::max(0.0, s.std_accuracy / s.runs - s.mean_accuracy * s.mean_accuracy));
  }
  return out;
}

std::string ablation_table(std::span<const AblationRow> rows, char delimiter) {
  static const char* kAxes[] = {"variant", "filtering", "reweighting", "n_off", "beta"};
  std::vector<std::string> used;
  for (const char* axis : kAxes) {
    if (std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return r.axis_values.count(axis) > 0; })) {
      used.emplace_back(axis);
    }
  }
  std::ostringstream os;
  os.precision(17);
  os << "cell_id";
  for (const auto& a : used) os << delimiter << a;
  os << delimiter << "seed" << delimiter << "final_accuracy" << delimiter << "mean_reward" << delimiter
     << "error\n";
  for (const auto& r : rows) {
    os << r.cell_id;
    for (const auto& a : used) {
      const auto it = r.axis_values.find(a);
      os << delimiter << (it == r.axis_values.end() ? "" : it->second);
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), delimiter, ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << delimiter << r.seed << delimiter << r.final_accuracy << delimiter << r.mean_reward << delimiter
       << err << "\n";
  }
  return os.str();
}

}  // namespace tgrl
