#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "tgrl/analysis.hpp"

using namespace tgrl;
using namespace tgrl::testing;

namespace {

RolloutGroup group_for(const EnvConfig& env, const Policy& p, std::uint64_t seed) {
  Rng rng(seed);
  const auto inst = generate_instance(env, rng);
  return sample_group(p, ExpertSpec{0.2}, env, inst, GroupRequest{3, 1}, seed);
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.env = EnvConfig::standard();
  c.objective.n_on = 3;
  c.objective.n_off = 1;
  c.expert.eta = 0.05;
  c.steps = 4;
  c.eval_every = 4;
  c.eval_size = 16;
  return c;
}

}  // namespace

TEST_CASE("perception and reasoning parts sum to the outcome gradient") {
  const EnvConfig env = EnvConfig::standard();
  for (ArchKind kind : {ArchKind::Tabular, ArchKind::Mlp}) {
    const Policy p = random_policy(arch_for(env, kind, 16, 512), 2, 0.5);
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto g = group_for(env, p, s);
      const std::vector<double> adv = {0.5, -1.0, 0.25, 2.0};
      const auto d = decompose_gradient(p, g, env, adv);
      for (std::size_t k = 0; k < d.outcome.size(); ++k) {
        CHECK(std::abs(d.perception[k] + d.reasoning[k] - d.outcome[k]) <= 1e-10);
      }
      // Independent oracle: the same weighted sum built from grad_log_prob.
      std::vector<double> oracle(d.outcome.size(), 0.0);
      for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
        const auto& tr = g.trajectories[i];
        for (int t = 0; t < tr.size(); ++t) {
          const auto ctx = make_context(env, g.instance, std::span(tr.tokens).first(static_cast<std::size_t>(t)), 4);
          const auto gl = p.grad_log_prob(ctx, tr.tokens[static_cast<std::size_t>(t)]);
          for (std::size_t k = 0; k < gl.size(); ++k) oracle[k] += adv[i] * gl[k];
        }
      }
      for (std::size_t k = 0; k < oracle.size(); ++k) CHECK(std::abs(oracle[k] - d.outcome[k]) <= 1e-10);
    }
  }
}

TEST_CASE("stage log-probabilities add up to the trajectory log-probability") {
  const EnvConfig env = EnvConfig::standard();
  const Policy p = random_policy(arch_for(env, ArchKind::Mlp), 4, 0.5);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto g = group_for(env, p, s);
    for (const auto& tr : g.trajectories) {
      const auto lp = score_under(p, env, g.instance, tr.tokens);
      double perc = 0.0, reas = 0.0, whole = 0.0;
      for (int t = 0; t < tr.size(); ++t) {
        (tr.spans.in_perception(t) ? perc : reas) += lp[static_cast<std::size_t>(t)];
      }
      for (double x : lp) whole += x;
      CHECK(perc + reas == doctest::Approx(whole).epsilon(1e-15));
    }
  }
}

TEST_CASE("a trajectory cut at SEP has no reasoning gradient") {
  const EnvConfig env = small_env(2, 3, 12);
  const Vocab v = env.vocab();
  const Policy p = random_policy(arch_for(env, ArchKind::Mlp), 4, 0.5);
  Rng rng(1);
  RolloutGroup g;
  g.instance = generate_instance(env, rng);
  g.trajectories = {make_traj({0, 1, v.sep()}, p, Origin::OnPolicy, env, g.instance),
                    make_traj({2, 2}, p, Origin::OnPolicy, env, g.instance)};
  const auto d = decompose_gradient(p, g, env, std::vector<double>{1.0, -1.0});
  for (double x : d.reasoning) CHECK(x == 0.0);
  CHECK(d.reasoning_norm == 0.0);
  CHECK(d.perception_norm > 0.0);
}

TEST_CASE("tabular perception gradient lives only in perception rows") {
  const EnvConfig env = EnvConfig::standard();
  const PolicyArch arch = arch_for(env, ArchKind::Tabular, 8, 4096);
  const Policy p = random_policy(arch, 7, 0.5);
  const auto g = group_for(env, p, 3);
  std::set<std::size_t> rows;
  for (const auto& tr : g.trajectories) {
    for (int t = 0; t < tr.spans.perception_end(); ++t) {
      rows.insert(p.tabular_row(make_context(env, g.instance, std::span(tr.tokens).first(static_cast<std::size_t>(t)), 4)));
    }
  }
  const auto d = decompose_gradient(p, g, env, std::vector<double>{1.0, -0.5, 0.3, 0.7});
  const auto v = static_cast<std::size_t>(arch.vocab_size());
  for (std::size_t k = 0; k < d.perception.size(); ++k) {
    if (!rows.count(k / v)) CHECK(d.perception[k] == 0.0);
  }
}

TEST_CASE("coefficients scale the decomposition per token") {
  const EnvConfig env = EnvConfig::standard();
  const Policy p = random_policy(arch_for(env, ArchKind::Mlp), 4, 0.5);
  const auto g = group_for(env, p, 2);
  ObjectiveConfig c;
  const auto coeffs = unified_coefficients(g, p, env, c);
  const std::vector<double> adv = {1.0, 1.0, 1.0, 1.0};
  const auto plain = decompose_gradient(p, g, env, adv);
  std::vector<TokenCoefficients> doubled = coeffs;
  for (auto& co : doubled) {
    for (auto& x : co.coef) x = 2.0;
  }
  const auto twice = decompose_gradient(p, g, env, adv, doubled);
  for (std::size_t k = 0; k < plain.outcome.size(); ++k) {
    CHECK(twice.outcome[k] == doctest::Approx(2.0 * plain.outcome[k]).epsilon(1e-12));
  }
}

TEST_CASE("relative error definition") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
  CHECK(relative_error(0.0, 1e-10) == doctest::Approx(1e-2));
}

TEST_CASE("gradient check on resolvable coordinates") {
  GradcheckOptions o;
  o.trials = 8;
  for (const auto& r : gradcheck_all(o)) {
    CAPTURE(to_string(r.variant));
    CAPTURE(to_string(r.arch));
    CHECK(r.coords_checked > 0);
    CHECK(r.groups >= 8);
    CHECK(r.max_rel_error_resolved <= 1e-6);
  }
}

TEST_CASE("ablation cells form the cartesian product") {
  AblationAxes axes;
  axes.variant = {Variant::Grpo, Variant::TgrlGrpo};
  axes.filtering = {true, false};
  axes.n_off = {1, 2};
  const auto cells = ablation_cells(tiny_train(), axes);
  REQUIRE(cells.size() == 8u);
  std::set<std::string> ids;
  for (const auto& c : cells) {
    ids.insert(c.id);
    CHECK(c.axis_values.size() == 3u);
    if (!is_tgrl(c.config.objective.variant)) CHECK(c.config.objective.n_off == 0);
  }
  CHECK(ids.size() == 8u);
  CHECK(ablation_cells(tiny_train(), AblationAxes{}).size() == 1u);
}

TEST_CASE("ablation runs are deterministic and failures stay local") {
  AblationAxes axes;
  axes.beta = {2.0, -1.0};
  const std::vector<std::uint64_t> seeds = {1, 2};
  const auto a = ablation_matrix(tiny_train(), axes, seeds, 1);
  const auto b = ablation_matrix(tiny_train(), axes, seeds, 2);
  REQUIRE(a.size() == 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].cell_id == b[i].cell_id);
    CHECK(a[i].seed == b[i].seed);
    CHECK(a[i].error == b[i].error);
    if (a[i].error.empty()) {
      CHECK(a[i].final_accuracy == b[i].final_accuracy);
      CHECK(a[i].mean_reward == b[i].mean_reward);
    }
  }
  CHECK(a[0].error.empty());
  CHECK(a[1].error.empty());
  CHECK(a[2].error.find("objective.beta") != std::string::npos);
  const auto summary = summarize(a);
  REQUIRE(summary.size() == 2u);
  CHECK(summary[0].runs == 2);
  CHECK(summary[1].failures == 2);

  const auto table = ablation_table(a);
  CHECK(table.rfind("cell_id,beta,seed,final_accuracy,mean_reward,error\n", 0) == 0);
}
