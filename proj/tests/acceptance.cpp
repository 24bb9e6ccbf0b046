// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "tgrl/analysis.hpp"
#include "tgrl/config.hpp"
#include "tgrl/objective.hpp"
#include "tgrl/trainer.hpp"

using namespace tgrl;
using namespace tgrl::testing;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s %2d %s: %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

void info(const std::string& line) {
  std::printf("     %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Every run-level experiment starts from the shipped configuration files.
TrainConfig from_file(const std::string& name, std::uint64_t seed) {
  return train_config_for(load_config(std::string(TGRL_CONFIG_DIR) + "/" + name, {}), seed);
}

RolloutGroup random_group(const EnvConfig& env, const Policy& behavior, int n_on, int n_off, double eta,
                          std::uint64_t seed) {
  Rng rng(seed);
  const auto inst = generate_instance(env, rng);
  return sample_group(behavior, ExpertSpec{eta}, env, inst, GroupRequest{n_on, n_off}, seed);
}

void criterion_gradcheck() {
  GradcheckOptions o;  // 50 trials x 20 coordinates, h = 1e-5, tolerance 1e-6
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = gradcheck_all(o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool all = true;
  double worst = 0.0;
  double worst_resolved = 0.0;
  int checked = 0;
  int small = 0;
  for (const auto& r : reports) {
    all = all && r.passed;
    worst = std::max(worst, r.max_rel_error);
    worst_resolved = std::max(worst_resolved, r.max_rel_error_resolved);
    checked += r.coords_checked;
    small += r.coords_small;
    char line[200];
    std::snprintf(line, sizeof line, "%-10s %-7s max_rel=%.2e  |g|>=1e-5: %.2e  checked=%d small=%d skipped=%d %s",
                  to_string(r.variant).c_str(), to_string(r.arch).c_str(), r.max_rel_error,
                  r.max_rel_error_resolved, r.coords_checked, r.coords_small, r.coords_skipped,
                  r.passed ? "ok" : "over");
    info(line);
  }
  const bool pass = all && secs < 120.0;
  report(1, pass, "gradient check",
         "max rel err " + fmt("%.2e", worst) + " (tol 1e-6) over " + std::to_string(checked) + " coords, " +
             std::to_string(small) + " with |g|<1e-5; resolved max " + fmt("%.2e", worst_resolved) + "; " +
             fmt("%.1f s", secs));
}

void criterion_reduction() {
  double worst = 0.0;
  const EnvConfig env = EnvConfig::standard();
  for (ArchKind kind : {ArchKind::Tabular, ArchKind::Mlp}) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Policy theta = random_policy(arch_for(env, kind, 16, 512), 100 + s, 0.5);
      Policy old = theta;
      Rng jitter(200 + s);
      for (double& x : old.params_mut()) x += 0.1 * (2.0 * uniform01(jitter) - 1.0);
      const Policy ref = random_policy(arch_for(env, kind, 16, 512), 300 + s, 0.5);
      std::vector<RolloutGroup> batch;
      for (std::uint64_t g = 0; g < 3; ++g) batch.push_back(random_group(env, old, 8, 0, 0.0, 1000 * s + g));
      for (auto [base, tg] : {std::pair{Variant::Grpo, Variant::TgrlGrpo}, std::pair{Variant::Dapo, Variant::TgrlDapo}}) {
        ObjectiveConfig cb;
        cb.variant = base;
        cb.n_on = 8;
        cb.n_off = 0;
        ObjectiveConfig ct = cb;
        ct.variant = tg;
        const auto rb = loss_and_grad(batch, theta, ref, env, cb);
        const auto rt = loss_and_grad(batch, theta, ref, env, ct);
        worst = std::max({worst, std::abs(rb.loss - rt.loss), max_abs_diff(rb.grad, rt.grad)});
      }
    }
  }
  // Whole training runs from the shipped configs.
  for (auto [tg_file, base_file] : {std::pair{"needle_tgrl.json", "needle_grpo.json"},
                                    std::pair{"needle_tgrl_dapo.json", "needle_dapo.json"}}) {
    TrainConfig a = from_file(tg_file, 5);
    a.objective.n_on = 8;
    a.objective.n_off = 0;
    TrainConfig b = from_file(base_file, 5);
    a.steps = b.steps = 100;
    const auto ra = train(a);
    const auto rb = train(b);
    worst = std::max(worst, max_abs_diff(ra.params.params(), rb.params.params()));
    if (!(ra.history == rb.history)) worst = INFINITY;
  }
  report(2, worst <= 1e-12, "reduction at N_off = 0", "max |diff| " + fmt("%.1e", worst) + " over loss, grad, 100-step runs");
}

void criterion_normalization() {
  Rng rng(42);
  double worst_mean = 0.0;
  double worst_std = 0.0;
  double worst_equal = 0.0;
  int tested = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int g = 2 + static_cast<int>(uniform01(rng) * 15);  // 2..16
    const bool shaped = trial % 2 == 1;  // verifier reward plus 0.5 * perception fraction
    std::vector<double> r(static_cast<std::size_t>(g));
    for (double& x : r) {
      x = uniform01(rng) < 0.5 ? 1.0 : 0.0;
      if (shaped) x += 0.5 * std::floor(uniform01(rng) * 5.0) / 4.0;
    }
    const bool all_equal = std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; });
    const auto a = advantages(r, 1e-6);
    if (all_equal) {
      for (double x : a) worst_equal = std::max(worst_equal, std::abs(x));
      continue;
    }
    ++tested;
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / g;
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_std = std::max(worst_std, std::abs(std::sqrt(var / g) - 1.0));
  }
  const std::vector<double> same(6, 0.75);
  for (double x : advantages(same, 1e-6)) worst_equal = std::max(worst_equal, std::abs(x));
  const bool pass = worst_mean <= 1e-9 && worst_std <= 1e-4 && worst_equal == 0.0;
  report(3, pass, "group normalization",
         std::to_string(tested) + " vectors: max |mean| " + fmt("%.1e", worst_mean) + ", max |std-1| " +
             fmt("%.1e", worst_std) + ", all-equal max |A| " + fmt("%.1e", worst_equal));
}

void criterion_weights() {
  bool ok = true;
  Rng rng(7);
  // beta = 0 gives w = 0.5 exactly.
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(9), b(9);
    for (std::size_t t = 0; t < a.size(); ++t) {
      a[t] = -3.0 * uniform01(rng);
      b[t] = -3.0 * uniform01(rng);
    }
    for (double w : token_weights(a, b, 0.0, 1e-6).w) ok = ok && w == 0.5;
  }
  // Monotone in beta for every fixed sign of the standardized gap.
  std::vector<double> theta(10), expert(10);
  for (int j = 0; j < 10; ++j) {
    theta[static_cast<std::size_t>(j)] = -1.0;
    expert[static_cast<std::size_t>(j)] = -1.0 + 0.5 * (j - 4.5);  // gaps -2.25 .. 2.25, none zero
  }
  const double betas[] = {0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 14.0, 20.0, 30.0};
  std::vector<std::vector<double>> w_by_beta;
  std::vector<double> dn;
  for (double beta : betas) {
    const auto tw = token_weights(theta, expert, beta, 1e-6);
    w_by_beta.push_back(tw.w);
    dn = tw.delta_norm;
  }
  int monotone_pairs = 0;
  for (std::size_t j = 0; j < 10; ++j) {
    for (std::size_t b = 1; b < w_by_beta.size(); ++b) {
      const double prev = w_by_beta[b - 1][j];
      const double cur = w_by_beta[b][j];
      const bool step_ok = dn[j] > 0 ? cur >= prev && cur > 0.5 : cur <= prev && cur < 0.5;
      ok = ok && step_ok;
      monotone_pairs += step_ok;
    }
  }
  // Constant gap: every weight is 0.5 whatever beta.
  // Dyadic values keep the gap exactly constant in floating point.
  const std::vector<double> lt = {-0.5, -1.0, -2.0, -0.125};
  std::vector<double> le = lt;
  for (double& x : le) x -= 0.75;
  for (double beta : betas) {
    for (double w : token_weights(lt, le, beta, 1e-6).w) ok = ok && w == 0.5;
  }
  report(4, ok, "token weights", "beta=0 -> 0.5 on 200 trajectories; " + std::to_string(monotone_pairs) +
                                     "/90 monotone steps on a 10x10 grid; constant gap -> 0.5");
}

void criterion_mask() {
  double worst = 0.0;
  double min_stat_effect = INFINITY;
  int cases = 0;
  const EnvConfig env = EnvConfig::standard();
  for (Variant v : {Variant::TgrlGrpo, Variant::TgrlDapo}) {
    for (ArchKind kind : {ArchKind::Tabular, ArchKind::Mlp}) {
      for (std::uint64_t s = 0; s < 10; ++s) {
        const Policy theta = random_policy(arch_for(env, kind, 16, 512), 500 + s, 0.4);
        const Policy ref = random_policy(arch_for(env, kind, 16, 512), 600 + s, 0.4);
        auto g = random_group(env, theta, 3, 1, 0.2, 700 + s);
        // Wrong expert among mixed on-policy rewards.
        g.trajectories[0].reward = 1;
        g.trajectories[1].reward = 0;
        g.trajectories[3].reward = 0;
        g.stats = group_stats(g.rewards());
        ObjectiveConfig c;
        c.variant = v;
        c.n_on = 3;
        c.n_off = 1;
        c.dynamic_sampling = false;
        const auto full = loss_and_grad(std::span(&g, 1), theta, ref, env, c);
        LossOptions drop;
        drop.drop_terms = [](std::size_t, std::size_t i) { return i == 3; };
        const auto deleted = loss_and_grad(std::span(&g, 1), theta, ref, env, c, drop);
        // Only the gradient is compared: a masked term with A < 0 sits on the clipped
        // branch and adds a theta-independent constant to the loss value.
        worst = std::max(worst, max_abs_diff(full.grad, deleted.grad));
        // The masked expert's reward still enters the group statistics.
        RolloutGroup without = g;
        without.trajectories.pop_back();
        without.stats = group_stats(without.rewards());
        const auto a_with = advantages(g.rewards(), c.eps_std);
        const auto a_without = advantages(without.rewards(), c.eps_std);
        min_stat_effect = std::min(min_stat_effect, std::abs(a_with[0] - a_without[0]));
        ++cases;
      }
    }
  }
  const bool pass = worst <= 1e-12 && min_stat_effect > 1e-3;
  report(5, pass, "mask annihilation",
         std::to_string(cases) + " groups: max |masked - deleted| " + fmt("%.1e", worst) +
             "; min advantage shift from masked reward " + fmt("%.3f", min_stat_effect));
}

void criterion_expert_advantage() {
  const EnvConfig env = EnvConfig::needle();
  const Policy behavior = random_policy(arch_for(env, ArchKind::Mlp, 16), 9, 0.5);
  Rng rng(11);
  int correct_experts = 0;
  int negative = 0;
  int all_wrong_groups = 0;
  double worst_formula = 0.0;
  bool unique_max = true;
  for (int i = 0; i < 1000; ++i) {
    const int n_off = i % 2 == 0 ? 1 : 1 + static_cast<int>(uniform01(rng) * 3);
    const int n_on = 1 + static_cast<int>(uniform01(rng) * 15);
    auto g = random_group(env, behavior, n_on, n_off, 0.3, 5000 + static_cast<std::uint64_t>(i));
    // Random on-policy outcomes so both regimes occur.
    const bool force_wrong = i % 4 == 0;
    for (int m = 0; m < n_on; ++m) g.trajectories[static_cast<std::size_t>(m)].reward = force_wrong ? 0 : uniform01(rng) < 0.3;
    const auto r = g.rewards();
    const auto a = advantages(r, 1e-6);
    for (std::size_t m = static_cast<std::size_t>(n_on); m < r.size(); ++m) {
      if (r[m] == 1.0) {
        ++correct_experts;
        negative += a[m] < 0.0;
      }
    }
    const bool on_wrong = std::all_of(r.begin(), r.begin() + n_on, [](double x) { return x == 0.0; });
    if (n_off == 1 && on_wrong && r.back() == 1.0) {
      ++all_wrong_groups;
      const double gsz = static_cast<double>(r.size());
      const double mu = 1.0 / gsz;
      const double sigma = std::sqrt(mu * (1.0 - mu));
      const double expected = (1.0 - mu) / (sigma + 1e-6);
      worst_formula = std::max(worst_formula, std::abs(a.back() - expected) / expected);
      for (std::size_t m = 0; m + 1 < a.size(); ++m) unique_max = unique_max && a[m] < a.back();
    }
  }
  const bool pass = negative == 0 && correct_experts > 0 && all_wrong_groups >= 50 && worst_formula <= 1e-12 && unique_max;
  report(6, pass, "expert advantage sign",
         std::to_string(correct_experts) + " correct experts, " + std::to_string(negative) + " negative; " +
             std::to_string(all_wrong_groups) + " all-wrong groups, max rel formula err " + fmt("%.1e", worst_formula) +
             (unique_max ? ", expert is unique max" : ", expert NOT unique max"));
}

void criterion_efficacy(std::vector<double>& tgrl_grpo_acc) {
  const int seeds = 10;
  bool all = true;
  std::string detail;
  for (auto [tg_file, base_file, label] : {std::tuple{"needle_tgrl.json", "needle_grpo.json", "GRPO"},
                                           std::tuple{"needle_tgrl_dapo.json", "needle_dapo.json", "DAPO"}}) {
    struct {
      std::vector<double> tgrl, base;
    } runs;
    for (int s = 0; s < seeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s);
      runs.tgrl.push_back(train(from_file(tg_file, seed)).final_accuracy);
      runs.base.push_back(train(from_file(base_file, seed)).final_accuracy);
      char line[160];
      std::snprintf(line, sizeof line, "%s seed %d: TGRL %.3f  baseline %.3f", label, s, runs.tgrl.back(), runs.base.back());
      info(line);
    }
    int wins = 0;
    double margin = 0.0;
    for (int s = 0; s < seeds; ++s) {
      wins += runs.tgrl[static_cast<std::size_t>(s)] > runs.base[static_cast<std::size_t>(s)];
      margin += runs.tgrl[static_cast<std::size_t>(s)] - runs.base[static_cast<std::size_t>(s)];
    }
    margin /= seeds;
    const double base_mean = std::accumulate(runs.base.begin(), runs.base.end(), 0.0) / seeds;
    const bool ok = wins >= 8 && margin >= 0.10 && base_mean < 0.5;
    all = all && ok;
    if (!detail.empty()) detail += "; ";
    detail += std::string(label) + ": wins " + std::to_string(wins) + "/10, mean margin " + fmt("%.3f", margin) +
              ", baseline mean " + fmt("%.3f", base_mean);
    if (std::string(label) == "GRPO") tgrl_grpo_acc = runs.tgrl;
  }
  report(7, all, "learning efficacy on needle", detail);
}

void criterion_ablation(const std::vector<double>& full) {
  const int seeds = 10;
  std::string detail;
  bool all = true;
  for (auto [name, apply] : {std::pair<const char*, std::function<void(TrainConfig&)>>{
                                 "w/o filter", [](TrainConfig& c) { c.objective.filtering = false; }},
                             std::pair<const char*, std::function<void(TrainConfig&)>>{
                                 "w/o reweight", [](TrainConfig& c) { c.objective.reweighting = false; }}}) {
    int at_least = 0;
    double mean = 0.0;
    for (int s = 0; s < seeds; ++s) {
      TrainConfig c = from_file("needle_tgrl.json", static_cast<std::uint64_t>(s));
      apply(c);
      const double acc = train(c).final_accuracy;
      mean += acc / seeds;
      at_least += full[static_cast<std::size_t>(s)] >= acc;
      char line[120];
      std::snprintf(line, sizeof line, "%s seed %d: %.3f (full %.3f)", name, s, acc, full[static_cast<std::size_t>(s)]);
      info(line);
    }
    all = all && at_least >= 7;
    if (!detail.empty()) detail += "; ";
    detail += std::string(name) + ": full >= ablated on " + std::to_string(at_least) + "/10, ablated mean " + fmt("%.3f", mean);
  }
  report(8, all, "ablation ordering", detail);
}

void criterion_determinism() {
  bool ok = true;
  for (const char* file : {"needle_tgrl.json", "needle_grpo.json", "standard.json"}) {
    TrainConfig c = from_file(file, 3);
    c.steps = 60;
    c.eval_every = 20;
    const auto a = train(c);
    const auto b = train(c);
    // Same run after a round trip through the resolved JSON.
    ExperimentConfig e;
    e.train = c;
    e.seeds = {3};
    const auto c2 = train_config_for(config_from_json(config_to_json(e)), 3);
    const auto d = train(c2);
    ok = ok && a.history == b.history && a.params == b.params && a.history == d.history && a.params == d.params;
  }
  ExperimentConfig ab = load_config(std::string(TGRL_CONFIG_DIR) + "/needle_ablation.json", {});
  ab.train.steps = 20;
  ab.train.eval_every = 10;
  ab.train.eval_size = 64;
  const auto r1 = ablation_matrix(ab.train, ab.ablation, ab.seeds, 1);
  const auto r2 = ablation_matrix(ab.train, ab.ablation, ab.seeds, 2);
  ok = ok && ablation_table(r1) == ablation_table(r2);
  report(9, ok, "determinism", "train x3 configs (repeat and JSON round trip) and a " + std::to_string(r1.size()) +
                                   "-run ablation with 1 vs 2 workers reproduce bit-exactly");
}

void criterion_decomposition() {
  double worst = 0.0;
  int groups = 0;
  for (const EnvConfig& env : {EnvConfig::standard(), EnvConfig::needle()}) {
    for (ArchKind kind : {ArchKind::Tabular, ArchKind::Mlp}) {
      const Policy p = random_policy(arch_for(env, kind, 16, 1024), 31, 0.5);
      ObjectiveConfig c;
      for (std::uint64_t s = 0; s < 25; ++s) {
        const auto g = random_group(env, p, 5, 2, 0.2, 900 + s);
        const auto adv = advantages(g.rewards(), 1e-6);
        const auto coeffs = unified_coefficients(g, p, env, c);
        for (const auto& d : {decompose_gradient(p, g, env, adv), decompose_gradient(p, g, env, adv, coeffs)}) {
          for (std::size_t k = 0; k < d.outcome.size(); ++k) {
            worst = std::max(worst, std::abs(d.perception[k] + d.reasoning[k] - d.outcome[k]));
          }
        }
        ++groups;
      }
    }
  }
  double tree = 0.0;
  int sequences = 0;
  for (int s = 2; s <= 3; ++s) {
    for (int k = 1; k <= 3; ++k) {
      const EnvConfig env = small_env(k, s, 12);
      for (double eta : {0.1, 0.3}) {
        const auto r = expert_tree_check(env, eta, [&](const TaskInstance& inst, const std::vector<Token>& seq) {
          return expert_score(ExpertSpec{eta}, env, inst, seq);
        });
        tree = std::max({tree, r.max_seq_error, r.max_log_error, r.max_total_error});
        sequences += r.sequences;
      }
    }
  }
  const bool pass = worst <= 1e-10 && tree <= 1e-12;
  report(10, pass, "decomposition and expert probabilities",
         std::to_string(groups) + " groups: max |perc + reas - outcome| " + fmt("%.1e", worst) + "; " +
             std::to_string(sequences) + " enumerated expert sequences: max err " + fmt("%.1e", tree));
}

}  // namespace

// Optional arguments select criteria by number; 8 also runs 7.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  if (want(1)) criterion_gradcheck();
  if (want(2)) criterion_reduction();
  if (want(3)) criterion_normalization();
  if (want(4)) criterion_weights();
  if (want(5)) criterion_mask();
  if (want(6)) criterion_expert_advantage();
  std::vector<double> tgrl_grpo;
  if (want(7) || want(8)) criterion_efficacy(tgrl_grpo);
  if (want(8)) criterion_ablation(tgrl_grpo);
  if (want(9)) criterion_determinism();
  if (want(10)) criterion_decomposition();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
