#include "tgrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tgrl/error.hpp"

namespace tgrl {

std::string Vocab::name(Token t) const {
  if (is_symbol(t)) return "s" + std::to_string(t);
  if (t == even()) return "EVEN";
  if (t == odd()) return "ODD";
  if (t == op_point()) return "OP_POINT";
  if (t == op_majority()) return "OP_MAJORITY";
  if (t == op_parity()) return "OP_PARITY";
  if (t == sep()) return "SEP";
  if (t == ans()) return "ANS";
  if (t == eos()) return "EOS";
  if (t == pad()) return "PAD";
  return "?" + std::to_string(t);
}

std::string to_string(Origin origin) {
  return origin == Origin::OnPolicy ? "on_policy" : "expert";
}

std::string to_string(QueryType type) {
  switch (type) {
    case QueryType::Point: return "point";
    case QueryType::Majority: return "majority";
    case QueryType::Parity: return "parity";
  }
  return "?";
}

QueryType query_type_from_string(const std::string& name) {
  if (name == "point") return QueryType::Point;
  if (name == "majority") return QueryType::Majority;
  if (name == "parity") return QueryType::Parity;
  throw InputError("unknown query type '" + name + "'");
}

SegmentSpans split_segments(std::span<const Token> tokens, const Vocab& vocab) {
  SegmentSpans spans;
  spans.length = static_cast<int>(tokens.size());
  const auto it = std::find(tokens.begin(), tokens.end(), vocab.sep());
  if (it != tokens.end()) spans.sep = static_cast<int>(it - tokens.begin());
  return spans;
}

EnvConfig EnvConfig::standard() { return EnvConfig{}; }

EnvConfig EnvConfig::needle() {
  EnvConfig c;
  c.preset = "needle";
  c.num_cells = 4;
  c.num_symbols = 10;
  c.query_mix = {1.0, 0.0, 0.0};
  c.max_len = 16;
  return c;
}

EnvConfig EnvConfig::from_preset(const std::string& name) {
  if (name == "standard") return standard();
  if (name == "needle") return needle();
  if (name == "custom") {
    EnvConfig c;
    c.preset = "custom";
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected standard|needle|custom)", "env.preset");
}

void EnvConfig::validate() const {
  if (num_cells < 1) throw ConfigError("must be >= 1", "env.num_cells");
  if (num_symbols < 2) throw ConfigError("must be >= 2", "env.num_symbols");
  if (max_len < 1) throw ConfigError("must be >= 1", "env.max_len");
  double total = 0.0;
  for (double w : query_mix) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("weights must be finite and >= 0", "env.query_mix");
    total += w;
  }
  if (total <= 0.0) throw ConfigError("at least one weight must be positive", "env.query_mix");
}

ContextLayout EnvConfig::layout(int window) const {
  ContextLayout layout;
  layout.window = window;
  layout.vocab_size = vocab().size();
  const int none = num_symbols + 1;
  layout.obs_cardinality = {3, std::max(num_cells, num_symbols), 2, max_len, none};
  for (int k = 0; k < num_cells; ++k) layout.obs_cardinality.push_back(none);
  return layout;
}

std::vector<Token> answer_set(QueryType type, const Vocab& vocab) {
  if (type == QueryType::Parity) return {vocab.even(), vocab.odd()};
  std::vector<Token> out(static_cast<std::size_t>(vocab.num_symbols));
  for (int s = 0; s < vocab.num_symbols; ++s) out[static_cast<std::size_t>(s)] = vocab.symbol(s);
  return out;
}

Token answer_for(std::span<const int> cells, const Query& query, const Vocab& vocab) {
  switch (query.type) {
    case QueryType::Point:
      if (query.arg < 0 || query.arg >= static_cast<int>(cells.size())) {
        throw InputError("POINT query index out of range");
      }
      return vocab.symbol(cells[static_cast<std::size_t>(query.arg)]);
    case QueryType::Majority: {
      std::vector<int> counts(static_cast<std::size_t>(vocab.num_symbols), 0);
      for (int c : cells) {
        if (c >= 0 && c < vocab.num_symbols) ++counts[static_cast<std::size_t>(c)];
      }
      const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
      return vocab.symbol(static_cast<int>(best));
    }
    case QueryType::Parity: {
      const auto n = std::count(cells.begin(), cells.end(), query.arg);
      return n % 2 == 0 ? vocab.even() : vocab.odd();
    }
  }
  throw InputError("unknown query type");
}

namespace {

bool has_unique_mode(std::span<const int> cells, int num_symbols) {
  std::vector<int> counts(static_cast<std::size_t>(num_symbols), 0);
  for (int c : cells) ++counts[static_cast<std::size_t>(c)];
  const int best = *std::max_element(counts.begin(), counts.end());
  return std::count(counts.begin(), counts.end(), best) == 1;
}

}  // namespace

TaskInstance generate_instance(const EnvConfig& config, Rng& rng, std::uint64_t id) {
  config.validate();
  TaskInstance inst;
  inst.id = id;
  const auto& mix = config.query_mix;
  const double total = mix[0] + mix[1] + mix[2];
  const double u = uniform01(rng) * total;
  if (u < mix[0] || (mix[1] == 0.0 && mix[2] == 0.0)) {
    inst.query.type = QueryType::Point;
  } else if (u < mix[0] + mix[1] || mix[2] == 0.0) {
    inst.query.type = QueryType::Majority;
  } else {
    inst.query.type = QueryType::Parity;
  }
  inst.cells.resize(static_cast<std::size_t>(config.num_cells));
  for (;;) {
    for (int& c : inst.cells) c = uniform_int(rng, config.num_symbols);
    if (inst.query.type != QueryType::Majority || has_unique_mode(inst.cells, config.num_symbols)) break;
  }
  switch (inst.query.type) {
    case QueryType::Point: inst.query.arg = uniform_int(rng, config.num_cells); break;
    case QueryType::Majority: inst.query.arg = 0; break;
    case QueryType::Parity: inst.query.arg = uniform_int(rng, config.num_symbols); break;
  }
  inst.answer = answer_for(inst.cells, inst.query, config.vocab());
  return inst;
}

std::optional<Token> extract_prediction(std::span<const Token> tokens, const Vocab& vocab,
                                        int max_len) {
  if (static_cast<int>(tokens.size()) > max_len) return std::nullopt;
  const auto eos_it = std::find(tokens.begin(), tokens.end(), vocab.eos());
  if (eos_it == tokens.end()) return std::nullopt;
  const auto end = static_cast<int>(eos_it - tokens.begin());
  const auto head = tokens.first(static_cast<std::size_t>(end));
  const auto spans = split_segments(head, vocab);
  if (!spans.has_sep()) return std::nullopt;
  int last_ans = -1;
  for (int t = spans.reasoning_begin(); t < end; ++t) {
    if (head[static_cast<std::size_t>(t)] == vocab.ans()) last_ans = t;
  }
  if (last_ans < 0 || last_ans != end - 2) return std::nullopt;
  return head[static_cast<std::size_t>(end - 1)];
}

int verify(std::optional<Token> prediction, Token answer) {
  return prediction.has_value() && *prediction == answer ? 1 : 0;
}

std::vector<int> perceived_cells(std::span<const Token> tokens, const EnvConfig& config) {
  const Vocab vocab = config.vocab();
  const auto spans = split_segments(tokens, vocab);
  const int content = spans.has_sep() ? spans.sep : spans.length;
  std::vector<int> out(static_cast<std::size_t>(config.num_cells), config.num_symbols);
  for (int k = 0; k < config.num_cells && k < content; ++k) {
    const Token t = tokens[static_cast<std::size_t>(k)];
    if (vocab.is_symbol(t)) out[static_cast<std::size_t>(k)] = t;
  }
  return out;
}

double perception_reward(std::span<const Token> tokens, const TaskInstance& instance,
                         const Vocab& vocab) {
  const auto k_cells = static_cast<int>(instance.cells.size());
  if (k_cells == 0) return 0.0;
  const auto spans = split_segments(tokens, vocab);
  const int content = spans.has_sep() ? spans.sep : spans.length;
  int hits = 0;
  for (int k = 0; k < k_cells && k < content; ++k) {
    if (tokens[static_cast<std::size_t>(k)] == vocab.symbol(instance.cells[static_cast<std::size_t>(k)])) ++hits;
  }
  return static_cast<double>(hits) / k_cells;
}

Context make_context(const EnvConfig& config, const TaskInstance& instance,
                     std::span<const Token> prefix, int window) {
  const Vocab vocab = config.vocab();
  const int none = config.num_symbols;
  const auto t = static_cast<int>(prefix.size());
  const bool reasoning = std::find(prefix.begin(), prefix.end(), vocab.sep()) != prefix.end();

  Context ctx;
  ctx.obs.reserve(static_cast<std::size_t>(5 + config.num_cells));
  ctx.obs.push_back(static_cast<int>(instance.query.type));
  ctx.obs.push_back(instance.query.arg);
  ctx.obs.push_back(reasoning ? 1 : 0);
  ctx.obs.push_back(std::min(t, config.max_len - 1));
  if (!reasoning) {
    ctx.obs.push_back(t < config.num_cells ? instance.cells[static_cast<std::size_t>(t)] : none);
    for (int c : instance.cells) ctx.obs.push_back(c);
  } else {
    const auto perceived = perceived_cells(prefix, config);
    ctx.obs.push_back(instance.query.type == QueryType::Point
                          ? perceived[static_cast<std::size_t>(instance.query.arg)]
                          : none);
    for (int c : perceived) ctx.obs.push_back(c);
  }

  ctx.window.assign(static_cast<std::size_t>(window), vocab.pad());
  const int n = std::min(window, t);
  for (int i = 0; i < n; ++i) {
    ctx.window[static_cast<std::size_t>(window - n + i)] = prefix[static_cast<std::size_t>(t - n + i)];
  }
  return ctx;
}

Trajectory finalize_trajectory(std::vector<Token> tokens, std::vector<double> logp_behavior,
                               Origin origin, const EnvConfig& config, const TaskInstance& instance) {
  const Vocab vocab = config.vocab();
  Trajectory traj;
  traj.spans = split_segments(tokens, vocab);
  traj.truncated = tokens.empty() || tokens.back() != vocab.eos();
  traj.prediction = traj.truncated ? std::nullopt : extract_prediction(tokens, vocab, config.max_len);
  traj.reward = verify(traj.prediction, instance.answer);
  traj.tokens = std::move(tokens);
  traj.logp_behavior = std::move(logp_behavior);
  traj.origin = origin;
  return traj;
}

void ExpertSpec::validate() const {
  if (!(eta >= 0.0 && eta < 1.0)) throw ConfigError("must lie in [0, 1)", "expert.eta");
}

namespace {

void fill_noisy(std::vector<double>& logp, std::span<const Token> choices, Token correct, double eta) {
  const double wrong = choices.size() > 1 ? eta / static_cast<double>(choices.size() - 1) : 0.0;
  for (Token c : choices) {
    const double p = c == correct ? 1.0 - eta : wrong;
    logp[static_cast<std::size_t>(c)] = std::log(p);
  }
}

}  // namespace

std::vector<double> expert_log_probs(const ExpertSpec& spec, const EnvConfig& config,
                                     const TaskInstance& instance, std::span<const Token> prefix) {
  const Vocab vocab = config.vocab();
  const int k_cells = config.num_cells;
  const auto t = static_cast<int>(prefix.size());
  std::vector<double> logp(static_cast<std::size_t>(vocab.size()),
                           -std::numeric_limits<double>::infinity());
  auto force = [&](Token tok) { logp[static_cast<std::size_t>(tok)] = 0.0; };

  if (t < k_cells) {
    const auto symbols = answer_set(QueryType::Point, vocab);
    fill_noisy(logp, symbols, vocab.symbol(instance.cells[static_cast<std::size_t>(t)]), spec.eta);
  } else if (t == k_cells) {
    force(vocab.sep());
  } else if (t == k_cells + 1) {
    switch (instance.query.type) {
      case QueryType::Point: force(vocab.op_point()); break;
      case QueryType::Majority: force(vocab.op_majority()); break;
      case QueryType::Parity: force(vocab.op_parity()); break;
    }
  } else if (t == k_cells + 2) {
    force(vocab.ans());
  } else if (t == k_cells + 3) {
    const auto perceived = perceived_cells(prefix, config);
    const Token target = answer_for(perceived, instance.query, vocab);
    fill_noisy(logp, answer_set(instance.query.type, vocab), target, spec.eta);
  } else {
    force(vocab.eos());
  }
  return logp;
}

std::vector<double> expert_score(const ExpertSpec& spec, const EnvConfig& config,
                                 const TaskInstance& instance, std::span<const Token> tokens) {
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto lp = expert_log_probs(spec, config, instance, tokens.first(t));
    out.push_back(lp[static_cast<std::size_t>(tokens[t])]);
  }
  return out;
}

Trajectory expert_rollout(const ExpertSpec& spec, const EnvConfig& config,
                          const TaskInstance& instance, Rng& rng) {
  const Vocab vocab = config.vocab();
  std::vector<Token> tokens;
  std::vector<double> logp;
  std::vector<double> probs(static_cast<std::size_t>(vocab.size()));
  while (static_cast<int>(tokens.size()) < config.max_len) {
    const auto lp = expert_log_probs(spec, config, instance, tokens);
    std::transform(lp.begin(), lp.end(), probs.begin(), [](double x) { return std::exp(x); });
    const Token tok = sample_categorical(rng, probs);
    tokens.push_back(tok);
    logp.push_back(lp[static_cast<std::size_t>(tok)]);
    if (tok == vocab.eos()) break;
  }
  return finalize_trajectory(std::move(tokens), std::move(logp), Origin::Expert, config, instance);
}

}  // namespace tgrl
