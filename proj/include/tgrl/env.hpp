#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgrl/context.hpp"
#include "tgrl/rng.hpp"
#include "tgrl/trajectory.hpp"
#include "tgrl/vocab.hpp"

namespace tgrl {

enum class QueryType { Point = 0, Majority = 1, Parity = 2 };

std::string to_string(QueryType type);
QueryType query_type_from_string(const std::string& name);

// POINT: report cell `arg`. MAJORITY: most frequent symbol (arg unused, 0).
// PARITY: is the count of symbol `arg` even or odd.
struct Query {
  QueryType type = QueryType::Point;
  int arg = 0;

  bool operator==(const Query&) const = default;
};

struct EnvConfig {
  std::string preset = "standard";
  int num_cells = 4;     // K
  int num_symbols = 6;   // S
  std::array<double, 3> query_mix = {1.0, 1.0, 1.0};  // POINT, MAJORITY, PARITY weights
  int max_len = 16;

  static EnvConfig standard();
  // Reward-sparse POINT-only task over 10 symbols.
  static EnvConfig needle();
  static EnvConfig from_preset(const std::string& name);

  void validate() const;
  Vocab vocab() const { return Vocab{num_symbols}; }
  ContextLayout layout(int window) const;
  // Tokens in an expert trajectory: K perception, SEP, operator, ANS, answer, EOS.
  int expert_length() const { return num_cells + 5; }

  bool operator==(const EnvConfig&) const = default;
};

// The verifiable problem: hidden cells (the "image"), a query and its answer.
struct TaskInstance {
  std::uint64_t id = 0;
  std::vector<int> cells;
  Query query;
  Token answer = 0;
};

// Deterministic answer for a cell vector. MAJORITY ties resolve to the
// smallest symbol among the modes (only reachable for perceived cells;
// generated instances always have a unique mode).
Token answer_for(std::span<const int> cells, const Query& query, const Vocab& vocab);

// Answer tokens a query type ranges over.
std::vector<Token> answer_set(QueryType type, const Vocab& vocab);

TaskInstance generate_instance(const EnvConfig& config, Rng& rng, std::uint64_t id = 0);

// Token following the last ANS of the reasoning span, provided it is the
// only token between that ANS and a terminating EOS. NONE otherwise,
// including when there is no SEP (empty reasoning span) or the sequence
// exceeds `max_len`.
std::optional<Token> extract_prediction(std::span<const Token> tokens, const Vocab& vocab,
                                        int max_len);

int verify(std::optional<Token> prediction, Token answer);

// Fraction of the first K perception tokens (SEP excluded) that equal the
// corresponding hidden cells; missing positions score 0.
double perception_reward(std::span<const Token> tokens, const TaskInstance& instance,
                         const Vocab& vocab);

// First K perception tokens read back as cell symbols; NONE (= S) where the
// token is missing or not a symbol.
std::vector<int> perceived_cells(std::span<const Token> tokens, const EnvConfig& config);

// Observation fields: query type, query arg, stage (0 perception / 1
// reasoning), step index, focus symbol, then K cell slots. During perception
// the slots hold the hidden cells and focus is cell[t]; after SEP the slots
// hold the policy's own perceived symbols and, for POINT, focus is the
// perceived symbol at the queried cell. Value S encodes NONE.
Context make_context(const EnvConfig& config, const TaskInstance& instance,
                     std::span<const Token> prefix, int window);

// Completes a sampled token sequence into a trajectory: spans, prediction, reward.
Trajectory finalize_trajectory(std::vector<Token> tokens, std::vector<double> logp_behavior,
                               Origin origin, const EnvConfig& config, const TaskInstance& instance);

// Hand-coded stochastic expert. Perception tokens are correct with
// probability 1 - eta, otherwise uniform over the wrong symbols. Then SEP,
// the query's operator token, ANS are forced. The answer is computed from
// the expert's own perceived cells and emitted with probability 1 - eta,
// otherwise uniform over the other answers. EOS ends the trajectory.
struct ExpertSpec {
  double eta = 0.0;

  void validate() const;
};

// Next-token log-probabilities of the expert procedure after `prefix`.
std::vector<double> expert_log_probs(const ExpertSpec& spec, const EnvConfig& config,
                                     const TaskInstance& instance, std::span<const Token> prefix);

// Teacher-forced per-token log-probabilities of `tokens` under the expert.
std::vector<double> expert_score(const ExpertSpec& spec, const EnvConfig& config,
                                 const TaskInstance& instance, std::span<const Token> tokens);

Trajectory expert_rollout(const ExpertSpec& spec, const EnvConfig& config,
                          const TaskInstance& instance, Rng& rng);

}  // namespace tgrl
