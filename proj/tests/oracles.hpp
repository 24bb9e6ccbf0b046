#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "tgrl/env.hpp"

namespace tgrl::testing {

// Independent answer rule.
inline Token oracle_answer(const std::vector<int>& cells, const Query& q, const Vocab& v) {
  if (q.type == QueryType::Point) return cells[static_cast<std::size_t>(q.arg)];
  if (q.type == QueryType::Parity) {
    int count = 0;
    for (int c : cells) count += c == q.arg;
    return count % 2 == 0 ? v.even() : v.odd();
  }
  std::map<int, int> counts;
  for (int c : cells) ++counts[c];
  int best = -1;
  int best_count = 0;
  for (const auto& [sym, n] : counts) {
    if (n > best_count) {
      best = sym;
      best_count = n;
    }
  }
  return best;
}

inline Token op_for(QueryType t, const Vocab& v) {
  switch (t) {
    case QueryType::Point: return v.op_point();
    case QueryType::Majority: return v.op_majority();
    case QueryType::Parity: return v.op_parity();
  }
  return -1;
}

inline TaskInstance oracle_instance(std::vector<int> cells, Query q, const Vocab& v) {
  TaskInstance inst;
  inst.cells = std::move(cells);
  inst.query = q;
  inst.answer = oracle_answer(inst.cells, q, v);
  return inst;
}

struct TreeCheck {
  double max_seq_error = 0.0;     // |exp(sum expert_score) - tree probability| over sequences
  double max_log_error = 0.0;     // same in log space
  double max_total_error = 0.0;   // |sum of probabilities - 1| per instance, both sides
  int sequences = 0;
};

// Enumerates every expert trajectory for every instance (all cell vectors,
// all queries) of a K-cell, S-symbol environment and compares the expert's
// teacher-forced score with the product of branch probabilities.
template <typename ScoreFn>
TreeCheck expert_tree_check(const EnvConfig& env, double eta, ScoreFn score) {
  const int k = env.num_cells;
  const int s = env.num_symbols;
  const Vocab v = env.vocab();
  int combos = 1;
  for (int i = 0; i < k; ++i) combos *= s;
  std::vector<std::vector<int>> all_cells;
  for (int idx = 0; idx < combos; ++idx) {
    std::vector<int> cells;
    for (int i = 0, x = idx; i < k; ++i, x /= s) cells.push_back(x % s);
    all_cells.push_back(cells);
  }
  std::vector<Query> queries = {{QueryType::Majority, 0}};
  for (int a = 0; a < k; ++a) queries.push_back({QueryType::Point, a});
  for (int a = 0; a < s; ++a) queries.push_back({QueryType::Parity, a});

  TreeCheck out;
  for (const auto& cells : all_cells) {
    for (const auto& q : queries) {
      const auto inst = oracle_instance(cells, q, v);
      std::vector<Token> answers;
      if (q.type == QueryType::Parity) {
        answers = {v.even(), v.odd()};
      } else {
        for (int a = 0; a < s; ++a) answers.push_back(a);
      }
      double total_oracle = 0.0;
      double total_impl = 0.0;
      for (const auto& perceived : all_cells) {
        double p_perc = 1.0;
        for (int i = 0; i < k; ++i) {
          const auto ui = static_cast<std::size_t>(i);
          p_perc *= perceived[ui] == cells[ui] ? 1.0 - eta : eta / (s - 1);
        }
        const Token implied = oracle_answer(perceived, q, v);
        for (Token a : answers) {
          const double p = p_perc * (a == implied ? 1.0 - eta : eta / (static_cast<double>(answers.size()) - 1.0));
          std::vector<Token> seq(perceived.begin(), perceived.end());
          seq.insert(seq.end(), {v.sep(), op_for(q.type, v), v.ans(), a, v.eos()});
          double sum = 0.0;
          for (double x : score(inst, seq)) sum += x;
          out.max_seq_error = std::max(out.max_seq_error, std::abs(std::exp(sum) - p));
          out.max_log_error = std::max(out.max_log_error, std::abs(sum - std::log(p)));
          total_oracle += p;
          total_impl += std::exp(sum);
          ++out.sequences;
        }
      }
      out.max_total_error = std::max({out.max_total_error, std::abs(total_oracle - 1.0), std::abs(total_impl - 1.0)});
    }
  }
  return out;
}

}  // namespace tgrl::testing
