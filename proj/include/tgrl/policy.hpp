#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tgrl/context.hpp"
#include "tgrl/rng.hpp"
#include "tgrl/vocab.hpp"

namespace tgrl {

enum class ArchKind { Tabular, Mlp };

std::string to_string(ArchKind kind);
ArchKind arch_kind_from_string(const std::string& name);

// Architecture descriptor. Together with the context layout it fixes the
// length and meaning of the flat parameter vector.
//
// Tabular: `table_rows` logit rows; a context selects a row by hashing its
// observation and window.
// Mlp: sparse one-hot input features -> tanh hidden layer -> logits.
// Parameter order is W1 [features x hidden], b1 [hidden], W2 [vocab x hidden], b2 [vocab].
struct PolicyArch {
  ArchKind kind = ArchKind::Tabular;
  ContextLayout layout;
  int hidden = 32;
  int table_rows = 4096;

  int vocab_size() const { return layout.vocab_size; }
  int num_features() const;
  std::size_t param_count() const;
  void validate() const;

  bool operator==(const PolicyArch&) const = default;
};

// Intermediate values of one forward pass, reused by backward().
struct Activations {
  std::vector<double> log_probs;  // normalized log-softmax over the vocabulary
  std::vector<double> hidden;     // tanh outputs (mlp only)
  std::vector<int> features;      // active input feature ids (mlp only)
  std::size_t row = 0;            // logit row (tabular only)
};

// A conditional categorical token distribution pi(token | context) with a
// flat parameter vector. Instances are immutable during rollouts; the
// trainer mutates parameters through `params_mut()` between steps.
class Policy {
 public:
  Policy() = default;
  Policy(PolicyArch arch, std::vector<double> params);

  static Policy zeros(const PolicyArch& arch);
  // Tabular: zeros. Mlp: every entry uniform in [-0.1, 0.1].
  static Policy initialize(const PolicyArch& arch, std::uint64_t seed);

  const PolicyArch& arch() const { return arch_; }
  std::span<const double> params() const { return params_; }
  std::vector<double>& params_mut() { return params_; }
  int vocab_size() const { return arch_.vocab_size(); }

  Activations forward(const Context& ctx) const;
  std::vector<double> log_probs(const Context& ctx) const;
  double log_prob(const Context& ctx, Token token) const;
  std::pair<Token, double> sample_token(const Context& ctx, Rng& rng) const;
  Token greedy_token(const Context& ctx) const;

  // Exact gradient of log pi(token | ctx) with respect to the parameters.
  std::vector<double> grad_log_prob(const Context& ctx, Token token) const;

  // grad += d(sum_v dlogits[v] * logit_v)/d(params), i.e. backpropagates a
  // logit-space cotangent through the forward pass recorded in `acts`.
  void backward(const Activations& acts, std::span<const double> dlogits,
                std::span<double> grad) const;

  // Row index for a tabular context; exposed for sparsity audits.
  std::size_t tabular_row(const Context& ctx) const;
  // Active one-hot feature ids for an mlp context.
  std::vector<int> mlp_features(const Context& ctx) const;

  bool operator==(const Policy&) const = default;

 private:
  void check_context(const Context& ctx) const;
  void logits_into(const Context& ctx, Activations& acts, std::span<double> logits) const;

  PolicyArch arch_;
  std::vector<double> params_;
};

// Deep copy; Policy already has value semantics, this names the intent.
inline Policy snapshot(const Policy& p) { return p; }

// Exact categorical KL(pi_a(.|ctx) || pi_b(.|ctx)).
double kl_to(const Policy& a, const Policy& b, const Context& ctx);

// KL(p || q) for two normalized log-probability vectors and its gradient
// with respect to the logits of p, written into `dlogits_p`.
double categorical_kl(std::span<const double> logp, std::span<const double> logq,
                      std::span<double> dlogits_p = {});

// In-place log-softmax; returns log-sum-exp of the input.
double log_softmax_inplace(std::span<double> logits);

// Binary checkpoint: magic, version, architecture, then the raw parameter
// doubles. Round trips are bit-exact.
void save_checkpoint(const Policy& policy, const std::filesystem::path& path);
Policy load_checkpoint(const std::filesystem::path& path);

}  // namespace tgrl
