#include "tgrl/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "tgrl/error.hpp"

namespace tgrl {

std::string to_string(ArchKind kind) {
  return kind == ArchKind::Tabular ? "tabular" : "mlp";
}

ArchKind arch_kind_from_string(const std::string& name) {
  if (name == "tabular") return ArchKind::Tabular;
  if (name == "mlp") return ArchKind::Mlp;
  throw ConfigError("unknown architecture '" + name + "' (expected tabular|mlp)");
}

int PolicyArch::num_features() const {
  const int obs = std::accumulate(layout.obs_cardinality.begin(), layout.obs_cardinality.end(), 0);
  return obs + layout.window * layout.vocab_size;
}

std::size_t PolicyArch::param_count() const {
  const auto v = static_cast<std::size_t>(layout.vocab_size);
  if (kind == ArchKind::Tabular) return static_cast<std::size_t>(table_rows) * v;
  const auto h = static_cast<std::size_t>(hidden);
  const auto d = static_cast<std::size_t>(num_features());
  return d * h + h + v * h + v;
}

void PolicyArch::validate() const {
  if (layout.vocab_size < 2) throw ConfigError("vocabulary must have at least 2 tokens");
  if (layout.window < 0) throw ConfigError("context window must be non-negative", "policy.window");
  for (int c : layout.obs_cardinality) {
    if (c < 1) throw ConfigError("observation field cardinality must be positive");
  }
  if (kind == ArchKind::Tabular && table_rows < 1) {
    throw ConfigError("must be >= 1", "policy.table_rows");
  }
  if (kind == ArchKind::Mlp && hidden < 1) throw ConfigError("must be >= 1", "policy.hidden");
}

Policy::Policy(PolicyArch arch, std::vector<double> params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  arch_.validate();
  if (params_.size() != arch_.param_count()) {
    throw InputError("parameter vector length " + std::to_string(params_.size()) +
                     " does not match architecture (" + std::to_string(arch_.param_count()) + ")");
  }
  for (double x : params_) {
    if (!std::isfinite(x)) throw InputError("policy parameters must be finite");
  }
}

Policy Policy::zeros(const PolicyArch& arch) {
  return Policy(arch, std::vector<double>(arch.param_count(), 0.0));
}

Policy Policy::initialize(const PolicyArch& arch, std::uint64_t seed) {
  if (arch.kind == ArchKind::Tabular) return zeros(arch);
  Rng rng(seed);
  std::vector<double> params(arch.param_count());
  for (double& x : params) x = -0.1 + 0.2 * uniform01(rng);
  return Policy(arch, std::move(params));
}

void Policy::check_context(const Context& ctx) const {
  const auto& layout = arch_.layout;
  if (ctx.obs.size() != layout.obs_cardinality.size()) {
    throw InputError("context observation has wrong length");
  }
  if (ctx.window.size() != static_cast<std::size_t>(layout.window)) {
    throw InputError("context window has wrong length");
  }
  for (std::size_t i = 0; i < ctx.obs.size(); ++i) {
    if (ctx.obs[i] < 0 || ctx.obs[i] >= layout.obs_cardinality[i]) {
      throw InputError("observation field " + std::to_string(i) + " out of range");
    }
  }
  for (Token t : ctx.window) {
    if (t < 0 || t >= layout.vocab_size) throw InputError("window token out of range");
  }
}

std::size_t Policy::tabular_row(const Context& ctx) const {
  // FNV-1a over the context fields.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](int v) {
    auto u = static_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) {
      h ^= (u >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (int v : ctx.obs) feed(v);
  feed(-1);
  for (Token t : ctx.window) feed(t);
  return static_cast<std::size_t>(mix64(h) % static_cast<std::uint64_t>(arch_.table_rows));
}

std::vector<int> Policy::mlp_features(const Context& ctx) const {
  const auto& layout = arch_.layout;
  std::vector<int> features;
  features.reserve(ctx.obs.size() + ctx.window.size());
  int offset = 0;
  for (std::size_t i = 0; i < ctx.obs.size(); ++i) {
    features.push_back(offset + ctx.obs[i]);
    offset += layout.obs_cardinality[i];
  }
  for (std::size_t c = 0; c < ctx.window.size(); ++c) {
    features.push_back(offset + static_cast<int>(c) * layout.vocab_size + ctx.window[c]);
  }
  return features;
}

void Policy::logits_into(const Context& ctx, Activations& acts, std::span<double> logits) const {
  const int v = vocab_size();
  if (arch_.kind == ArchKind::Tabular) {
    acts.row = tabular_row(ctx);
    const double* row = params_.data() + acts.row * static_cast<std::size_t>(v);
    std::copy(row, row + v, logits.begin());
    return;
  }
  const int h = arch_.hidden;
  const auto d = static_cast<std::size_t>(arch_.num_features());
  const double* w1 = params_.data();
  const double* b1 = w1 + d * h;
  const double* w2 = b1 + h;
  const double* b2 = w2 + static_cast<std::size_t>(v) * h;

  acts.features = mlp_features(ctx);
  acts.hidden.assign(b1, b1 + h);
  for (int f : acts.features) {
    const double* col = w1 + static_cast<std::size_t>(f) * h;
    for (int j = 0; j < h; ++j) acts.hidden[j] += col[j];
  }
  for (double& a : acts.hidden) a = std::tanh(a);
  for (int k = 0; k < v; ++k) {
    const double* row = w2 + static_cast<std::size_t>(k) * h;
    double z = b2[k];
    for (int j = 0; j < h; ++j) z += row[j] * acts.hidden[j];
    logits[k] = z;
  }
}

double log_softmax_inplace(std::span<double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  for (double& z : logits) z -= lse;
  return lse;
}

Activations Policy::forward(const Context& ctx) const {
  check_context(ctx);
  Activations acts;
  acts.log_probs.resize(static_cast<std::size_t>(vocab_size()));
  logits_into(ctx, acts, acts.log_probs);
  log_softmax_inplace(acts.log_probs);
  return acts;
}

std::vector<double> Policy::log_probs(const Context& ctx) const { return forward(ctx).log_probs; }

double Policy::log_prob(const Context& ctx, Token token) const {
  if (token < 0 || token >= vocab_size()) throw InputError("token id out of range");
  return forward(ctx).log_probs[static_cast<std::size_t>(token)];
}

std::pair<Token, double> Policy::sample_token(const Context& ctx, Rng& rng) const {
  const auto lp = log_probs(ctx);
  std::vector<double> probs(lp.size());
  std::transform(lp.begin(), lp.end(), probs.begin(), [](double x) { return std::exp(x); });
  const Token t = sample_categorical(rng, probs);
  return {t, lp[static_cast<std::size_t>(t)]};
}

Token Policy::greedy_token(const Context& ctx) const {
  const auto lp = log_probs(ctx);
  return static_cast<Token>(std::max_element(lp.begin(), lp.end()) - lp.begin());
}

void Policy::backward(const Activations& acts, std::span<const double> dlogits,
                      std::span<double> grad) const {
  const int v = vocab_size();
  if (grad.size() != params_.size() || dlogits.size() != static_cast<std::size_t>(v)) {
    throw InputError("backward: buffer size mismatch");
  }
  if (arch_.kind == ArchKind::Tabular) {
    double* row = grad.data() + acts.row * static_cast<std::size_t>(v);
    for (int k = 0; k < v; ++k) row[k] += dlogits[k];
    return;
  }
  const int h = arch_.hidden;
  const auto d = static_cast<std::size_t>(arch_.num_features());
  const double* w2 = params_.data() + d * h + h;
  double* gw1 = grad.data();
  double* gb1 = gw1 + d * h;
  double* gw2 = gb1 + h;
  double* gb2 = gw2 + static_cast<std::size_t>(v) * h;

  std::vector<double> dhidden(static_cast<std::size_t>(h), 0.0);
  for (int k = 0; k < v; ++k) {
    const double g = dlogits[k];
    if (g == 0.0) continue;
    gb2[k] += g;
    double* grow = gw2 + static_cast<std::size_t>(k) * h;
    const double* wrow = w2 + static_cast<std::size_t>(k) * h;
    for (int j = 0; j < h; ++j) {
      grow[j] += g * acts.hidden[j];
      dhidden[j] += g * wrow[j];
    }
  }
  for (int j = 0; j < h; ++j) {
    dhidden[j] *= 1.0 - acts.hidden[j] * acts.hidden[j];
    gb1[j] += dhidden[j];
  }
  for (int f : acts.features) {
    double* col = gw1 + static_cast<std::size_t>(f) * h;
    for (int j = 0; j < h; ++j) col[j] += dhidden[j];
  }
}

std::vector<double> Policy::grad_log_prob(const Context& ctx, Token token) const {
  if (token < 0 || token >= vocab_size()) throw InputError("token id out of range");
  const auto acts = forward(ctx);
  std::vector<double> dlogits(acts.log_probs.size());
  for (std::size_t k = 0; k < dlogits.size(); ++k) dlogits[k] = -std::exp(acts.log_probs[k]);
  dlogits[static_cast<std::size_t>(token)] += 1.0;
  std::vector<double> grad(params_.size(), 0.0);
  backward(acts, dlogits, grad);
  return grad;
}

double categorical_kl(std::span<const double> logp, std::span<const double> logq,
                      std::span<double> dlogits_p) {
  double kl = 0.0;
  for (std::size_t k = 0; k < logp.size(); ++k) {
    const double p = std::exp(logp[k]);
    if (p > 0.0) kl += p * (logp[k] - logq[k]);
  }
  if (!dlogits_p.empty()) {
    for (std::size_t k = 0; k < logp.size(); ++k) {
      const double p = std::exp(logp[k]);
      dlogits_p[k] = p > 0.0 ? p * (logp[k] - logq[k] - kl) : 0.0;
    }
  }
  return kl;
}

double kl_to(const Policy& a, const Policy& b, const Context& ctx) {
  if (!(a.arch() == b.arch())) throw InputError("kl_to: architecture mismatch");
  const auto la = a.log_probs(ctx);
  const auto lb = b.log_probs(ctx);
  return std::max(0.0, categorical_kl(la, lb));
}

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'G', 'R', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw InputError("checkpoint truncated");
  return value;
}

}  // namespace

void save_checkpoint(const Policy& policy, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open checkpoint for writing: " + path.string());
  const auto& arch = policy.arch();
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, arch.kind == ArchKind::Tabular ? 0U : 1U);
  put<std::int32_t>(out, arch.hidden);
  put<std::int32_t>(out, arch.table_rows);
  put<std::int32_t>(out, arch.layout.window);
  put<std::int32_t>(out, arch.layout.vocab_size);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.layout.obs_cardinality.size()));
  for (int c : arch.layout.obs_cardinality) put<std::int32_t>(out, c);
  const auto params = policy.params();
  put<std::uint64_t>(out, params.size());
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw InputError("failed writing checkpoint: " + path.string());
}

Policy load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InputError("not a checkpoint file: " + path.string());
  if (get<std::uint32_t>(in) != kVersion) throw InputError("unsupported checkpoint version");
  PolicyArch arch;
  arch.kind = get<std::uint32_t>(in) == 0U ? ArchKind::Tabular : ArchKind::Mlp;
  arch.hidden = get<std::int32_t>(in);
  arch.table_rows = get<std::int32_t>(in);
  arch.layout.window = get<std::int32_t>(in);
  arch.layout.vocab_size = get<std::int32_t>(in);
  const auto n_obs = get<std::uint32_t>(in);
  if (n_obs > 1024) throw InputError("corrupt checkpoint header");
  for (std::uint32_t i = 0; i < n_obs; ++i) arch.layout.obs_cardinality.push_back(get<std::int32_t>(in));
  const auto n = get<std::uint64_t>(in);
  arch.validate();
  if (n != arch.param_count()) throw InputError("checkpoint parameter count mismatch");
  std::vector<double> params(n);
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw InputError("checkpoint truncated");
  return Policy(std::move(arch), std::move(params));
}

}  // namespace tgrl
