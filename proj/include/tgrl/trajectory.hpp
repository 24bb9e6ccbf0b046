#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgrl/vocab.hpp"

namespace tgrl {

enum class Origin { OnPolicy, Expert };

std::string to_string(Origin origin);

// Perception span is [0, perception_end()); it ends with the first SEP when
// one exists. Reasoning span is [perception_end(), length). Without a SEP the
// whole sequence is perception and the reasoning span is empty.
struct SegmentSpans {
  int length = 0;
  int sep = -1;  // index of the first SEP, -1 if absent

  int perception_end() const { return sep < 0 ? length : sep + 1; }
  int reasoning_begin() const { return perception_end(); }
  bool has_sep() const { return sep >= 0; }
  bool in_perception(int t) const { return t < perception_end(); }

  bool operator==(const SegmentSpans&) const = default;
};

SegmentSpans split_segments(std::span<const Token> tokens, const Vocab& vocab);

struct Trajectory {
  std::vector<Token> tokens;
  SegmentSpans spans;
  Origin origin = Origin::OnPolicy;
  // log pi_old for on-policy members, log pi_expert for expert members.
  std::vector<double> logp_behavior;
  std::optional<Token> prediction;
  int reward = 0;
  bool truncated = false;

  int size() const { return static_cast<int>(tokens.size()); }
  bool is_expert() const { return origin == Origin::Expert; }
};

}  // namespace tgrl
