#pragma once

#include <vector>

#include "tgrl/vocab.hpp"

namespace tgrl {

// Shape of the conditioning context: one categorical field per observation
// slot plus a window of the last `window` generated tokens.
struct ContextLayout {
  std::vector<int> obs_cardinality;
  int window = 4;
  int vocab_size = 0;

  bool operator==(const ContextLayout&) const = default;
};

// What a policy conditions on at one generation step. The window is
// left-padded with PAD and always has exactly `layout.window` entries.
struct Context {
  std::vector<int> obs;
  std::vector<Token> window;
};

}  // namespace tgrl
