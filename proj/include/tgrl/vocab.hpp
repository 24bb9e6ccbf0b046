#pragma once

#include <string>

namespace tgrl {

using Token = int;

// Token alphabet for an environment with `num_symbols` cell symbols.
//
// Layout: [0, S) cell symbols, then EVEN, ODD (parity answers), one reasoning
// operator per query type, and the specials SEP, ANS, EOS, PAD.
struct Vocab {
  int num_symbols = 0;

  static constexpr int kNumSpecial = 9;

  int size() const { return num_symbols + kNumSpecial; }
  Token symbol(int s) const { return s; }
  Token even() const { return num_symbols; }
  Token odd() const { return num_symbols + 1; }
  Token op_point() const { return num_symbols + 2; }
  Token op_majority() const { return num_symbols + 3; }
  Token op_parity() const { return num_symbols + 4; }
  Token sep() const { return num_symbols + 5; }
  Token ans() const { return num_symbols + 6; }
  Token eos() const { return num_symbols + 7; }
  Token pad() const { return num_symbols + 8; }

  bool is_symbol(Token t) const { return t >= 0 && t < num_symbols; }
  bool contains(Token t) const { return t >= 0 && t < size(); }

  std::string name(Token t) const;
};

}  // namespace tgrl
