#pragma once

#include <string>
#include <vector>

#include "mwpforge/expr.hpp"

namespace mwpforge::scenario {

struct Token {
  enum class Kind { Word, Number, Punct };
  Kind kind;
  std::string text;        // as it appears in the source
  std::size_t begin, end;  // byte span in the source text
};

// A number occurrence in scenario text. Pairing and alignment compare
// normalized literals, so "14.60" in text matches equation node "14.6".
struct NumberMention {
  std::string literal;  // normalized decimal
  double value = 0.0;
  std::string unit;         // lowercased head noun, "" when none found
  int token_index = -1;     // position in the token sequence
  std::size_t char_begin = 0, char_end = 0;
  int mention_ordinal = 0;  // 0-based among mentions sharing this literal
};

struct ScenarioDoc {
  std::string text;
  std::vector<Token> tokens;
  std::vector<NumberMention> mentions;  // ordered by token_index
};

// Whitespace/punctuation tokenization; numeric tokens follow the decimal
// literal pattern. Throws EmptyScenario on empty or all-whitespace input.
ScenarioDoc lex_scenario(const std::string& text);

// Unit = first alphabetic token within the 2 tokens after the number that is
// not on the stop list, lowercased. Empty string when none qualifies.
extern const std::vector<std::string> kDefaultUnitStopList;
ScenarioDoc assign_units(ScenarioDoc doc,
                         const std::vector<std::string>& stop_list = kDefaultUnitStopList);

// Maps equation Number nodes (by pre-order index) to scenario mentions.
// Repeated values align left to right and saturate at the last mention.
struct Alignment {
  // pre-order index -> mention index; -1 for operators and unmatched numbers
  std::vector<int> node_to_mention;
  std::vector<int> unmatched_nodes;  // pre-order indices of unmatched numbers

  bool aligned(int node_index) const {
    return node_index >= 0 && node_index < static_cast<int>(node_to_mention.size()) &&
           node_to_mention[node_index] >= 0;
  }
};

Alignment align_numbers(const ScenarioDoc& doc, const expr::Equation& eq);

// Tokens joined with single spaces; lex_scenario is idempotent over this.
std::string render_tokens(const ScenarioDoc& doc);

}  // namespace mwpforge::scenario
