#include "mwpforge/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <unordered_map>

namespace mwpforge::scenario {

namespace {

bool is_word_byte(unsigned char c) { return std::isalpha(c) || c >= 0x80; }

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

const std::vector<std::string> kDefaultUnitStopList = {"per", "of", "a", "an", "the", "and"};

ScenarioDoc lex_scenario(const std::string& text) {
  ScenarioDoc doc;
  doc.text = text;
  const std::size_t n = text.size();
  std::size_t i = 0;
  bool any = false;
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    any = true;
    std::size_t start = i;
    if (std::isdigit(c)) {
      while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      // Fraction only when a digit follows the dot, so "14.60." keeps the
      // final period as sentence punctuation.
      if (i + 1 < n && text[i] == '.' && std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
        ++i;
        while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      }
      doc.tokens.push_back({Token::Kind::Number, text.substr(start, i - start), start, i});
    } else if (is_word_byte(c)) {
      while (i < n && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
      doc.tokens.push_back({Token::Kind::Word, text.substr(start, i - start), start, i});
    } else {
      ++i;
      doc.tokens.push_back({Token::Kind::Punct, text.substr(start, 1), start, i});
    }
  }
  if (!any) throw EmptyScenario("scenario text is empty");

  std::unordered_map<std::string, int> ordinal;
  for (int t = 0; t < static_cast<int>(doc.tokens.size()); ++t) {
    const Token& tok = doc.tokens[t];
    if (tok.kind != Token::Kind::Number) continue;
    NumberMention m;
    m.literal = expr::normalize_literal(tok.text);
    m.value = std::strtod(m.literal.c_str(), nullptr);
    m.token_index = t;
    m.char_begin = tok.begin;
    m.char_end = tok.end;
    m.mention_ordinal = ordinal[m.literal]++;
    doc.mentions.push_back(std::move(m));
  }
  return doc;
}

ScenarioDoc assign_units(ScenarioDoc doc, const std::vector<std::string>& stop_list) {
  for (auto& m : doc.mentions) {
    m.unit.clear();
    for (int offset = 1; offset <= 2; ++offset) {
      int t = m.token_index + offset;
      if (t >= static_cast<int>(doc.tokens.size())) break;
      const Token& tok = doc.tokens[t];
      if (tok.kind != Token::Kind::Word) continue;
      std::string lower = lowercase(tok.text);
      if (std::find(stop_list.begin(), stop_list.end(), lower) != stop_list.end()) continue;
      m.unit = lower;
      break;
    }
  }
  return doc;
}

Alignment align_numbers(const ScenarioDoc& doc, const expr::Equation& eq) {
  // Mentions per literal, in token order.
  std::unordered_map<std::string, std::vector<int>> mentions_by_literal;
  for (int i = 0; i < static_cast<int>(doc.mentions.size()); ++i) {
    mentions_by_literal[doc.mentions[i].literal].push_back(i);
  }

  Alignment out;
  std::vector<std::string> labels = expr::to_pre_order(eq);
  out.node_to_mention.assign(labels.size(), -1);
  std::unordered_map<std::string, int> occurrence;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    const std::string& label = labels[i];
    if (label.size() == 1 &&
        (label[0] == '+' || label[0] == '-' || label[0] == '*' || label[0] == '/')) {
      continue;
    }
    auto it = mentions_by_literal.find(label);
    if (it == mentions_by_literal.end()) {
      out.unmatched_nodes.push_back(i);
      continue;
    }
    int occ = occurrence[label]++;
    const auto& slots = it->second;
    out.node_to_mention[i] = slots[std::min<std::size_t>(occ, slots.size() - 1)];
  }
  return out;
}

std::string render_tokens(const ScenarioDoc& doc) {
  std::string out;
  for (const auto& tok : doc.tokens) {
    if (!out.empty()) out += ' ';
    out += tok.text;
  }
  return out;
}

}  // namespace mwpforge::scenario
