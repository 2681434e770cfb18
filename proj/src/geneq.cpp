#include "mwpforge/geneq.hpp"

#include <unordered_set>

namespace mwpforge::geneq {

namespace {

std::string pair_provenance(const scenario::NumberMention& a, const scenario::NumberMention& b) {
  return "pair:" + a.literal + "[" + a.unit + "]," + b.literal + "[" + b.unit + "]";
}

CandidateEquation pair_candidate(char op, const scenario::NumberMention& a,
                                 const scenario::NumberMention& b, Strategy strategy) {
  auto eq = expr::make_equation(
      expr::make_operator(op, expr::make_number(a.literal), expr::make_number(b.literal)));
  return {std::move(eq), strategy, pair_provenance(a, b)};
}

}  // namespace

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::SubEquation: return "sub-equation";
    case Strategy::SameUnit: return "same-unit";
    default: return "different-units";
  }
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "sub-equation") return Strategy::SubEquation;
  if (name == "same-unit") return Strategy::SameUnit;
  if (name == "different-units") return Strategy::DifferentUnits;
  throw SchemaError("unknown strategy '" + name + "'");
}

std::vector<CandidateEquation> gen_sub_equations(const scenario::ScenarioDoc&,
                                                 const expr::Equation& eq) {
  std::vector<CandidateEquation> out;
  for (auto& sub : expr::sub_equations(eq)) {
    std::string provenance = "subtree:" + expr::canonical_key(sub);
    out.push_back({std::move(sub), Strategy::SubEquation, std::move(provenance)});
  }
  return out;
}

std::vector<CandidateEquation> gen_same_unit(const scenario::ScenarioDoc& doc) {
  std::vector<CandidateEquation> out;
  const auto& ms = doc.mentions;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    if (ms[i].unit.empty()) continue;
    for (std::size_t j = i + 1; j < ms.size(); ++j) {
      if (ms[j].unit != ms[i].unit) continue;
      const auto& a = ms[i];
      const auto& b = ms[j];
      out.push_back(pair_candidate('+', a, b, Strategy::SameUnit));
      out.push_back(pair_candidate('-', a, b, Strategy::SameUnit));
      out.push_back(pair_candidate('-', b, a, Strategy::SameUnit));
      out.push_back(pair_candidate('/', a, b, Strategy::SameUnit));
      out.push_back(pair_candidate('/', b, a, Strategy::SameUnit));
    }
  }
  return out;
}

std::vector<CandidateEquation> gen_different_units(const scenario::ScenarioDoc& doc) {
  std::vector<CandidateEquation> out;
  const auto& ms = doc.mentions;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    if (ms[i].unit.empty()) continue;
    for (std::size_t j = i + 1; j < ms.size(); ++j) {
      if (ms[j].unit.empty() || ms[j].unit == ms[i].unit) continue;
      out.push_back(pair_candidate('*', ms[i], ms[j], Strategy::DifferentUnits));
    }
  }
  return out;
}

std::vector<CandidateEquation> generate_all(const scenario::ScenarioDoc& doc,
                                            const expr::Equation& original) {
  std::vector<CandidateEquation> merged;
  auto append = [&](std::vector<CandidateEquation>&& batch) {
    for (auto& c : batch) merged.push_back(std::move(c));
  };
  append(gen_sub_equations(doc, original));
  append(gen_same_unit(doc));
  append(gen_different_units(doc));

  std::unordered_set<std::string> seen;
  seen.insert(expr::canonical_key(original));
  std::vector<CandidateEquation> out;
  for (auto& c : merged) {
    if (seen.insert(expr::canonical_key(c.eq)).second) out.push_back(std::move(c));
  }
  return out;
}

}  // namespace mwpforge::geneq
