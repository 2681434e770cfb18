#pragma once

#include <string>
#include <vector>

#include "mwpforge/expr.hpp"
#include "mwpforge/scenario.hpp"

namespace mwpforge::geneq {

enum class Strategy { SubEquation, SameUnit, DifferentUnits };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct CandidateEquation {
  expr::Equation eq;
  Strategy strategy;
  std::string provenance;  // source subtree or source mention pair
};

// Operator-rooted proper subtrees of the original equation.
std::vector<CandidateEquation> gen_sub_equations(const scenario::ScenarioDoc& doc,
                                                 const expr::Equation& eq);

// For every unordered pair of mentions sharing a non-empty unit:
// a+b, a-b, b-a, a/b, b/a (a is the earlier mention).
std::vector<CandidateEquation> gen_same_unit(const scenario::ScenarioDoc& doc);

// For every unordered pair of mentions with differing non-empty units: a*b.
std::vector<CandidateEquation> gen_different_units(const scenario::ScenarioDoc& doc);

// Union of the three strategies in order SubEquation, SameUnit,
// DifferentUnits, deduplicated by canonical key, original equation removed.
std::vector<CandidateEquation> generate_all(const scenario::ScenarioDoc& doc,
                                            const expr::Equation& original);

}  // namespace mwpforge::geneq
