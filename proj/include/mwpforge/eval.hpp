#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mwpforge/expr.hpp"

namespace mwpforge::eval {

struct ProblemItem {
  std::string question;
  expr::Equation equation;
  double answer = 0.0;  // evaluate(equation), filled at load
};

// One scenario with its diverse questions. The first item is the original
// problem; the rest are its variations.
struct ProblemGroup {
  std::string group_id;
  std::string scenario;
  std::vector<ProblemItem> items;
};

// JSONL, one group per line: {group_id, scenario, items: [{question, equation}]}.
// group_id may be a JSON string or number; it is kept as text. Structural
// problems raise SchemaError naming the line; equations that fail to parse
// or evaluate raise EquationError naming the item.
std::vector<ProblemGroup> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<ProblemGroup>& groups);

// Predictions for (group_id, item_index) pairs. A pair may also be recorded
// as a parse failure, which scores as wrong.
class PredictionSet {
public:
  void set(const std::string& group_id, int item_index, expr::Equation equation);
  void set_failure(const std::string& group_id, int item_index);
  // nullptr = no prediction recorded
  const expr::Equation* find(const std::string& group_id, int item_index) const;
  bool has(const std::string& group_id, int item_index) const;
  std::size_t size() const { return map_.size(); }

private:
  // present but empty optional = recorded failure
  std::map<std::pair<std::string, int>, std::optional<expr::Equation>> map_;
};

// JSONL, one prediction per line: {group_id, item_index, equation}. An
// unparseable equation string records a failure instead of raising.
PredictionSet load_predictions(const std::string& path);

// Fraction of items whose prediction evaluates to the gold answer within
// the filter tolerance. Missing, unparseable, or erroring predictions count
// wrong. Empty dataset scores 0.
double accuracy(const std::vector<ProblemGroup>& dataset, const PredictionSet& preds);

// Fraction of groups whose items are all correct. Never exceeds accuracy().
double group_accuracy(const std::vector<ProblemGroup>& dataset, const PredictionSet& preds);

// Which items participate in solver-driven evaluation.
enum class DeqScope {
  All,        // every item of every group
  Originals,  // only each group's first item
};

// Drives an external solver over one prompt per line on stdin, reading one
// equation per line from stdout. include_question controls whether the
// prompt is "scenario question" or the scenario alone. A line-count
// mismatch raises SolverProtocolError. parallel_batches > 1 splits the
// prompts into that many chunks solved concurrently, results re-ordered.
double solver_accuracy(const std::vector<ProblemGroup>& dataset, const std::string& solver_cmd,
                       bool include_question, DeqScope scope = DeqScope::All,
                       int parallel_batches = 1);

// Scenario-only accuracy (questions deleted). Lower means the solver really
// needs the question, which is the desired behavior.
double deq_accuracy(const std::vector<ProblemGroup>& dataset, const std::string& solver_cmd,
                    DeqScope scope = DeqScope::All, int parallel_batches = 1);

// Full-question solver run over every item, keyed like a predictions file;
// unparseable output lines are recorded as failures.
PredictionSet solver_predictions(const std::vector<ProblemGroup>& dataset,
                                 const std::string& solver_cmd, int parallel_batches = 1);

struct GroupBreakdown {
  std::string group_id;
  int correct = 0;
  int total = 0;
  bool all_correct = false;
};

struct EvalReport {
  double accuracy = 0.0;
  double group_accuracy = 0.0;
  std::optional<double> deq_accuracy;  // present when a solver was consulted
  std::vector<GroupBreakdown> groups;
};

EvalReport evaluate(const std::vector<ProblemGroup>& dataset, const PredictionSet& preds);

std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace mwpforge::eval
