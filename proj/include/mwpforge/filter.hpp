#pragma once

#include <map>
#include <string>
#include <vector>

#include "mwpforge/expr.hpp"
#include "mwpforge/scenario.hpp"

namespace mwpforge::filter {

constexpr int kDefaultTopK = 5;

struct Candidate {
  std::string scenario;
  std::string question;
  expr::Equation equation;
};

// |a - b| <= 1e-6 * max(1, |a|, |b|); non-finite inputs never match.
bool answers_match(double a, double b);

// A solver producing up to k candidate equations for an MWP, best first.
class ExpertSolver {
public:
  virtual ~ExpertSolver() = default;
  virtual std::vector<expr::Equation> solve(const std::string& scenario,
                                            const std::string& question, int k) = 0;
  // whether solve may be called from several threads at once
  virtual bool supports_concurrent_solve() const { return false; }
};

struct FilterDecision {
  bool accepted = false;
  bool candidate_error = false;
  std::string candidate_error_kind;    // set when the candidate failed to evaluate
  double candidate_answer = 0.0;       // meaningful only when !candidate_error
  int matched_rank = -1;               // index into expert_answers; -1 = no match
  std::vector<double> expert_answers;  // evaluated expert answers, best first
};

// Accept iff the candidate's answer matches one of the expert's top-k
// answers. Expert equations that fail to evaluate are skipped and do not
// occupy a rank. A candidate whose own equation errors is never accepted.
FilterDecision filter_one(const Candidate& candidate, ExpertSolver& expert,
                          int k = kDefaultTopK);

// Brute-force stand-in for a trained solver: enumerates every expression
// over the scenario's numbers (each mention used at most once, up to
// max_operators operators), ranks by (operator count, canonical key), and
// returns the best equations with pairwise-distinct answers.
class EnumerativeExpert : public ExpertSolver {
public:
  explicit EnumerativeExpert(int max_operators = 3);
  std::vector<expr::Equation> solve(const std::string& scenario, const std::string& question,
                                    int k) override;
  bool supports_concurrent_solve() const override { return true; }

private:
  int max_operators_;
};

// Scripted fixture: maps a question to its equation list; unknown questions
// get an empty list.
class OracleExpert : public ExpertSolver {
public:
  explicit OracleExpert(std::map<std::string, std::vector<expr::Equation>> table);
  std::vector<expr::Equation> solve(const std::string& scenario, const std::string& question,
                                    int k) override;
  bool supports_concurrent_solve() const override { return true; }

private:
  std::map<std::string, std::vector<expr::Equation>> table_;
};

struct KSweepEntry {
  int k = 0;
  int accepted = 0;
  int rejected = 0;
};

// Acceptance tallies for each k in k_range. Monotone non-decreasing in k
// for any expert whose k-truncation is a prefix of its (k+1)-truncation.
std::vector<KSweepEntry> sweep_k(const std::vector<Candidate>& corpus, ExpertSolver& expert,
                                 const std::vector<int>& k_range);

}  // namespace mwpforge::filter
