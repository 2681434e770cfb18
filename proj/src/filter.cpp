#include "mwpforge/filter.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mwpforge/errors.hpp"

namespace mwpforge::filter {

bool answers_match(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) return false;
  return std::abs(a - b) <= 1e-6 * std::max({1.0, std::abs(a), std::abs(b)});
}

FilterDecision filter_one(const Candidate& candidate, ExpertSolver& expert, int k) {
  if (k < 1) throw ConfigError("filter k must be at least 1, got " + std::to_string(k));
  FilterDecision d;
  double answer = 0.0;
  try {
    answer = expr::evaluate(candidate.equation);
    if (!std::isfinite(answer)) throw NonFiniteValue("candidate answer is not finite");
    d.candidate_answer = answer;
  } catch (const Error& e) {
    d.candidate_error = true;
    d.candidate_error_kind = e.kind();
    return d;
  }

  for (const expr::Equation& eq : expert.solve(candidate.scenario, candidate.question, k)) {
    double expert_answer;
    try {
      expert_answer = expr::evaluate(eq);
    } catch (const Error&) {
      continue;  // failed expert equations do not occupy a rank
    }
    if (!std::isfinite(expert_answer)) continue;
    d.expert_answers.push_back(expert_answer);
  }
  for (std::size_t i = 0; i < d.expert_answers.size(); ++i) {
    if (answers_match(answer, d.expert_answers[i])) {
      d.accepted = true;
      d.matched_rank = static_cast<int>(i);
      break;
    }
  }
  return d;
}

EnumerativeExpert::EnumerativeExpert(int max_operators) : max_operators_(max_operators) {
  if (max_operators < 0) throw ConfigError("max_operators must be non-negative");
}

namespace {

// All trees whose leaves are exactly `literals[begin..end)` in order.
void trees_over(const std::vector<std::string>& literals, std::size_t begin, std::size_t end,
                std::vector<expr::NodePtr>& out) {
  if (end - begin == 1) {
    out.push_back(expr::make_number(literals[begin]));
    return;
  }
  for (std::size_t split = begin + 1; split < end; ++split) {
    std::vector<expr::NodePtr> lefts, rights;
    trees_over(literals, begin, split, lefts);
    trees_over(literals, split, end, rights);
    for (const auto& l : lefts)
      for (const auto& r : rights)
        for (char op : {'+', '-', '*', '/'}) out.push_back(expr::make_operator(op, l, r));
  }
}

void ordered_selections(const std::vector<std::string>& pool, std::size_t size,
                        std::vector<std::string>& current, std::vector<bool>& used,
                        std::vector<std::vector<std::string>>& out) {
  if (current.size() == size) {
    out.push_back(current);
    return;
  }
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    current.push_back(pool[i]);
    ordered_selections(pool, size, current, used, out);
    current.pop_back();
    used[i] = false;
  }
}

}  // namespace

std::vector<expr::Equation> EnumerativeExpert::solve(const std::string& scenario,
                                                     const std::string& question, int k) {
  (void)question;  // the brute-force expert only looks at the numbers
  scenario::ScenarioDoc doc = scenario::lex_scenario(scenario);

  std::vector<std::string> pool;
  for (const auto& m : doc.mentions) pool.push_back(m.literal);

  struct Ranked {
    std::size_t op_count;
    std::string key;
    expr::NodePtr tree;
  };
  std::vector<Ranked> ranked;
  std::set<std::string> seen_keys;

  std::size_t max_leaves = std::min(pool.size(), static_cast<std::size_t>(max_operators_) + 1);
  for (std::size_t size = 1; size <= max_leaves; ++size) {
    std::vector<std::vector<std::string>> selections;
    std::vector<std::string> current;
    std::vector<bool> used(pool.size(), false);
    ordered_selections(pool, size, current, used, selections);
    for (const auto& leaves : selections) {
      std::vector<expr::NodePtr> trees;
      trees_over(leaves, 0, leaves.size(), trees);
      for (const auto& tree : trees) {
        std::string key = expr::canonical_key(tree);
        if (!seen_keys.insert(key).second) continue;
        ranked.push_back({expr::count_operator_nodes(tree), std::move(key), tree});
      }
    }
  }

  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    return a.op_count != b.op_count ? a.op_count < b.op_count : a.key < b.key;
  });

  std::vector<expr::Equation> out;
  std::vector<double> answers;
  for (const Ranked& r : ranked) {
    if (static_cast<int>(out.size()) >= k) break;
    double value;
    try {
      value = expr::evaluate(r.tree);
    } catch (const Error&) {
      continue;  // zero divisors and the like
    }
    if (!std::isfinite(value)) continue;
    bool duplicate = false;
    for (double a : answers)
      if (answers_match(a, value)) {
        duplicate = true;
        break;
      }
    if (duplicate) continue;
    answers.push_back(value);
    out.push_back(expr::make_equation(r.tree));
  }
  return out;
}

OracleExpert::OracleExpert(std::map<std::string, std::vector<expr::Equation>> table)
    : table_(std::move(table)) {}

std::vector<expr::Equation> OracleExpert::solve(const std::string& scenario,
                                                const std::string& question, int k) {
  (void)scenario;
  auto it = table_.find(question);
  if (it == table_.end()) return {};
  std::vector<expr::Equation> out = it->second;
  if (static_cast<int>(out.size()) > k) out.resize(static_cast<std::size_t>(k));
  return out;
}

std::vector<KSweepEntry> sweep_k(const std::vector<Candidate>& corpus, ExpertSolver& expert,
                                 const std::vector<int>& k_range) {
  if (k_range.empty()) throw ConfigError("k_range must be non-empty");
  std::vector<KSweepEntry> out;
  for (int k : k_range) {
    KSweepEntry entry;
    entry.k = k;
    for (const Candidate& c : corpus) {
      if (filter_one(c, expert, k).accepted)
        ++entry.accepted;
      else
        ++entry.rejected;
    }
    out.push_back(entry);
  }
  return out;
}

}  // namespace mwpforge::filter
