#include "mwpforge/eval.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "mwpforge/errors.hpp"
#include "mwpforge/filter.hpp"

namespace mwpforge::eval {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string id_as_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();  // numbers keep their literal form
}

}  // namespace

std::vector<ProblemGroup> load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read dataset: " + path);
  std::vector<ProblemGroup> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string where = "line " + std::to_string(line_no);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw SchemaError(where + ": not a JSON object");
    if (!j.contains("group_id") || !(j["group_id"].is_string() || j["group_id"].is_number()))
      throw SchemaError(where + ": missing group_id");
    if (!j.contains("scenario") || !j["scenario"].is_string())
      throw SchemaError(where + ": missing string field 'scenario'");
    if (!j.contains("items") || !j["items"].is_array() || j["items"].empty())
      throw SchemaError(where + ": 'items' must be a non-empty array");

    ProblemGroup group;
    group.group_id = id_as_text(j["group_id"]);
    group.scenario = j["scenario"].get<std::string>();
    int item_index = 0;
    for (const auto& item : j["items"]) {
      std::string item_where =
          "group " + group.group_id + " item " + std::to_string(item_index);
      if (!item.is_object() || !item.contains("question") || !item["question"].is_string() ||
          !item.contains("equation") || !item["equation"].is_string())
        throw SchemaError(where + ": " + item_where +
                          " must be an object with string 'question' and 'equation'");
      ProblemItem parsed;
      parsed.question = item["question"].get<std::string>();
      try {
        parsed.equation = expr::parse_infix(item["equation"].get<std::string>());
        parsed.answer = expr::evaluate(parsed.equation);
      } catch (const Error& e) {
        throw EquationError(item_where + ": " + e.what());
      }
      group.items.push_back(std::move(parsed));
      ++item_index;
    }
    out.push_back(std::move(group));
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<ProblemGroup>& groups) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write dataset: " + path);
  for (const auto& group : groups) {
    ordered_json j;
    j["group_id"] = group.group_id;
    j["scenario"] = group.scenario;
    j["items"] = ordered_json::array();
    for (const auto& item : group.items)
      j["items"].push_back({{"question", item.question}, {"equation", item.equation.source_text}});
    os << j.dump() << '\n';
  }
}

void PredictionSet::set(const std::string& group_id, int item_index, expr::Equation equation) {
  map_[{group_id, item_index}] = std::move(equation);
}

void PredictionSet::set_failure(const std::string& group_id, int item_index) {
  map_[{group_id, item_index}] = std::nullopt;
}

const expr::Equation* PredictionSet::find(const std::string& group_id, int item_index) const {
  auto it = map_.find({group_id, item_index});
  if (it == map_.end() || !it->second.has_value()) return nullptr;
  return &*it->second;
}

bool PredictionSet::has(const std::string& group_id, int item_index) const {
  return map_.count({group_id, item_index}) > 0;
}

PredictionSet load_predictions(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read predictions: " + path);
  PredictionSet preds;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string where = "line " + std::to_string(line_no);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw SchemaError(where + ": not a JSON object");
    if (!j.contains("group_id") || !(j["group_id"].is_string() || j["group_id"].is_number()))
      throw SchemaError(where + ": missing group_id");
    if (!j.contains("item_index") || !j["item_index"].is_number_integer())
      throw SchemaError(where + ": missing integer field 'item_index'");
    if (!j.contains("equation") || !j["equation"].is_string())
      throw SchemaError(where + ": missing string field 'equation'");
    std::string group_id = id_as_text(j["group_id"]);
    int item_index = j["item_index"].get<int>();
    try {
      preds.set(group_id, item_index, expr::parse_infix(j["equation"].get<std::string>()));
    } catch (const Error&) {
      preds.set_failure(group_id, item_index);
    }
  }
  return preds;
}

namespace {

bool item_correct(const ProblemItem& item, const expr::Equation* predicted) {
  if (!predicted) return false;
  try {
    return filter::answers_match(expr::evaluate(*predicted), item.answer);
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

double accuracy(const std::vector<ProblemGroup>& dataset, const PredictionSet& preds) {
  long correct = 0, total = 0;
  for (const auto& group : dataset)
    for (std::size_t i = 0; i < group.items.size(); ++i) {
      correct +=
          item_correct(group.items[i], preds.find(group.group_id, static_cast<int>(i))) ? 1 : 0;
      ++total;
    }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double group_accuracy(const std::vector<ProblemGroup>& dataset, const PredictionSet& preds) {
  long full = 0;
  for (const auto& group : dataset) {
    bool all = true;
    for (std::size_t i = 0; i < group.items.size(); ++i)
      all = all && item_correct(group.items[i], preds.find(group.group_id, static_cast<int>(i)));
    full += all ? 1 : 0;
  }
  return dataset.empty() ? 0.0 : static_cast<double>(full) / static_cast<double>(dataset.size());
}

namespace {

std::string one_line(std::string text) {
  for (char& c : text)
    if (c == '\n' || c == '\r') c = ' ';
  return text;
}

// Runs `cmd < prompt_file > output_file` through the shell and returns the
// output lines; the caller owns prompt/output cleanup.
std::vector<std::string> run_solver_chunk(const std::string& cmd,
                                          const std::vector<std::string>& prompts,
                                          const std::string& tag) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path();
  fs::path in_path = dir / ("mwpforge_prompts_" + tag + ".txt");
  fs::path out_path = dir / ("mwpforge_answers_" + tag + ".txt");
  {
    std::ofstream os(in_path);
    if (!os) throw IoError("cannot write solver prompts: " + in_path.string());
    for (const auto& p : prompts) os << p << '\n';
  }
  std::string shell = cmd + " < '" + in_path.string() + "' > '" + out_path.string() + "'";
  int rc = std::system(shell.c_str());
  std::vector<std::string> lines;
  {
    std::ifstream is(out_path);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
  }
  std::error_code ec;
  fs::remove(in_path, ec);
  fs::remove(out_path, ec);
  if (rc != 0)
    throw SolverProtocolError("solver command failed with status " + std::to_string(rc));
  if (lines.size() != prompts.size())
    throw SolverProtocolError("solver wrote " + std::to_string(lines.size()) + " lines for " +
                              std::to_string(prompts.size()) + " prompts");
  return lines;
}

std::atomic<unsigned> g_solver_call{0};

// One solver output line per prompt, original order, optionally fanned out
// over parallel chunk invocations.
std::vector<std::string> run_solver(const std::string& cmd, const std::vector<std::string>& prompts,
                                    int parallel_batches) {
  if (parallel_batches < 1) throw ConfigError("parallel_batches must be at least 1");
  unsigned call_id = g_solver_call.fetch_add(1);
  int batches = std::min<int>(parallel_batches, static_cast<int>(prompts.size()));
  std::vector<std::string> outputs(prompts.size());
  if (batches == 1) {
    outputs = run_solver_chunk(cmd, prompts, std::to_string(call_id));
  } else {
    std::size_t per = (prompts.size() + batches - 1) / batches;
    std::vector<std::future<std::vector<std::string>>> futures;
    for (int b = 0; b < batches; ++b) {
      std::size_t begin = b * per;
      std::size_t end = std::min(prompts.size(), begin + per);
      if (begin >= end) break;
      std::vector<std::string> chunk(prompts.begin() + begin, prompts.begin() + end);
      futures.push_back(std::async(std::launch::async, run_solver_chunk, cmd, std::move(chunk),
                                   std::to_string(call_id) + "_" + std::to_string(b)));
    }
    std::size_t cursor = 0;
    for (auto& f : futures)
      for (auto& line : f.get()) outputs[cursor++] = std::move(line);
  }
  return outputs;
}

}  // namespace

double solver_accuracy(const std::vector<ProblemGroup>& dataset, const std::string& solver_cmd,
                       bool include_question, DeqScope scope, int parallel_batches) {
  if (parallel_batches < 1) throw ConfigError("parallel_batches must be at least 1");

  std::vector<std::string> prompts;
  std::vector<double> gold;
  for (const auto& group : dataset) {
    std::size_t take = scope == DeqScope::Originals ? std::min<std::size_t>(1, group.items.size())
                                                    : group.items.size();
    for (std::size_t i = 0; i < take; ++i) {
      std::string prompt = one_line(group.scenario);
      if (include_question) prompt += " " + one_line(group.items[i].question);
      prompts.push_back(std::move(prompt));
      gold.push_back(group.items[i].answer);
    }
  }
  if (prompts.empty()) return 0.0;

  std::vector<std::string> outputs = run_solver(solver_cmd, prompts, parallel_batches);

  long correct = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    try {
      expr::Equation eq = expr::parse_infix(outputs[i]);
      if (filter::answers_match(expr::evaluate(eq), gold[i])) ++correct;
    } catch (const Error&) {
      // unparseable or erroring output counts wrong
    }
  }
  return static_cast<double>(correct) / static_cast<double>(outputs.size());
}

double deq_accuracy(const std::vector<ProblemGroup>& dataset, const std::string& solver_cmd,
                    DeqScope scope, int parallel_batches) {
  return solver_accuracy(dataset, solver_cmd, false, scope, parallel_batches);
}

PredictionSet solver_predictions(const std::vector<ProblemGroup>& dataset,
                                 const std::string& solver_cmd, int parallel_batches) {
  std::vector<std::string> prompts;
  std::vector<std::pair<std::string, int>> keys;
  for (const auto& group : dataset)
    for (std::size_t i = 0; i < group.items.size(); ++i) {
      prompts.push_back(one_line(group.scenario) + " " + one_line(group.items[i].question));
      keys.emplace_back(group.group_id, static_cast<int>(i));
    }
  PredictionSet preds;
  if (prompts.empty()) return preds;

  std::vector<std::string> outputs = run_solver(solver_cmd, prompts, parallel_batches);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    try {
      preds.set(keys[i].first, keys[i].second, expr::parse_infix(outputs[i]));
    } catch (const Error&) {
      preds.set_failure(keys[i].first, keys[i].second);
    }
  }
  return preds;
}

EvalReport evaluate(const std::vector<ProblemGroup>& dataset, const PredictionSet& preds) {
  EvalReport report;
  report.accuracy = accuracy(dataset, preds);
  report.group_accuracy = group_accuracy(dataset, preds);
  for (const auto& group : dataset) {
    GroupBreakdown b;
    b.group_id = group.group_id;
    b.total = static_cast<int>(group.items.size());
    for (std::size_t i = 0; i < group.items.size(); ++i)
      b.correct +=
          item_correct(group.items[i], preds.find(group.group_id, static_cast<int>(i))) ? 1 : 0;
    b.all_correct = b.correct == b.total;
    report.groups.push_back(std::move(b));
  }
  return report;
}

std::string report_json(const EvalReport& report) {
  ordered_json j;
  j["accuracy"] = report.accuracy;
  j["group_accuracy"] = report.group_accuracy;
  if (report.deq_accuracy.has_value())
    j["deq_accuracy"] = *report.deq_accuracy;
  else
    j["deq_accuracy"] = nullptr;
  j["groups"] = ordered_json::array();
  for (const auto& g : report.groups)
    j["groups"].push_back({{"group_id", g.group_id},
                           {"correct", g.correct},
                           {"total", g.total},
                           {"all_correct", g.all_correct}});
  return j.dump(2);
}

std::string report_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "accuracy        " << report.accuracy << "\n";
  os << "group-accuracy  " << report.group_accuracy << "\n";
  if (report.deq_accuracy.has_value()) os << "deq-accuracy    " << *report.deq_accuracy << "\n";
  os << "\ngroup            correct/total\n";
  for (const auto& g : report.groups) {
    os << std::left << std::setw(16) << g.group_id << ' ' << g.correct << '/' << g.total
       << (g.all_correct ? "  full" : "") << "\n";
  }
  return os.str();
}

}  // namespace mwpforge::eval
