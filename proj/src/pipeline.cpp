#include "mwpforge/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <json.hpp>

#include "mwpforge/errors.hpp"
#include "mwpforge/expr.hpp"
#include "mwpforge/geneq.hpp"
#include "mwpforge/qgen.hpp"

namespace mwpforge::pipeline {

using nlohmann::ordered_json;

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("MWPFORGE_LOG");
    std::string v = env ? env : "";
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "error") return LogLevel::Error;
    if (v == "info") return LogLevel::Info;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return level;
}

void log(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "mwpforge " << names[static_cast<int>(level)] << ": " << msg << '\n';
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got \"" + value + "\"");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    std::uint64_t v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got \"" + value + "\"");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got \"" + value + "\"");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": expected true or false, got \"" + value + "\"");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::size_t begin = 0;
  while (begin <= value.size()) {
    std::size_t comma = value.find(',', begin);
    std::string item = trim(value.substr(begin, comma - begin));
    if (!item.empty()) items.push_back(std::move(item));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return items;
}

void require(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("missing required setting \"") + key + "\"");
}

std::vector<ordered_json> read_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<ordered_json> records;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty()) continue;
    ordered_json r;
    try {
      r = ordered_json::parse(t);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!r.is_object())
      throw SchemaError("line " + std::to_string(lineno) + ": expected a JSON object");
    records.push_back(std::move(r));
  }
  return records;
}

void write_records(const std::string& path, const std::vector<ordered_json>& records) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  for (const auto& r : records) os << r.dump() << '\n';
}

std::string str_field(const ordered_json& r, const char* key, int record_no) {
  if (!r.contains(key) || !r.at(key).is_string())
    throw SchemaError("record " + std::to_string(record_no) + ": missing string field \"" + key +
                      "\"");
  return r.at(key).get<std::string>();
}

std::unique_ptr<filter::ExpertSolver> make_expert(const PipelineConfig& cfg) {
  if (cfg.expert == "enumerative")
    return std::make_unique<filter::EnumerativeExpert>(cfg.max_operators);
  if (cfg.expert.rfind("oracle:", 0) == 0) {
    std::string path = cfg.expert.substr(7);
    require(path, "expert");
    std::map<std::string, std::vector<expr::Equation>> table;
    int n = 0;
    for (const auto& r : read_records(path)) {
      ++n;
      std::string question = str_field(r, "question", n);
      if (!r.contains("equations") || !r.at("equations").is_array())
        throw SchemaError("record " + std::to_string(n) + ": missing array field \"equations\"");
      std::vector<expr::Equation> eqs;
      for (const auto& e : r.at("equations")) {
        if (!e.is_string())
          throw SchemaError("record " + std::to_string(n) + ": equations must be strings");
        eqs.push_back(expr::parse_infix(e.get<std::string>()));
      }
      table[question] = std::move(eqs);
    }
    return std::make_unique<filter::OracleExpert>(std::move(table));
  }
  throw ConfigError("expert: unknown choice \"" + cfg.expert +
                    "\" (use enumerative or oracle:<path>)");
}

std::string render(const expr::Equation& eq) { return "x = " + expr::render_infix(eq.rhs); }

}  // namespace

void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "input")
    cfg.input = value;
  else if (key == "out")
    cfg.out = value;
  else if (key == "k")
    cfg.k = to_int(key, value);
  else if (key == "expert")
    cfg.expert = value;
  else if (key == "checkpoint")
    cfg.checkpoint = value;
  else if (key == "seed")
    cfg.seed = to_u64(key, value);
  else if (key == "stop_words")
    cfg.stop_words = split_list(value);
  else if (key == "max_operators")
    cfg.max_operators = to_int(key, value);
  else if (key == "solver")
    cfg.solver = value;
  else if (key == "predictions")
    cfg.predictions = value;
  else if (key == "deq")
    cfg.deq = to_bool(key, value);
  else if (key == "deq_scope") {
    if (value == "all")
      cfg.deq_scope = eval::DeqScope::All;
    else if (value == "originals")
      cfg.deq_scope = eval::DeqScope::Originals;
    else
      throw ConfigError("deq_scope: expected all or originals, got \"" + value + "\"");
  } else if (key == "parallel")
    cfg.parallel = to_int(key, value);
  else if (key == "epochs")
    cfg.epochs = to_int(key, value);
  else if (key == "lr")
    cfg.lr = to_double(key, value);
  else if (key == "dim")
    cfg.dim = to_int(key, value);
  else if (key == "max_decode_len")
    cfg.max_decode_len = to_int(key, value);
  else
    throw ConfigError("unknown setting \"" + key + "\"");
}

PipelineConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path);
  PipelineConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

void validate(const PipelineConfig& cfg) {
  if (cfg.k < 1) throw ConfigError("k must be at least 1");
  if (cfg.max_operators < 1) throw ConfigError("max_operators must be at least 1");
  if (cfg.parallel < 1) throw ConfigError("parallel must be at least 1");
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("lr must be a positive number");
  if (cfg.dim < 2 || cfg.dim % 2 != 0) throw ConfigError("dim must be a positive even number");
  if (cfg.max_decode_len < 1) throw ConfigError("max_decode_len must be at least 1");
}

std::string rejects_path(const std::string& out) { return out + ".rejects"; }

int cmd_augment(const PipelineConfig& cfg) {
  validate(cfg);
  require(cfg.input, "input");
  require(cfg.out, "out");
  auto dataset = eval::load_dataset(cfg.input);
  std::vector<ordered_json> records;
  for (const auto& group : dataset) {
    scenario::ScenarioDoc doc =
        scenario::assign_units(scenario::lex_scenario(group.scenario), cfg.stop_words);
    const expr::Equation& original = group.items.front().equation;
    for (const auto& c : geneq::generate_all(doc, original)) {
      ordered_json r;
      r["group_id"] = group.group_id;
      r["scenario"] = group.scenario;
      r["equation"] = render(c.eq);
      r["strategy"] = geneq::strategy_name(c.strategy);
      r["provenance"] = c.provenance;
      r["source_equation"] = render(original);
      records.push_back(std::move(r));
    }
  }
  write_records(cfg.out, records);
  log(LogLevel::Info, "augment: " + std::to_string(records.size()) + " candidate equations from " +
                          std::to_string(dataset.size()) + " groups");
  return static_cast<int>(records.size());
}

int cmd_generate(const PipelineConfig& cfg) {
  validate(cfg);
  require(cfg.input, "input");
  require(cfg.out, "out");
  require(cfg.checkpoint, "checkpoint");
  qgen::QGenModel model = qgen::QGenModel::load(cfg.checkpoint);
  std::vector<ordered_json> records = read_records(cfg.input);
  int n = 0;
  for (auto& r : records) {
    ++n;
    try {
      qgen::QGenExample ex =
          qgen::prepare_prompt(str_field(r, "scenario", n), expr::parse_infix(str_field(r, "equation", n)));
      qgen::Generation gen = model.generate(ex);
      r["question"] = gen.text;
      r["question_tokens"] = gen.tokens;
      r["truncated"] = gen.truncated;
    } catch (const Error& e) {
      log(LogLevel::Error, "generate: record " + std::to_string(n) + ": " + e.what());
      throw;
    }
  }
  write_records(cfg.out, records);
  log(LogLevel::Info, "generate: questions for " + std::to_string(n) + " records");
  return n;
}

FilterSummary cmd_filter(const PipelineConfig& cfg) {
  validate(cfg);
  require(cfg.input, "input");
  require(cfg.out, "out");
  std::unique_ptr<filter::ExpertSolver> expert = make_expert(cfg);
  std::vector<ordered_json> records = read_records(cfg.input);
  std::vector<ordered_json> accepted, rejected;
  int n = 0;
  for (auto& r : records) {
    ++n;
    filter::Candidate cand;
    cand.scenario = str_field(r, "scenario", n);
    cand.question = r.contains("question") ? str_field(r, "question", n) : "";
    try {
      cand.equation = expr::parse_infix(str_field(r, "equation", n));
    } catch (const Error& e) {
      log(LogLevel::Error, "filter: record " + std::to_string(n) + ": " + e.what());
      throw;
    }
    filter::FilterDecision d = filter::filter_one(cand, *expert, cfg.k);
    ordered_json fd;
    fd["accepted"] = d.accepted;
    fd["matched_rank"] = d.matched_rank >= 0 ? ordered_json(d.matched_rank) : ordered_json(nullptr);
    fd["candidate_answer"] =
        d.candidate_error ? ordered_json(nullptr) : ordered_json(d.candidate_answer);
    fd["error"] = d.candidate_error ? ordered_json(d.candidate_error_kind) : ordered_json(nullptr);
    fd["expert_answers"] = d.expert_answers;
    r["filter"] = std::move(fd);
    (d.accepted ? accepted : rejected).push_back(std::move(r));
  }
  write_records(cfg.out, accepted);
  write_records(rejects_path(cfg.out), rejected);
  log(LogLevel::Info, "filter: accepted " + std::to_string(accepted.size()) + ", rejected " +
                          std::to_string(rejected.size()));
  return {static_cast<int>(accepted.size()), static_cast<int>(rejected.size())};
}

TrainSummary cmd_train_qgen(const PipelineConfig& cfg) {
  validate(cfg);
  require(cfg.input, "input");
  require(cfg.checkpoint, "checkpoint");
  auto dataset = eval::load_dataset(cfg.input);
  std::vector<qgen::QGenExample> corpus;
  for (const auto& group : dataset)
    for (std::size_t i = 0; i < group.items.size(); ++i) {
      try {
        corpus.push_back(
            qgen::prepare_example(group.scenario, group.items[i].question, group.items[i].equation));
      } catch (const Error& e) {
        log(LogLevel::Error, "train-qgen: group " + group.group_id + " item " + std::to_string(i) +
                                 ": " + e.what());
        throw;
      }
    }

  qgen::QGenConfig qc;
  qc.dim = cfg.dim;
  qc.max_decode_len = cfg.max_decode_len;
  qgen::QGenModel model(qgen::build_vocab(corpus), qc, cfg.seed);

  qgen::TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.seed = cfg.seed;
  opts.lr = cfg.lr;
  opts.on_epoch = [](int epoch, double mean_loss) {
    log(LogLevel::Debug,
        "train-qgen: epoch " + std::to_string(epoch) + " loss " + std::to_string(mean_loss));
    return true;
  };
  std::vector<qgen::EpochLog> rows = qgen::train(model, corpus, opts);

  model.save(cfg.checkpoint);
  qgen::write_train_log_csv(cfg.out.empty() ? cfg.checkpoint + ".log.csv" : cfg.out, rows);

  TrainSummary s;
  s.examples = static_cast<int>(corpus.size());
  s.epochs_run = static_cast<int>(rows.size());
  s.final_loss = rows.empty() ? 0.0 : rows.back().mean_loss;
  log(LogLevel::Info, "train-qgen: " + std::to_string(s.examples) + " examples, " +
                          std::to_string(s.epochs_run) + " epochs, final loss " +
                          std::to_string(s.final_loss));
  return s;
}

eval::EvalReport cmd_eval(const PipelineConfig& cfg) {
  validate(cfg);
  require(cfg.input, "input");
  bool have_solver = !cfg.solver.empty();
  bool have_preds = !cfg.predictions.empty();
  if (have_solver && have_preds)
    throw ConfigError("solver and predictions are mutually exclusive");
  if (!have_solver && !have_preds)
    throw ConfigError("eval needs either \"solver\" or \"predictions\"");

  auto dataset = eval::load_dataset(cfg.input);
  eval::PredictionSet preds = have_preds
                                  ? eval::load_predictions(cfg.predictions)
                                  : eval::solver_predictions(dataset, cfg.solver, cfg.parallel);
  eval::EvalReport report = eval::evaluate(dataset, preds);
  if (cfg.deq) {
    if (!have_solver) throw ConfigError("deq requires \"solver\"");
    report.deq_accuracy = eval::deq_accuracy(dataset, cfg.solver, cfg.deq_scope, cfg.parallel);
  }
  if (!cfg.out.empty()) {
    std::ofstream os(cfg.out);
    if (!os) throw IoError("cannot write " + cfg.out);
    os << eval::report_json(report) << '\n';
  }
  return report;
}

}  // namespace mwpforge::pipeline
