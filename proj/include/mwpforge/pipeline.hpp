#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mwpforge/eval.hpp"
#include "mwpforge/filter.hpp"
#include "mwpforge/scenario.hpp"

namespace mwpforge::pipeline {

// Leveled stderr logger, selected by the MWPFORGE_LOG environment variable
// (error|warn|info|debug; default warn).
enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };
LogLevel log_level();
void log(LogLevel level, const std::string& msg);

struct PipelineConfig {
  std::string input;
  std::string out;
  int k = filter::kDefaultTopK;
  std::string expert = "enumerative";  // or "oracle:<path>"
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::vector<std::string> stop_words = scenario::kDefaultUnitStopList;
  int max_operators = 3;

  // eval
  std::string solver;       // external solver command
  std::string predictions;  // predictions JSONL, alternative to solver
  bool deq = false;         // also score scenario-only prompts
  eval::DeqScope deq_scope = eval::DeqScope::All;
  int parallel = 1;

  // train-qgen
  int epochs = 50;
  double lr = 1e-3;
  int dim = 32;
  int max_decode_len = 24;
};

// One "key = value" per line; '#' starts a comment. Unknown keys and
// unparseable values raise ConfigError naming the key.
PipelineConfig parse_config_file(const std::string& path);
void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value);
void validate(const PipelineConfig& cfg);

// Where cmd_filter writes the rejected records: "<out>.rejects".
std::string rejects_path(const std::string& out);

// Diverse equations from a grouped dataset (first item of each group is the
// original). Emits one candidate JSONL record per equation, tagged with the
// source group, strategy, and provenance. Returns the record count.
int cmd_augment(const PipelineConfig& cfg);

// Questions for candidate records via a trained generator checkpoint. Adds
// "question" (surface form) and "question_tokens" to each record.
int cmd_generate(const PipelineConfig& cfg);

struct FilterSummary {
  int accepted = 0;
  int rejected = 0;
};

// Answer-equivalence filtering of candidate MWPs; accepted records go to
// out, rejected ones to rejects_path(out), both with the decision attached.
FilterSummary cmd_filter(const PipelineConfig& cfg);

struct TrainSummary {
  int examples = 0;
  int epochs_run = 0;
  double final_loss = 0.0;
};

// Trains the question generator on a grouped dataset and saves the
// checkpoint; "<checkpoint>.log.csv" records the loss curve.
TrainSummary cmd_train_qgen(const PipelineConfig& cfg);

// Scores a solver command or a predictions file against a grouped dataset.
// Writes the JSON report to out when set; returns the report either way.
eval::EvalReport cmd_eval(const PipelineConfig& cfg);

}  // namespace mwpforge::pipeline
