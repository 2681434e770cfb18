#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mwpforge/expr.hpp"
#include "mwpforge/nn.hpp"
#include "mwpforge/scenario.hpp"

namespace mwpforge::qgen {

// Token vocabulary. Ids are dense from 0; the specials below always occupy
// the lowest ids, followed by corpus tokens in first-seen order.
struct Vocab {
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3;
  static constexpr int kNumBase = 4;   // NUM0..NUM9 -> 4..13
  static constexpr int kNumSlots = 10;

  std::vector<std::string> id_to_token;
  std::map<std::string, int> token_to_id;

  static Vocab with_specials();
  static std::string num_placeholder(int k);  // "NUM0".."NUM9"

  int add(const std::string& token);      // idempotent; returns the id
  int id(const std::string& token) const; // kUnk when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token.size()); }
};

// One training/inference example: the scenario document (units assigned),
// the gold question, the equation, and the placeholder token views where
// every number is NUMk with k = its mention index in scenario order.
struct QGenExample {
  scenario::ScenarioDoc doc;
  expr::Equation equation;
  std::string question_text;
  scenario::Alignment alignment;
  std::vector<std::string> scenario_tokens;
  std::vector<std::string> equation_tokens;  // pre-order labels
  std::vector<std::string> question_tokens;
};

// Builds the placeholder views. Throws TooManyNumbers past NUM9 and
// EmptyScenario / SyntaxError on malformed inputs.
QGenExample prepare_example(const std::string& scenario_text, const std::string& question,
                            const expr::Equation& equation);

// Same, but with no gold question: generation-time input. The question
// fields stay empty, so such an example cannot be trained on.
QGenExample prepare_prompt(const std::string& scenario_text, const expr::Equation& equation);

// JSONL lines {"scenario": ..., "question": ..., "equation": ...}.
// Structural problems raise SchemaError naming the line.
std::vector<QGenExample> load_corpus(const std::string& path);

Vocab build_vocab(const std::vector<QGenExample>& corpus);

// Gated recurrent cell; x is 1 x in_dim, h is 1 x hidden_dim.
struct GruCell {
  nn::Param Wz, Uz, bz, Wr, Ur, br, Wn, Un, bn;

  GruCell() = default;
  GruCell(const std::string& prefix, int in_dim, int hidden_dim);
  nn::Tape::Var step(nn::Tape& t, nn::Tape::Var x, nn::Tape::Var h);
  void collect(std::vector<nn::Param*>& out);
  int hidden_dim() const { return bz.value.cols; }
};

// Child-sum tree cell: gates from (W x + U sum_h + b), one forget gate per
// child from (Wf x + Uf h_k + bf).
struct TreeLstmCell {
  nn::Param Wi, Ui, bi, Wf, Uf, bf, Wo, Uo, bo, Wu, Uu, bu;

  struct State {
    nn::Tape::Var h, c;
  };

  TreeLstmCell() = default;
  TreeLstmCell(const std::string& prefix, int in_dim, int hidden_dim);
  State step(nn::Tape& t, nn::Tape::Var x, const std::vector<State>& children);
  void collect(std::vector<nn::Param*>& out);
  int hidden_dim() const { return bi.value.cols; }
};

struct QGenConfig {
  int dim = 32;             // even; scenario directions get dim/2 each
  int max_decode_len = 24;  // decode truncates here when EOS never fires
};

struct Generation {
  std::vector<std::string> tokens;  // placeholder form, no EOS
  std::string text;                 // surface form, placeholders restored
  bool truncated = false;
};

class QGenModel {
public:
  QGenModel(Vocab vocab, QGenConfig cfg, std::uint64_t seed);

  const Vocab& vocab() const { return vocab_; }
  const QGenConfig& config() const { return cfg_; }
  std::vector<nn::Param*> params();
  nn::Param& embedding() { return embedding_; }

  // Contextual scenario rows, T x d: forward and backward recurrent passes
  // over token embeddings, halves concatenated per position. These graph
  // builders are non-const because backward() later writes into param grads.
  nn::Tape::Var encode_scenario(nn::Tape& t, const std::vector<int>& token_ids);

  // Bottom-up pass over the equation tree, rows in pre-order, n x d. Aligned
  // number nodes read their input row from scenario_rows instead of the
  // embedding table; that replacement is the scenario-to-equation bridge.
  nn::Tape::Var encode_equation(nn::Tape& t, const expr::Equation& eq,
                                const scenario::Alignment& alignment,
                                const std::vector<scenario::NumberMention>& mentions,
                                nn::Tape::Var scenario_rows);

  // Equation-to-scenario bridge: aligned mention rows of scenario_rows are
  // overwritten by the matching equation rows; everything else is unchanged.
  nn::Tape::Var interact_back(nn::Tape& t, nn::Tape::Var scenario_rows,
                              nn::Tape::Var equation_rows, const scenario::Alignment& alignment,
                              const std::vector<scenario::NumberMention>& mentions);

  // Full encode: concat_rows(interacted scenario rows, equation rows).
  nn::Tape::Var encode_memory(nn::Tape& t, const QGenExample& ex);

  // Teacher-forced mean cross-entropy of the gold question (1x1 var).
  nn::Tape::Var loss(nn::Tape& t, const QGenExample& ex);

  // Greedy decode against a memory matrix; stops at EOS or max_decode_len.
  std::vector<int> decode(nn::Tape& t, nn::Tape::Var memory, bool* truncated = nullptr);

  Generation generate(const QGenExample& ex);

  // First-step decoder logits, optionally with the aligned scenario rows
  // zeroed before the equation encoder runs (probes the number bridge).
  nn::Tensor2 first_step_logits(const QGenExample& ex,
                                bool zero_aligned_scenario_rows = false);

  // One decoder step: recurrent update, dot-product attention over memory,
  // combined projection to vocabulary logits.
  nn::Tape::Var decoder_step(nn::Tape& t, nn::Tape::Var prev_emb, nn::Tape::Var& state,
                             nn::Tape::Var memory, nn::Tape::Var memory_t);

  std::vector<int> ids_of(const std::vector<std::string>& tokens) const;

  void save(const std::string& path) const;  // checkpoint + "<path>.vocab" sidecar
  static QGenModel load(const std::string& path);

private:

  Vocab vocab_;
  QGenConfig cfg_;
  nn::Param embedding_;  // V x d
  GruCell scen_fwd_, scen_bwd_, decoder_;
  TreeLstmCell tree_;
  nn::Param attn_W_, attn_b_;  // 2d x d, 1 x d
  nn::Param out_W_, out_b_;    // d x V, 1 x V
};

struct TrainOptions {
  int epochs = 50;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  // Called after each epoch; return false to stop early.
  std::function<bool(int epoch, double mean_loss)> on_epoch;
};

struct EpochLog {
  int epoch;
  double mean_loss;
};

// Teacher-forced training with per-epoch example shuffling (seeded). A
// non-finite loss or update aborts with the offending epoch and step.
std::vector<EpochLog> train(QGenModel& model, const std::vector<QGenExample>& corpus,
                            const TrainOptions& opts);

void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& log);

// Teacher-forced next-token argmax accuracy over the corpus.
double token_accuracy(QGenModel& model, const std::vector<QGenExample>& corpus);
// Fraction of examples whose greedy decode equals the gold placeholder tokens.
double exact_match(QGenModel& model, const std::vector<QGenExample>& corpus);

struct GenScores {
  double bleu = 0.0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
};

// BLEU (up to 4-grams, brevity penalty, add-one smoothing only for orders
// with zero matches, orders longer than the hypothesis skipped) and ROUGE
// F1 scores. Empty hypothesis scores 0 everywhere; empty reference throws
// EmptyReference.
GenScores score_generation(const std::vector<std::string>& hypothesis,
                           const std::vector<std::string>& reference);

}  // namespace mwpforge::qgen
