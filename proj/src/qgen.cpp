#include "mwpforge/qgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace mwpforge::qgen {

using nn::Tape;

Vocab Vocab::with_specials() {
  Vocab v;
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) v.add(s);
  for (int k = 0; k < kNumSlots; ++k) v.add(num_placeholder(k));
  return v;
}

std::string Vocab::num_placeholder(int k) { return "NUM" + std::to_string(k); }

int Vocab::add(const std::string& token) {
  auto it = token_to_id.find(token);
  if (it != token_to_id.end()) return it->second;
  int id = static_cast<int>(id_to_token.size());
  id_to_token.push_back(token);
  token_to_id.emplace(token, id);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const { return id_to_token.at(id); }

namespace {

// NUMk for numbers that match a scenario mention literal; repeats saturate
// left to right like equation alignment does.
std::vector<std::string> placeholder_tokens(const scenario::ScenarioDoc& doc,
                                            const std::vector<scenario::Token>& tokens) {
  std::map<std::string, std::vector<int>> slots_by_literal;
  for (std::size_t m = 0; m < doc.mentions.size(); ++m)
    slots_by_literal[doc.mentions[m].literal].push_back(static_cast<int>(m));
  std::map<std::string, std::size_t> seen;
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) {
    if (tok.kind != scenario::Token::Kind::Number) {
      out.push_back(tok.text);
      continue;
    }
    std::string lit = expr::normalize_literal(tok.text);
    auto it = slots_by_literal.find(lit);
    if (it == slots_by_literal.end()) {
      out.push_back(lit);
      continue;
    }
    std::size_t occ = seen[lit]++;
    int mention = it->second[std::min(occ, it->second.size() - 1)];
    out.push_back(Vocab::num_placeholder(mention));
  }
  return out;
}

}  // namespace

QGenExample prepare_prompt(const std::string& scenario_text, const expr::Equation& equation) {
  QGenExample ex;
  ex.doc = scenario::assign_units(scenario::lex_scenario(scenario_text));
  if (ex.doc.mentions.size() > static_cast<std::size_t>(Vocab::kNumSlots))
    throw TooManyNumbers("scenario has " + std::to_string(ex.doc.mentions.size()) +
                         " number mentions; at most " + std::to_string(Vocab::kNumSlots) +
                         " supported");
  ex.equation = equation;
  ex.alignment = scenario::align_numbers(ex.doc, equation);

  ex.scenario_tokens = placeholder_tokens(ex.doc, ex.doc.tokens);

  // Equation view: pre-order labels, aligned numbers as placeholders.
  std::vector<std::string> labels = expr::to_pre_order(equation);
  ex.equation_tokens.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int m = i < ex.alignment.node_to_mention.size() ? ex.alignment.node_to_mention[i] : -1;
    ex.equation_tokens.push_back(m >= 0 ? Vocab::num_placeholder(m) : labels[i]);
  }
  return ex;
}

QGenExample prepare_example(const std::string& scenario_text, const std::string& question,
                            const expr::Equation& equation) {
  QGenExample ex = prepare_prompt(scenario_text, equation);
  if (question.find_first_not_of(" \t\r\n") == std::string::npos)
    throw SchemaError("empty question");
  ex.question_text = question;
  scenario::ScenarioDoc qdoc = scenario::lex_scenario(question);
  ex.question_tokens = placeholder_tokens(ex.doc, qdoc.tokens);
  return ex;
}

std::vector<QGenExample> load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read corpus: " + path);
  std::vector<QGenExample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw SchemaError("line " + std::to_string(line_no) + ": not a JSON object");
    for (const char* key : {"scenario", "question", "equation"})
      if (!j.contains(key) || !j[key].is_string())
        throw SchemaError("line " + std::to_string(line_no) + ": missing string field '" +
                          key + "'");
    std::string question = j["question"].get<std::string>();
    if (question.find_first_not_of(" \t\r\n") == std::string::npos)
      throw SchemaError("line " + std::to_string(line_no) + ": empty question");
    try {
      expr::Equation eq = expr::parse_infix(j["equation"].get<std::string>());
      out.push_back(prepare_example(j["scenario"].get<std::string>(), question, eq));
    } catch (const Error& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Vocab build_vocab(const std::vector<QGenExample>& corpus) {
  Vocab v = Vocab::with_specials();
  for (const auto& ex : corpus) {
    for (const auto& tok : ex.scenario_tokens) v.add(tok);
    for (const auto& tok : ex.equation_tokens) v.add(tok);
    for (const auto& tok : ex.question_tokens) v.add(tok);
  }
  return v;
}

GruCell::GruCell(const std::string& prefix, int in_dim, int hidden_dim)
    : Wz(prefix + "/Wz", in_dim, hidden_dim), Uz(prefix + "/Uz", hidden_dim, hidden_dim),
      bz(prefix + "/bz", 1, hidden_dim), Wr(prefix + "/Wr", in_dim, hidden_dim),
      Ur(prefix + "/Ur", hidden_dim, hidden_dim), br(prefix + "/br", 1, hidden_dim),
      Wn(prefix + "/Wn", in_dim, hidden_dim), Un(prefix + "/Un", hidden_dim, hidden_dim),
      bn(prefix + "/bn", 1, hidden_dim) {}

Tape::Var GruCell::step(Tape& t, Tape::Var x, Tape::Var h) {
  auto z = t.sigmoid(t.add(t.add(t.matmul(x, t.param(Wz)), t.matmul(h, t.param(Uz))), t.param(bz)));
  auto r = t.sigmoid(t.add(t.add(t.matmul(x, t.param(Wr)), t.matmul(h, t.param(Ur))), t.param(br)));
  auto n = t.tanh(
      t.add(t.add(t.matmul(x, t.param(Wn)), t.matmul(t.mul(r, h), t.param(Un))), t.param(bn)));
  // h' = (1-z)*h + z*n  ==  h - z*h + z*n
  return t.add(t.sub(h, t.mul(z, h)), t.mul(z, n));
}

void GruCell::collect(std::vector<nn::Param*>& out) {
  for (nn::Param* p : {&Wz, &Uz, &bz, &Wr, &Ur, &br, &Wn, &Un, &bn}) out.push_back(p);
}

TreeLstmCell::TreeLstmCell(const std::string& prefix, int in_dim, int hidden_dim)
    : Wi(prefix + "/Wi", in_dim, hidden_dim), Ui(prefix + "/Ui", hidden_dim, hidden_dim),
      bi(prefix + "/bi", 1, hidden_dim), Wf(prefix + "/Wf", in_dim, hidden_dim),
      Uf(prefix + "/Uf", hidden_dim, hidden_dim), bf(prefix + "/bf", 1, hidden_dim),
      Wo(prefix + "/Wo", in_dim, hidden_dim), Uo(prefix + "/Uo", hidden_dim, hidden_dim),
      bo(prefix + "/bo", 1, hidden_dim), Wu(prefix + "/Wu", in_dim, hidden_dim),
      Uu(prefix + "/Uu", hidden_dim, hidden_dim), bu(prefix + "/bu", 1, hidden_dim) {}

TreeLstmCell::State TreeLstmCell::step(Tape& t, Tape::Var x, const std::vector<State>& children) {
  int hd = hidden_dim();
  Tape::Var h_sum = t.zeros(1, hd);
  for (const State& ch : children) h_sum = t.add(h_sum, ch.h);

  auto gate = [&](nn::Param& W, nn::Param& U, nn::Param& b) {
    return t.add(t.add(t.matmul(x, t.param(W)), t.matmul(h_sum, t.param(U))), t.param(b));
  };
  auto i = t.sigmoid(gate(Wi, Ui, bi));
  auto o = t.sigmoid(gate(Wo, Uo, bo));
  auto u = t.tanh(gate(Wu, Uu, bu));

  Tape::Var c = t.mul(i, u);
  for (const State& ch : children) {
    auto f = t.sigmoid(
        t.add(t.add(t.matmul(x, t.param(Wf)), t.matmul(ch.h, t.param(Uf))), t.param(bf)));
    c = t.add(c, t.mul(f, ch.c));
  }
  return State{t.mul(o, t.tanh(c)), c};
}

void TreeLstmCell::collect(std::vector<nn::Param*>& out) {
  for (nn::Param* p : {&Wi, &Ui, &bi, &Wf, &Uf, &bf, &Wo, &Uo, &bo, &Wu, &Uu, &bu})
    out.push_back(p);
}

QGenModel::QGenModel(Vocab vocab, QGenConfig cfg, std::uint64_t seed)
    : vocab_(std::move(vocab)), cfg_(cfg), embedding_("emb/E", vocab_.size(), cfg.dim),
      scen_fwd_("senc/fwd", cfg.dim, cfg.dim / 2), scen_bwd_("senc/bwd", cfg.dim, cfg.dim / 2),
      decoder_("dec/cell", cfg.dim, cfg.dim), tree_("eenc/tree", cfg.dim, cfg.dim),
      attn_W_("dec/attn_W", 2 * cfg.dim, cfg.dim), attn_b_("dec/attn_b", 1, cfg.dim),
      out_W_("dec/out_W", cfg.dim, vocab_.size()), out_b_("dec/out_b", 1, vocab_.size()) {
  if (cfg.dim < 2 || cfg.dim % 2 != 0)
    throw ConfigError("model dim must be even and at least 2, got " + std::to_string(cfg.dim));
  if (cfg.max_decode_len < 1)
    throw ConfigError("max_decode_len must be positive, got " +
                      std::to_string(cfg.max_decode_len));
  std::mt19937_64 rng(seed);
  for (nn::Param* p : params()) nn::init_uniform(*p, rng);
}

std::vector<nn::Param*> QGenModel::params() {
  std::vector<nn::Param*> out;
  out.push_back(&embedding_);
  scen_fwd_.collect(out);
  scen_bwd_.collect(out);
  tree_.collect(out);
  decoder_.collect(out);
  out.push_back(&attn_W_);
  out.push_back(&attn_b_);
  out.push_back(&out_W_);
  out.push_back(&out_b_);
  return out;
}

std::vector<int> QGenModel::ids_of(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) ids.push_back(vocab_.id(tok));
  return ids;
}

Tape::Var QGenModel::encode_scenario(Tape& t, const std::vector<int>& token_ids) {
  int half = cfg_.dim / 2;
  auto emb = t.param(embedding_);
  std::size_t n = token_ids.size();
  std::vector<Tape::Var> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = t.embedding_lookup(emb, token_ids[i]);

  std::vector<Tape::Var> fwd(n), bwd(n);
  Tape::Var h = t.zeros(1, half);
  for (std::size_t i = 0; i < n; ++i) {
    h = scen_fwd_.step(t, xs[i], h);
    fwd[i] = h;
  }
  h = t.zeros(1, half);
  for (std::size_t i = n; i-- > 0;) {
    h = scen_bwd_.step(t, xs[i], h);
    bwd[i] = h;
  }
  std::vector<Tape::Var> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = t.concat_cols(fwd[i], bwd[i]);
  return t.concat_rows(rows);
}

Tape::Var QGenModel::encode_equation(Tape& t, const expr::Equation& eq,
                                     const scenario::Alignment& alignment,
                                     const std::vector<scenario::NumberMention>& mentions,
                                     Tape::Var scenario_rows) {
  auto emb = t.param(embedding_);
  std::vector<Tape::Var> rows(expr::to_pre_order(eq).size());
  int counter = 0;
  std::function<TreeLstmCell::State(const expr::NodePtr&)> rec =
      [&](const expr::NodePtr& node) -> TreeLstmCell::State {
    int idx = counter++;
    std::vector<TreeLstmCell::State> kids;
    if (node->is_operator()) {
      kids.push_back(rec(node->left));
      kids.push_back(rec(node->right));
    }
    Tape::Var x;
    int mention = alignment.aligned(idx) ? alignment.node_to_mention[idx] : -1;
    if (mention >= 0) {
      x = t.slice_row(scenario_rows, mentions[mention].token_index);
    } else {
      std::string label = node->is_operator() ? std::string(1, node->op) : node->literal;
      x = t.embedding_lookup(emb, vocab_.id(label));
    }
    TreeLstmCell::State st = tree_.step(t, x, kids);
    rows[idx] = st.h;
    return st;
  };
  rec(eq.rhs);
  return t.concat_rows(rows);
}

Tape::Var QGenModel::interact_back(Tape& t, Tape::Var scenario_rows, Tape::Var equation_rows,
                                   const scenario::Alignment& alignment,
                                   const std::vector<scenario::NumberMention>& mentions) {
  // token row -> equation node whose h overwrites it (later nodes win)
  std::map<int, int> replace;
  for (std::size_t i = 0; i < alignment.node_to_mention.size(); ++i) {
    int m = alignment.node_to_mention[i];
    if (m >= 0) replace[mentions[m].token_index] = static_cast<int>(i);
  }
  int rows = t.value(scenario_rows).rows;
  std::vector<Tape::Var> out(rows);
  for (int r = 0; r < rows; ++r) {
    auto it = replace.find(r);
    out[r] = it == replace.end() ? t.slice_row(scenario_rows, r)
                                 : t.slice_row(equation_rows, it->second);
  }
  return t.concat_rows(out);
}

Tape::Var QGenModel::encode_memory(Tape& t, const QGenExample& ex) {
  auto hs = encode_scenario(t, ids_of(ex.scenario_tokens));
  auto he = encode_equation(t, ex.equation, ex.alignment, ex.doc.mentions, hs);
  auto hs2 = interact_back(t, hs, he, ex.alignment, ex.doc.mentions);
  return t.concat_rows({hs2, he});
}

Tape::Var QGenModel::decoder_step(Tape& t, Tape::Var prev_emb, Tape::Var& state, Tape::Var memory,
                                  Tape::Var memory_t) {
  state = decoder_.step(t, prev_emb, state);
  auto scores = t.matmul(state, memory_t);
  auto attn = t.softmax_row(scores);
  auto ctx = t.matmul(attn, memory);
  auto comb =
      t.tanh(t.add(t.matmul(t.concat_cols(state, ctx), t.param(attn_W_)), t.param(attn_b_)));
  return t.add(t.matmul(comb, t.param(out_W_)), t.param(out_b_));
}

Tape::Var QGenModel::loss(Tape& t, const QGenExample& ex) {
  auto memory = encode_memory(t, ex);
  auto memory_t = t.transpose(memory);
  auto emb = t.param(embedding_);

  std::vector<int> targets = ids_of(ex.question_tokens);
  targets.push_back(Vocab::kEos);

  Tape::Var state = t.zeros(1, cfg_.dim);
  Tape::Var total = t.zeros(1, 1);
  int prev = Vocab::kBos;
  for (int target : targets) {
    auto logits = decoder_step(t, t.embedding_lookup(emb, prev), state, memory, memory_t);
    total = t.add(total, t.cross_entropy(logits, target));
    prev = target;  // teacher forcing
  }
  return t.scale(total, 1.0 / static_cast<double>(targets.size()));
}

std::vector<int> QGenModel::decode(Tape& t, Tape::Var memory, bool* truncated) {
  auto memory_t = t.transpose(memory);
  auto emb = t.param(embedding_);
  Tape::Var state = t.zeros(1, cfg_.dim);
  std::vector<int> out;
  int prev = Vocab::kBos;
  bool saw_eos = false;
  for (int step = 0; step < cfg_.max_decode_len; ++step) {
    auto logits = decoder_step(t, t.embedding_lookup(emb, prev), state, memory, memory_t);
    const nn::Tensor2& lg = t.value(logits);
    int best = 0;
    for (int j = 1; j < lg.cols; ++j)
      if (lg.at(0, j) > lg.at(0, best)) best = j;
    if (best == Vocab::kEos) {
      saw_eos = true;
      break;
    }
    out.push_back(best);
    prev = best;
  }
  if (truncated) *truncated = !saw_eos;
  return out;
}

Generation QGenModel::generate(const QGenExample& ex) {
  Tape t;
  auto memory = encode_memory(t, ex);
  Generation gen;
  std::vector<int> ids = decode(t, memory, &gen.truncated);

  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::string tok = vocab_.token(ids[i]);
    gen.tokens.push_back(tok);
    // restore NUMk to the surface form from the scenario text
    if (tok.rfind("NUM", 0) == 0 && tok.size() > 3) {
      std::size_t k = std::stoul(tok.substr(3));
      if (k < ex.doc.mentions.size()) {
        const auto& m = ex.doc.mentions[k];
        tok = ex.doc.text.substr(m.char_begin, m.char_end - m.char_begin);
      }
    }
    if (i) text += ' ';
    text += tok;
  }
  gen.text = std::move(text);
  return gen;
}

nn::Tensor2 QGenModel::first_step_logits(const QGenExample& ex, bool zero_aligned_scenario_rows) {
  Tape t;
  auto hs = encode_scenario(t, ids_of(ex.scenario_tokens));
  if (zero_aligned_scenario_rows) {
    nn::Tensor2 blanked = t.value(hs);
    for (int m : ex.alignment.node_to_mention) {
      if (m < 0) continue;
      int r = ex.doc.mentions[m].token_index;
      for (int j = 0; j < blanked.cols; ++j) blanked.at(r, j) = 0.0;
    }
    hs = t.input(blanked);
  }
  auto he = encode_equation(t, ex.equation, ex.alignment, ex.doc.mentions, hs);
  auto hs2 = interact_back(t, hs, he, ex.alignment, ex.doc.mentions);
  auto memory = t.concat_rows({hs2, he});
  auto memory_t = t.transpose(memory);
  auto emb = t.param(embedding_);
  Tape::Var state = t.zeros(1, cfg_.dim);
  auto logits = decoder_step(t, t.embedding_lookup(emb, Vocab::kBos), state, memory, memory_t);
  return t.value(logits);
}

void QGenModel::save(const std::string& path) const {
  auto& self = const_cast<QGenModel&>(*this);  // params() only hands out pointers
  std::vector<const nn::Param*> ps;
  for (nn::Param* p : self.params()) ps.push_back(p);
  nn::Param dim_p("hp/dim", 1, 1), len_p("hp/max_decode_len", 1, 1);
  dim_p.value.at(0, 0) = cfg_.dim;
  len_p.value.at(0, 0) = cfg_.max_decode_len;
  ps.push_back(&dim_p);
  ps.push_back(&len_p);
  nn::save_checkpoint(path, ps);

  std::ofstream os(path + ".vocab");
  if (!os) throw IoError("cannot write vocab: " + path + ".vocab");
  for (const auto& tok : vocab_.id_to_token) os << tok << '\n';
}

QGenModel QGenModel::load(const std::string& path) {
  std::ifstream vs(path + ".vocab");
  if (!vs) throw IoError("cannot read vocab: " + path + ".vocab");
  Vocab vocab;
  std::string line;
  while (std::getline(vs, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) vocab.add(line);
  }
  Vocab specials = Vocab::with_specials();
  if (vocab.size() < specials.size())
    throw CheckpointError("vocab sidecar too small: " + path + ".vocab");
  for (int i = 0; i < specials.size(); ++i)
    if (vocab.token(i) != specials.token(i))
      throw CheckpointError("vocab sidecar is missing special tokens: " + path + ".vocab");

  auto entries = nn::read_checkpoint(path);
  auto find = [&](const std::string& name) -> const nn::Tensor2& {
    for (const auto& [n, t] : entries)
      if (n == name) return t;
    throw CheckpointError("checkpoint missing tensor: " + name);
  };
  QGenConfig cfg;
  cfg.dim = static_cast<int>(find("hp/dim").at(0, 0));
  cfg.max_decode_len = static_cast<int>(find("hp/max_decode_len").at(0, 0));

  QGenModel model(std::move(vocab), cfg, 0);
  std::vector<nn::Param*> ps = model.params();
  nn::load_checkpoint(path, ps);
  return model;
}

std::vector<EpochLog> train(QGenModel& model, const std::vector<QGenExample>& corpus,
                            const TrainOptions& opts) {
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  std::vector<nn::Param*> params = model.params();
  nn::Adam adam(params, opts.lr);
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochLog> log;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      try {
        adam.zero_grads();
        Tape t;
        auto l = model.loss(t, corpus[order[step]]);
        sum += t.scalar(l);
        t.backward(l);
        adam.step();
      } catch (const NonFiniteValue& e) {
        throw NonFiniteValue(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step) + ")");
      }
    }
    double mean = sum / static_cast<double>(order.size());
    log.push_back({epoch, mean});
    if (opts.on_epoch && !opts.on_epoch(epoch, mean)) break;
  }
  return log;
}

void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write training log: " + path);
  os << "epoch,mean_loss\n";
  for (const auto& e : log) {
    std::ostringstream row;
    row.precision(17);
    row << e.epoch << ',' << e.mean_loss << '\n';
    os << row.str();
  }
}

double token_accuracy(QGenModel& model, const std::vector<QGenExample>& corpus) {
  long correct = 0, total = 0;
  for (const auto& ex : corpus) {
    Tape t;
    auto memory = model.encode_memory(t, ex);
    auto memory_t = t.transpose(memory);

    std::vector<int> targets;
    for (const auto& tok : ex.question_tokens) targets.push_back(model.vocab().id(tok));
    targets.push_back(Vocab::kEos);

    auto emb = t.param(model.embedding());
    Tape::Var state = t.zeros(1, model.config().dim);
    int prev = Vocab::kBos;
    for (int target : targets) {
      auto logits = model.decoder_step(t, t.embedding_lookup(emb, prev), state, memory, memory_t);
      const nn::Tensor2& lg = t.value(logits);
      int best = 0;
      for (int j = 1; j < lg.cols; ++j)
        if (lg.at(0, j) > lg.at(0, best)) best = j;
      if (best == target) ++correct;
      ++total;
      prev = target;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double exact_match(QGenModel& model, const std::vector<QGenExample>& corpus) {
  if (corpus.empty()) return 0.0;
  long hits = 0;
  for (const auto& ex : corpus) {
    Generation gen = model.generate(ex);
    if (gen.tokens == ex.question_tokens) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

}  // namespace mwpforge::qgen
