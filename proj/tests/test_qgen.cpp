#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mwpforge/errors.hpp"
#include "mwpforge/qgen.hpp"

using namespace mwpforge;
using namespace mwpforge::qgen;

namespace {

const char* kUniforms =
    "The school makes uniforms for 40 students, known to be 15 dollars per shirt and 10 "
    "dollars per pants.";

QGenExample uniforms_example(const std::string& equation = "x = 15+10",
                             const std::string& question = "How much does one uniform cost?") {
  return prepare_example(kUniforms, question, expr::parse_infix(equation));
}

std::vector<QGenExample> tiny_corpus() {
  std::vector<QGenExample> corpus;
  corpus.push_back(uniforms_example("x = 15+10", "How much does one uniform cost?"));
  corpus.push_back(uniforms_example("x = 40*15", "How much do all the shirts cost?"));
  corpus.push_back(prepare_example("A box holds 6 pens and 4 pencils.", "How many items in 1 box?",
                                   expr::parse_infix("x = 6+4")));
  return corpus;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

nn::Tensor2 row_of(const nn::Tensor2& m, int r) {
  nn::Tensor2 out(1, m.cols);
  for (int j = 0; j < m.cols; ++j) out.at(0, j) = m.at(r, j);
  return out;
}

bool rows_equal(const nn::Tensor2& a, int ra, const nn::Tensor2& b, int rb) {
  for (int j = 0; j < a.cols; ++j)
    if (a.at(ra, j) != b.at(rb, j)) return false;
  return true;
}

}  // namespace

TEST_CASE("vocab specials occupy fixed low ids") {
  Vocab v = Vocab::with_specials();
  CHECK(v.id("<pad>") == Vocab::kPad);
  CHECK(v.id("<bos>") == Vocab::kBos);
  CHECK(v.id("<eos>") == Vocab::kEos);
  CHECK(v.id("<unk>") == Vocab::kUnk);
  CHECK(v.id("NUM0") == 4);
  CHECK(v.id("NUM9") == 13);
  CHECK(v.size() == 14);
  CHECK(v.id("absent") == Vocab::kUnk);
  int a = v.add("apple");
  CHECK(v.add("apple") == a);  // idempotent
  CHECK(v.token(a) == "apple");
}

TEST_CASE("placeholders share mention indices across views") {
  QGenExample ex = uniforms_example("x = 15+10", "What do 15 dollars and 10 dollars make?");
  // scenario: 40 -> NUM0, 15 -> NUM1, 10 -> NUM2
  int num_count = 0;
  for (const auto& tok : ex.scenario_tokens)
    if (tok.rfind("NUM", 0) == 0) ++num_count;
  CHECK(num_count == 3);
  CHECK(std::count(ex.scenario_tokens.begin(), ex.scenario_tokens.end(), "NUM0") == 1);
  CHECK(std::count(ex.scenario_tokens.begin(), ex.scenario_tokens.end(), "NUM1") == 1);
  CHECK(std::count(ex.scenario_tokens.begin(), ex.scenario_tokens.end(), "NUM2") == 1);

  CHECK(ex.equation_tokens == std::vector<std::string>{"+", "NUM1", "NUM2"});

  CHECK(std::count(ex.question_tokens.begin(), ex.question_tokens.end(), "NUM1") == 1);
  CHECK(std::count(ex.question_tokens.begin(), ex.question_tokens.end(), "NUM2") == 1);
}

TEST_CASE("unmatched numbers keep their literals") {
  QGenExample ex = uniforms_example("x = 100*2", "Is 7 the answer?");
  CHECK(ex.equation_tokens == std::vector<std::string>{"*", "100", "2"});
  CHECK(std::count(ex.question_tokens.begin(), ex.question_tokens.end(), "7") == 1);
}

TEST_CASE("more than ten mentions is an error") {
  std::string text = "Counts:";
  for (int i = 1; i <= 11; ++i) text += " " + std::to_string(i) + " apples";
  CHECK_THROWS_AS(prepare_example(text, "How many?", expr::parse_infix("x = 1+2")),
                  TooManyNumbers);
}

TEST_CASE("empty question is rejected") {
  CHECK_THROWS_AS(uniforms_example("x = 15+10", "   "), SchemaError);
}

TEST_CASE("corpus loading validates lines") {
  const char* path = "qgen_corpus_test.jsonl";
  {
    std::ofstream os(path);
    os << R"({"scenario": "A box holds 6 pens and 4 pencils.", "question": "How many items?", "equation": "x = 6+4"})"
       << "\n\n"
       << R"({"scenario": "Sam ran 3 km and walked 2 km.", "question": "How far did Sam go?", "equation": "x = 3+2"})"
       << "\n";
  }
  auto corpus = load_corpus(path);
  REQUIRE(corpus.size() == 2);
  CHECK(corpus[0].equation_tokens == std::vector<std::string>{"+", "NUM0", "NUM1"});

  {
    std::ofstream os(path);
    os << "{not json}\n";
  }
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("line 1"), SchemaError);

  {
    std::ofstream os(path);
    os << R"({"scenario": "ok 1 thing", "question": "", "equation": "x = 1*1"})" << "\n";
  }
  CHECK_THROWS_AS(load_corpus(path), SchemaError);

  {
    std::ofstream os(path);
    os << R"({"scenario": "ok 1 thing", "equation": "x = 1*1"})" << "\n";
  }
  CHECK_THROWS_AS(load_corpus(path), SchemaError);
  std::remove(path);
  CHECK_THROWS_AS(load_corpus(path), IoError);
}

TEST_CASE("vocab closure over the corpus") {
  auto corpus = tiny_corpus();
  Vocab v = build_vocab(corpus);
  for (const auto& ex : corpus) {
    for (const auto& tok : ex.question_tokens) CHECK(v.id(tok) != Vocab::kUnk);
    for (const auto& tok : ex.scenario_tokens) CHECK(v.id(tok) != Vocab::kUnk);
    for (const auto& tok : ex.equation_tokens) CHECK(v.id(tok) != Vocab::kUnk);
  }
}

TEST_CASE("gru cell matches a scalar hand computation") {
  GruCell cell("g", 1, 1);
  cell.Wz.value.at(0, 0) = 0.4;
  cell.Uz.value.at(0, 0) = -0.3;
  cell.bz.value.at(0, 0) = 0.1;
  cell.Wr.value.at(0, 0) = 0.2;
  cell.Ur.value.at(0, 0) = 0.5;
  cell.br.value.at(0, 0) = -0.2;
  cell.Wn.value.at(0, 0) = 0.7;
  cell.Un.value.at(0, 0) = 0.6;
  cell.bn.value.at(0, 0) = 0.05;

  double x = 0.9, h = -0.4;
  double z = sigmoid(0.4 * x - 0.3 * h + 0.1);
  double r = sigmoid(0.2 * x + 0.5 * h - 0.2);
  double n = std::tanh(0.7 * x + (r * h) * 0.6 + 0.05);
  double expected = (1 - z) * h + z * n;

  nn::Tape t;
  nn::Tensor2 xt(1, 1), ht(1, 1);
  xt.at(0, 0) = x;
  ht.at(0, 0) = h;
  auto out = cell.step(t, t.input(xt), t.input(ht));
  CHECK(t.value(out).at(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("tree cell matches a scalar hand computation") {
  TreeLstmCell cell("c", 1, 1);
  auto set = [](nn::Param& p, double v) { p.value.at(0, 0) = v; };
  set(cell.Wi, 0.3); set(cell.Ui, -0.2); set(cell.bi, 0.1);
  set(cell.Wf, 0.5); set(cell.Uf, 0.4);  set(cell.bf, -0.1);
  set(cell.Wo, -0.6); set(cell.Uo, 0.2); set(cell.bo, 0.05);
  set(cell.Wu, 0.8); set(cell.Uu, -0.7); set(cell.bu, 0.0);

  double x = 0.5;
  double h1 = 0.3, c1 = -0.2, h2 = -0.1, c2 = 0.4;
  double hs = h1 + h2;
  double i = sigmoid(0.3 * x - 0.2 * hs + 0.1);
  double o = sigmoid(-0.6 * x + 0.2 * hs + 0.05);
  double u = std::tanh(0.8 * x - 0.7 * hs);
  double f1 = sigmoid(0.5 * x + 0.4 * h1 - 0.1);
  double f2 = sigmoid(0.5 * x + 0.4 * h2 - 0.1);
  double c = i * u + f1 * c1 + f2 * c2;
  double h = o * std::tanh(c);

  nn::Tape t;
  auto scalar_var = [&](double v) {
    nn::Tensor2 m(1, 1);
    m.at(0, 0) = v;
    return t.input(m);
  };
  std::vector<TreeLstmCell::State> kids = {{scalar_var(h1), scalar_var(c1)},
                                           {scalar_var(h2), scalar_var(c2)}};
  auto st = cell.step(t, scalar_var(x), kids);
  CHECK(t.value(st.h).at(0, 0) == doctest::Approx(h).epsilon(1e-12));
  CHECK(t.value(st.c).at(0, 0) == doctest::Approx(c).epsilon(1e-12));

  // leaf: no children -> c = i*u with h-sum 0
  auto leaf = cell.step(t, scalar_var(x), {});
  double i0 = sigmoid(0.3 * x + 0.1);
  double u0 = std::tanh(0.8 * x);
  double c0 = i0 * u0;
  double h0 = sigmoid(-0.6 * x + 0.05) * std::tanh(c0);
  CHECK(t.value(leaf.h).at(0, 0) == doctest::Approx(h0).epsilon(1e-12));
}

TEST_CASE("shape contracts for the three encodings") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 11);
  const QGenExample& ex = corpus[0];

  nn::Tape t;
  std::vector<int> ids;
  for (const auto& tok : ex.scenario_tokens) ids.push_back(model.vocab().id(tok));
  auto hs = model.encode_scenario(t, ids);
  CHECK(t.value(hs).rows == static_cast<int>(ex.scenario_tokens.size()));
  CHECK(t.value(hs).cols == 8);

  auto he = model.encode_equation(t, ex.equation, ex.alignment, ex.doc.mentions, hs);
  CHECK(t.value(he).rows == 3);  // + NUM1 NUM2
  CHECK(t.value(he).cols == 8);

  auto memory = model.encode_memory(t, ex);
  CHECK(t.value(memory).rows == static_cast<int>(ex.scenario_tokens.size()) + 3);
  CHECK(t.value(memory).cols == 8);
}

TEST_CASE("config is validated") {
  Vocab v = Vocab::with_specials();
  CHECK_THROWS_AS(QGenModel(v, {7, 16}, 1), ConfigError);
  CHECK_THROWS_AS(QGenModel(v, {8, 0}, 1), ConfigError);
}

TEST_CASE("permuting distant tokens changes the rows between them") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 3);
  std::vector<int> ids;
  for (const auto& tok : corpus[0].scenario_tokens) ids.push_back(model.vocab().id(tok));
  REQUIRE(ids.size() >= 8);
  std::vector<int> swapped = ids;
  REQUIRE(ids[2] != ids[6]);
  std::swap(swapped[2], swapped[6]);

  nn::Tape t;
  nn::Tensor2 a = t.value(model.encode_scenario(t, ids));
  nn::Tensor2 b = t.value(model.encode_scenario(t, swapped));
  for (int r = 2; r <= 6; ++r) CHECK_FALSE(rows_equal(a, r, b, r));
}

TEST_CASE("leaf-only equation matches a manual tree cell on the raw embedding") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 19);
  // scenario without a 5, so the node stays unaligned
  QGenExample ex = prepare_example("A bag holds 3 stones.", "How many fives?",
                                   expr::parse_infix("x = 5"));

  nn::Tape t;
  std::vector<int> ids;
  for (const auto& tok : ex.scenario_tokens) ids.push_back(model.vocab().id(tok));
  auto hs = model.encode_scenario(t, ids);
  auto he = model.encode_equation(t, ex.equation, ex.alignment, ex.doc.mentions, hs);
  REQUIRE(t.value(he).rows == 1);

  // manual: gates on x = embedding("5") with zero child state
  auto named = [&](const std::string& n) -> nn::Param* {
    for (nn::Param* p : model.params())
      if (p->name == n) return p;
    REQUIRE(false);
    return nullptr;
  };
  int id5 = model.vocab().id("5");
  CHECK(id5 == Vocab::kUnk);  // "5" is not in this corpus vocab
  nn::Tensor2 x = row_of(named("emb/E")->value, id5);
  auto affine = [&](const char* w, const char* b) {
    nn::Tensor2 r = nn::matmul(x, named(std::string("eenc/tree/") + w)->value);
    const nn::Tensor2& bias = named(std::string("eenc/tree/") + b)->value;
    for (int j = 0; j < r.cols; ++j) r.at(0, j) += bias.at(0, j);
    return r;
  };
  nn::Tensor2 gi = affine("Wi", "bi"), go = affine("Wo", "bo"), gu = affine("Wu", "bu");
  for (int j = 0; j < 8; ++j) {
    double i = sigmoid(gi.at(0, j));
    double o = sigmoid(go.at(0, j));
    double u = std::tanh(gu.at(0, j));
    double h = o * std::tanh(i * u);
    CHECK(t.value(he).at(0, j) == doctest::Approx(h).epsilon(1e-12));
  }
}

TEST_CASE("zeroing aligned scenario rows changes the equation encoding") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 23);
  const QGenExample& ex = corpus[0];

  nn::Tape t;
  std::vector<int> ids;
  for (const auto& tok : ex.scenario_tokens) ids.push_back(model.vocab().id(tok));
  auto hs = model.encode_scenario(t, ids);

  nn::Tensor2 blanked = t.value(hs);
  for (int m : ex.alignment.node_to_mention) {
    if (m < 0) continue;
    int r = ex.doc.mentions[m].token_index;
    for (int j = 0; j < blanked.cols; ++j) blanked.at(r, j) = 0.0;
  }
  auto he1 = model.encode_equation(t, ex.equation, ex.alignment, ex.doc.mentions, hs);
  auto he2 =
      model.encode_equation(t, ex.equation, ex.alignment, ex.doc.mentions, t.input(blanked));
  double diff = 0;
  for (std::size_t i = 0; i < t.value(he1).size(); ++i)
    diff = std::max(diff, std::abs(t.value(he1).data[i] - t.value(he2).data[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("interact_back replaces exactly the aligned rows") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 29);
  const QGenExample& ex = corpus[0];  // 15+10: mentions 1 and 2 aligned

  nn::Tape t;
  std::vector<int> ids;
  for (const auto& tok : ex.scenario_tokens) ids.push_back(model.vocab().id(tok));
  auto hs = model.encode_scenario(t, ids);
  auto he = model.encode_equation(t, ex.equation, ex.alignment, ex.doc.mentions, hs);
  auto hs2 = model.interact_back(t, hs, he, ex.alignment, ex.doc.mentions);

  const nn::Tensor2& before = t.value(hs);
  const nn::Tensor2& after = t.value(hs2);
  REQUIRE(before.rows == after.rows);
  int r15 = ex.doc.mentions[1].token_index;
  int r10 = ex.doc.mentions[2].token_index;
  for (int r = 0; r < before.rows; ++r) {
    if (r == r15 || r == r10)
      CHECK_FALSE(rows_equal(before, r, after, r));
    else
      CHECK(rows_equal(before, r, after, r));
  }
  // replaced rows carry the equation node encodings (pre-order: + NUM1 NUM2)
  CHECK(rows_equal(after, r15, t.value(he), 1));
  CHECK(rows_equal(after, r10, t.value(he), 2));

  // empty alignment: no rows change
  QGenExample ex2 = uniforms_example("x = 100*2");
  nn::Tape t2;
  std::vector<int> ids2;
  for (const auto& tok : ex2.scenario_tokens) ids2.push_back(model.vocab().id(tok));
  auto hs_b = model.encode_scenario(t2, ids2);
  auto he_b = model.encode_equation(t2, ex2.equation, ex2.alignment, ex2.doc.mentions, hs_b);
  auto hs2_b = model.interact_back(t2, hs_b, he_b, ex2.alignment, ex2.doc.mentions);
  CHECK(t2.value(hs_b).data == t2.value(hs2_b).data);
}

TEST_CASE("greedy decode is deterministic and honors the length cap") {
  auto corpus = tiny_corpus();
  Vocab v = build_vocab(corpus);
  QGenModel a(v, {8, 16}, 123);
  QGenModel b(v, {8, 16}, 123);
  Generation g1 = a.generate(corpus[0]);
  Generation g2 = a.generate(corpus[0]);
  Generation g3 = b.generate(corpus[0]);
  CHECK(g1.tokens == g2.tokens);
  CHECK(g1.tokens == g3.tokens);  // same seed, same weights, same output

  QGenModel capped(v, {8, 1}, 123);
  Generation g4 = capped.generate(corpus[0]);
  CHECK(g4.tokens.size() <= 1);
}

TEST_CASE("perturbing an aligned number embedding moves the decoder logits") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 31);
  const QGenExample& ex = corpus[0];

  nn::Tensor2 base = model.first_step_logits(ex);
  int row = model.vocab().id("NUM1");  // aligned scenario token
  for (int j = 0; j < 8; ++j) model.embedding().value.at(row, j) += 0.25;
  nn::Tensor2 moved = model.first_step_logits(ex);
  double diff = 0;
  for (std::size_t i = 0; i < base.size(); ++i)
    diff = std::max(diff, std::abs(base.data[i] - moved.data[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("zeroed attention weight makes a memory row invisible") {
  // ctx = attn * H: when attn[r] is zero, perturbing H row r cannot reach ctx
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-1, 1);
  nn::Tensor2 attn(1, 4), mem(4, 6);
  for (auto& x : attn.data) x = std::abs(d(rng));
  attn.at(0, 2) = 0.0;
  double norm = 0;
  for (double x : attn.data) norm += x;
  for (auto& x : attn.data) x /= norm;
  for (auto& x : mem.data) x = d(rng);

  nn::Tensor2 ctx1 = nn::matmul(attn, mem);
  for (int j = 0; j < 6; ++j) mem.at(2, j) += 5.0;  // perturb the masked row
  nn::Tensor2 ctx2 = nn::matmul(attn, mem);
  CHECK(ctx1.data == ctx2.data);
}

TEST_CASE("full model passes the gradient check") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 77);
  const QGenExample& ex = corpus[0];
  auto loss_fn = [&](bool with_grad) {
    nn::Tape t;
    auto l = model.loss(t, ex);
    if (with_grad) t.backward(l);
    return t.scalar(l);
  };
  auto res = nn::grad_check(loss_fn, model.params(), 1e-5, 60, 7);
  CHECK(res.coords_checked >= 50);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("one epoch on one example reduces its loss") {
  auto corpus = tiny_corpus();
  std::vector<QGenExample> one = {corpus[0]};
  QGenModel model(build_vocab(corpus), {8, 16}, 41);
  nn::Tape t0;
  double before = t0.scalar(model.loss(t0, one[0]));
  TrainOptions opts;
  opts.epochs = 1;
  auto log = train(model, one, opts);
  REQUIRE(log.size() == 1);
  nn::Tape t1;
  double after = t1.scalar(model.loss(t1, one[0]));
  CHECK(after < before);
  CHECK(log[0].mean_loss == doctest::Approx(before));  // loss logged before the update
}

TEST_CASE("zero learning rate freezes the loss") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 43);
  TrainOptions opts;
  opts.epochs = 3;
  opts.lr = 0.0;
  opts.seed = 9;
  auto log = train(model, corpus, opts);
  REQUIRE(log.size() == 3);
  CHECK(log[0].mean_loss == log[1].mean_loss);
  CHECK(log[1].mean_loss == log[2].mean_loss);
}

TEST_CASE("training is seed-deterministic and can stop early") {
  auto corpus = tiny_corpus();
  auto run = [&](int epochs) {
    QGenModel model(build_vocab(corpus), {8, 16}, 55);
    TrainOptions opts;
    opts.epochs = epochs;
    opts.seed = 2;
    auto log = train(model, corpus, opts);
    return std::make_pair(log, model.embedding().value.data);
  };
  auto [log_a, emb_a] = run(4);
  auto [log_b, emb_b] = run(4);
  REQUIRE(log_a.size() == log_b.size());
  for (std::size_t i = 0; i < log_a.size(); ++i)
    CHECK(log_a[i].mean_loss == log_b[i].mean_loss);  // bitwise
  CHECK(emb_a == emb_b);

  QGenModel model(build_vocab(corpus), {8, 16}, 55);
  TrainOptions opts;
  opts.epochs = 100;
  opts.seed = 2;
  int calls = 0;
  opts.on_epoch = [&](int, double) { return ++calls < 2; };
  auto log = train(model, corpus, opts);
  CHECK(log.size() == 2);
}

TEST_CASE("non-finite weights abort training with the step position") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 61);
  model.embedding().value.at(0, 0) = std::nan("");
  TrainOptions opts;
  opts.epochs = 1;
  CHECK_THROWS_WITH_AS(train(model, corpus, opts), doctest::Contains("epoch 0"), NonFiniteValue);
}

TEST_CASE("training log csv") {
  std::vector<EpochLog> log = {{0, 1.5}, {1, 0.75}};
  const char* path = "qgen_log_test.csv";
  write_train_log_csv(path, log);
  std::ifstream is(path);
  std::string l0, l1, l2;
  std::getline(is, l0);
  std::getline(is, l1);
  std::getline(is, l2);
  CHECK(l0 == "epoch,mean_loss");
  CHECK(l1 == "0,1.5");
  CHECK(l2 == "1,0.75");
  std::remove(path);
}

TEST_CASE("checkpoint round trip preserves behavior bitwise") {
  auto corpus = tiny_corpus();
  QGenModel model(build_vocab(corpus), {8, 16}, 91);
  TrainOptions opts;
  opts.epochs = 2;
  train(model, corpus, opts);

  const char* path = "qgen_ckpt_test.bin";
  model.save(path);
  QGenModel loaded = QGenModel::load(path);
  CHECK(loaded.config().dim == 8);
  CHECK(loaded.config().max_decode_len == 16);
  CHECK(loaded.vocab().id_to_token == model.vocab().id_to_token);
  CHECK(loaded.embedding().value.data == model.embedding().value.data);
  for (const auto& ex : corpus) {
    Generation a = model.generate(ex);
    Generation b = loaded.generate(ex);
    CHECK(a.tokens == b.tokens);
    CHECK(a.text == b.text);
  }
  std::remove((std::string(path) + ".vocab").c_str());
  CHECK_THROWS_AS(QGenModel::load(path), IoError);
  std::remove(path);
}

TEST_CASE("generated placeholders are restored to surface forms") {
  // force NUM0 as the argmax continuation by training a one-example corpus
  // whose question is a single placeholder
  auto base = prepare_example("Lena bought 14.60 kg of rice.", "Only 14.60 here?",
                              expr::parse_infix("x = 14.6"));
  std::vector<QGenExample> corpus = {base};
  QGenModel model(build_vocab(corpus), {8, 8}, 17);
  TrainOptions opts;
  opts.epochs = 80;
  train(model, corpus, opts);
  Generation gen = model.generate(base);
  REQUIRE_FALSE(gen.tokens.empty());
  if (gen.tokens == base.question_tokens) {
    CHECK(gen.text == "Only 14.60 here ?");  // surface "14.60", not "14.6"
  }
  CHECK(gen.text.find("NUM0") == std::string::npos);
}
