#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mwpforge/errors.hpp"
#include "mwpforge/pipeline.hpp"

using namespace mwpforge;
using namespace mwpforge::pipeline;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content) : path(name) {
    std::ofstream os(path);
    os << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<nlohmann::ordered_json> read_jsonl(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::vector<nlohmann::ordered_json> records;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) records.push_back(nlohmann::ordered_json::parse(line));
  return records;
}

const char* kUniformsLine =
    R"js({"group_id": "g1", "scenario": "The school makes uniforms for 40 students, known to be 15 dollars per shirt and 10 dollars per pants.", "items": [{"question": "How much does the school pay for all uniforms?", "equation": "x = 40*(15+10)"}]})js";

struct Cleanup {
  std::vector<std::string> paths;
  ~Cleanup() {
    for (const auto& p : paths) std::remove(p.c_str());
  }
};

}  // namespace

TEST_CASE("config files parse with overrides and comments") {
  TempFile f("pl_config.cfg",
             "# pipeline settings\n"
             "input = corpus.jsonl\n"
             "out=out.jsonl\n"
             "k = 7\n"
             "expert = oracle:table.jsonl\n"
             "seed = 99\n"
             "stop_words = per, the, of\n"
             "max_operators = 2\n"
             "deq = true\n"
             "deq_scope = originals\n"
             "\n"
             "lr = 0.01\n");
  PipelineConfig cfg = parse_config_file(f.path);
  CHECK(cfg.input == "corpus.jsonl");
  CHECK(cfg.out == "out.jsonl");
  CHECK(cfg.k == 7);
  CHECK(cfg.expert == "oracle:table.jsonl");
  CHECK(cfg.seed == 99);
  CHECK(cfg.stop_words == std::vector<std::string>{"per", "the", "of"});
  CHECK(cfg.max_operators == 2);
  CHECK(cfg.deq);
  CHECK(cfg.deq_scope == eval::DeqScope::Originals);
  CHECK(cfg.lr == doctest::Approx(0.01));
  CHECK(cfg.epochs == 50);  // untouched defaults survive
}

TEST_CASE("config problems name the key and line") {
  TempFile unknown("pl_cfg_bad1.cfg", "inpuy = x.jsonl\n");
  CHECK_THROWS_WITH_AS(parse_config_file(unknown.path), doctest::Contains("inpuy"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_file(unknown.path), doctest::Contains("line 1"), ConfigError);

  TempFile bad_int("pl_cfg_bad2.cfg", "input = a.jsonl\nk = five\n");
  CHECK_THROWS_WITH_AS(parse_config_file(bad_int.path), doctest::Contains("k"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_file(bad_int.path), doctest::Contains("line 2"), ConfigError);

  TempFile no_eq("pl_cfg_bad3.cfg", "just words\n");
  CHECK_THROWS_AS(parse_config_file(no_eq.path), ConfigError);
  CHECK_THROWS_AS(parse_config_file("pl_cfg_missing.cfg"), IoError);

  PipelineConfig cfg;
  CHECK_THROWS_AS(apply_setting(cfg, "deq_scope", "sideways"), ConfigError);
  CHECK_THROWS_AS(apply_setting(cfg, "deq", "maybe"), ConfigError);

  cfg.k = 0;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("k"), ConfigError);
  cfg.k = 5;
  cfg.dim = 9;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("dim"), ConfigError);
  cfg.dim = 8;
  cfg.lr = -1.0;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("lr"), ConfigError);
}

TEST_CASE("augment emits tagged diverse equations") {
  TempFile in("pl_aug_in.jsonl", std::string(kUniformsLine) + "\n");
  Cleanup clean{{"pl_aug_out.jsonl"}};
  PipelineConfig cfg;
  cfg.input = in.path;
  cfg.out = "pl_aug_out.jsonl";
  int n = cmd_augment(cfg);
  auto records = read_jsonl(cfg.out);
  CHECK(n == static_cast<int>(records.size()));
  REQUIRE(!records.empty());

  std::set<std::string> keys;
  for (const auto& r : records) {
    CHECK(r.at("group_id") == "g1");
    CHECK(r.at("source_equation") == "x = 40*(15+10)");
    CHECK(r.at("strategy").is_string());
    CHECK(r.at("provenance").is_string());
    keys.insert(expr::canonical_key(expr::parse_infix(r.at("equation").get<std::string>())));
  }
  // the shirt+pants sum, and the two cross-unit products
  CHECK(keys.count(expr::canonical_key(expr::parse_infix("x = 15+10"))));
  CHECK(keys.count(expr::canonical_key(expr::parse_infix("x = 40*15"))));
  CHECK(keys.count(expr::canonical_key(expr::parse_infix("x = 40*10"))));
  // the original never survives into the candidate set
  CHECK_FALSE(keys.count(expr::canonical_key(expr::parse_infix("x = 40*(15+10)"))));

  cfg.input = "";
  CHECK_THROWS_WITH_AS(cmd_augment(cfg), doctest::Contains("input"), ConfigError);
}

TEST_CASE("train, generate, filter, eval chain deterministically") {
  const char* corpus =
      R"({"group_id": "g1", "scenario": "Tom has 3 red pens and 5 blue pens.", "items": [{"question": "How many pens does Tom have?", "equation": "x = 3+5"}, {"question": "How many more blue pens than red pens?", "equation": "x = 5-3"}]})"
      "\n"
      R"({"group_id": "g2", "scenario": "A box holds 4 rows of 6 eggs.", "items": [{"question": "How many eggs fit in the box?", "equation": "x = 4*6"}]})"
      "\n";
  TempFile in("pl_chain_in.jsonl", corpus);
  Cleanup clean{{"pl_chain_ck", "pl_chain_ck.vocab", "pl_chain_ck.log.csv", "pl_chain_ck2",
                 "pl_chain_ck2.vocab", "pl_chain_ck2.log.csv", "pl_chain_cands.jsonl",
                 "pl_chain_gen.jsonl", "pl_chain_gen2.jsonl", "pl_chain_acc.jsonl",
                 "pl_chain_acc.jsonl.rejects", "pl_chain_report.json"}};

  PipelineConfig cfg;
  cfg.input = in.path;
  cfg.checkpoint = "pl_chain_ck";
  cfg.seed = 7;
  cfg.epochs = 2;
  cfg.dim = 8;
  TrainSummary ts = cmd_train_qgen(cfg);
  CHECK(ts.examples == 3);
  CHECK(ts.epochs_run == 2);
  CHECK(std::ifstream("pl_chain_ck").good());
  CHECK(std::ifstream("pl_chain_ck.log.csv").good());

  // same seed, same bytes
  PipelineConfig cfg2 = cfg;
  cfg2.checkpoint = "pl_chain_ck2";
  cmd_train_qgen(cfg2);
  CHECK(slurp("pl_chain_ck") == slurp("pl_chain_ck2"));
  CHECK(slurp("pl_chain_ck.log.csv") == slurp("pl_chain_ck2.log.csv"));

  // augment the corpus, then give every candidate a question
  cfg.out = "pl_chain_cands.jsonl";
  int candidates = cmd_augment(cfg);
  CHECK(candidates > 0);

  PipelineConfig gen = cfg;
  gen.input = "pl_chain_cands.jsonl";
  gen.out = "pl_chain_gen.jsonl";
  int generated = cmd_generate(gen);
  CHECK(generated == candidates);
  auto gen_records = read_jsonl(gen.out);
  REQUIRE(gen_records.size() == static_cast<std::size_t>(candidates));
  for (const auto& r : gen_records) {
    CHECK(r.at("question").is_string());
    CHECK(r.at("question_tokens").is_array());
    CHECK(r.at("truncated").is_boolean());
  }
  gen.out = "pl_chain_gen2.jsonl";
  cmd_generate(gen);
  CHECK(slurp("pl_chain_gen.jsonl") == slurp("pl_chain_gen2.jsonl"));

  gen.checkpoint = "";
  CHECK_THROWS_WITH_AS(cmd_generate(gen), doctest::Contains("checkpoint"), ConfigError);

  // filter the generated candidates with the enumerative expert
  PipelineConfig flt;
  flt.input = "pl_chain_gen.jsonl";
  flt.out = "pl_chain_acc.jsonl";
  flt.k = 8;
  FilterSummary fs = cmd_filter(flt);
  CHECK(fs.accepted + fs.rejected == candidates);
  auto accepted = read_jsonl(flt.out);
  auto rejected = read_jsonl(rejects_path(flt.out));
  CHECK(static_cast<int>(accepted.size()) == fs.accepted);
  CHECK(static_cast<int>(rejected.size()) == fs.rejected);
  for (const auto& r : accepted) {
    CHECK(r.at("filter").at("accepted") == true);
    CHECK(r.at("filter").at("matched_rank").is_number_integer());
    CHECK(r.at("filter").at("candidate_answer").is_number());
  }
  for (const auto& r : rejected) CHECK(r.at("filter").at("accepted") == false);

  // score a perfect scripted solver against the original corpus
  PipelineConfig ev;
  ev.input = in.path;
  ev.solver = "sed 's/.*/x = 8/'";  // right only for 3+5
  ev.out = "pl_chain_report.json";
  ev.deq = true;
  eval::EvalReport report = cmd_eval(ev);
  CHECK(report.accuracy == doctest::Approx(1.0 / 3.0));
  CHECK(report.deq_accuracy.has_value());
  auto j = nlohmann::json::parse(slurp("pl_chain_report.json"));
  CHECK(j.at("accuracy").get<double>() == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("filter records decisions for oracle experts and broken candidates") {
  TempFile oracle("pl_oracle.jsonl",
                  R"({"question": "How many pens in total?", "equation_note": "", "equations": ["x = 3+5", "x = 3*5"]})"
                  "\n");
  // oracle table records only need question + equations; extra fields pass through
  TempFile in("pl_flt_in.jsonl",
              R"({"group_id": "a", "scenario": "3 pens and 5 pens.", "question": "How many pens in total?", "equation": "x = 5+3"})"
              "\n"
              R"({"group_id": "a", "scenario": "3 pens and 5 pens.", "question": "How many pens in total?", "equation": "x = 5-3"})"
              "\n"
              R"js({"group_id": "a", "scenario": "3 pens and 5 pens.", "question": "How many pens in total?", "equation": "x = 5/(3-3)"})js"
              "\n");
  Cleanup clean{{"pl_flt_out.jsonl", "pl_flt_out.jsonl.rejects"}};

  PipelineConfig cfg;
  cfg.input = in.path;
  cfg.out = "pl_flt_out.jsonl";
  cfg.expert = "oracle:pl_oracle.jsonl";
  FilterSummary s = cmd_filter(cfg);
  CHECK(s.accepted == 1);
  CHECK(s.rejected == 2);

  auto accepted = read_jsonl(cfg.out);
  REQUIRE(accepted.size() == 1);
  CHECK(accepted[0].at("equation") == "x = 5+3");
  CHECK(accepted[0].at("filter").at("matched_rank") == 0);
  CHECK(accepted[0].at("filter").at("candidate_answer").get<double>() == doctest::Approx(8.0));
  CHECK(accepted[0].at("filter").at("error").is_null());

  auto rejected = read_jsonl(rejects_path(cfg.out));
  REQUIRE(rejected.size() == 2);
  CHECK(rejected[0].at("filter").at("matched_rank").is_null());
  CHECK(rejected[1].at("filter").at("error") == "division_by_zero");
  CHECK(rejected[1].at("filter").at("candidate_answer").is_null());

  cfg.expert = "psychic";
  CHECK_THROWS_WITH_AS(cmd_filter(cfg), doctest::Contains("expert"), ConfigError);
}

TEST_CASE("eval demands exactly one source of predictions") {
  TempFile in("pl_eval_in.jsonl", std::string(kUniformsLine) + "\n");
  TempFile preds("pl_eval_preds.jsonl",
                 R"({"group_id": "g1", "item_index": 0, "equation": "x = 1000"})"
                 "\n");
  PipelineConfig cfg;
  cfg.input = in.path;
  CHECK_THROWS_AS(cmd_eval(cfg), ConfigError);

  cfg.predictions = preds.path;
  eval::EvalReport report = cmd_eval(cfg);
  CHECK(report.accuracy == doctest::Approx(1.0));
  CHECK_FALSE(report.deq_accuracy.has_value());

  cfg.solver = "cat";
  CHECK_THROWS_AS(cmd_eval(cfg), ConfigError);

  cfg.solver = "";
  cfg.deq = true;  // scenario-only scoring needs a live solver
  CHECK_THROWS_WITH_AS(cmd_eval(cfg), doctest::Contains("solver"), ConfigError);
}
