#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mwpforge/errors.hpp"
#include "mwpforge/eval.hpp"
#include "mwpforge/pipeline.hpp"

namespace pl = mwpforge::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"mwpforge: diverse math word problems from a seed corpus"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path, input, out, expert, checkpoint, solver, predictions, deq_scope;
  std::uint64_t seed = 0;
  int k = 0, parallel = 0, epochs = 0, dim = 0, max_decode_len = 0, max_operators = 0;
  double lr = 0.0;
  bool deq = false;

  app.add_option("--config", config_path, "settings file, one key = value per line");
  app.add_option("--seed", seed, "RNG seed; fixed seed fixes every output byte");
  app.add_option("--k", k, "expert answers consulted per candidate");
  app.add_option("--expert", expert, "filter expert: enumerative or oracle:<path>");
  app.add_option("--checkpoint", checkpoint, "question generator checkpoint path");
  app.add_option("--out", out, "output path");
  app.add_option("--solver", solver, "external solver command (eval)");
  app.add_option("--predictions", predictions, "predictions JSONL (eval)");
  app.add_flag("--deq", deq, "also score scenario-only prompts (eval)");
  app.add_option("--deq-scope", deq_scope, "scenario-only scoring scope: all or originals");
  app.add_option("--parallel", parallel, "parallel solver batches (eval)");
  app.add_option("--epochs", epochs, "training epochs (train-qgen)");
  app.add_option("--lr", lr, "learning rate (train-qgen)");
  app.add_option("--dim", dim, "model width (train-qgen)");
  app.add_option("--max-decode-len", max_decode_len, "decode length cap (train-qgen)");
  app.add_option("--max-operators", max_operators, "enumerative expert operator cap");

  auto* augment = app.add_subcommand("augment", "diverse equations from a grouped dataset");
  auto* generate = app.add_subcommand("generate", "questions for candidate equations");
  auto* filter = app.add_subcommand("filter", "answer-equivalence filtering of candidates");
  auto* train = app.add_subcommand("train-qgen", "train the question generator");
  auto* eval_cmd = app.add_subcommand("eval", "score a solver or predictions file");
  for (auto* sub : {augment, generate, filter, train, eval_cmd})
    sub->add_option("input", input, "input JSONL path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    nlohmann::ordered_json err;
    err["error"] = "config";
    err["message"] = e.what();
    std::cerr << err.dump() << '\n';
    return 1;
  }

  try {
    pl::PipelineConfig cfg;
    if (app.count("--config")) cfg = pl::parse_config_file(config_path);
    // flags override the file
    if (app.count("--seed")) cfg.seed = seed;
    if (app.count("--k")) cfg.k = k;
    if (app.count("--expert")) cfg.expert = expert;
    if (app.count("--checkpoint")) cfg.checkpoint = checkpoint;
    if (app.count("--out")) cfg.out = out;
    if (app.count("--solver")) cfg.solver = solver;
    if (app.count("--predictions")) cfg.predictions = predictions;
    if (app.count("--deq")) cfg.deq = deq;
    if (app.count("--deq-scope")) pl::apply_setting(cfg, "deq_scope", deq_scope);
    if (app.count("--parallel")) cfg.parallel = parallel;
    if (app.count("--epochs")) cfg.epochs = epochs;
    if (app.count("--lr")) cfg.lr = lr;
    if (app.count("--dim")) cfg.dim = dim;
    if (app.count("--max-decode-len")) cfg.max_decode_len = max_decode_len;
    if (app.count("--max-operators")) cfg.max_operators = max_operators;
    const CLI::App* sub = app.get_subcommands().front();
    if (sub->count("input")) cfg.input = input;

    if (*augment) {
      int n = pl::cmd_augment(cfg);
      std::cout << "wrote " << n << " candidate equations to " << cfg.out << '\n';
    } else if (*generate) {
      int n = pl::cmd_generate(cfg);
      std::cout << "wrote " << n << " candidate problems to " << cfg.out << '\n';
    } else if (*filter) {
      pl::FilterSummary s = pl::cmd_filter(cfg);
      std::cout << "accepted " << s.accepted << " -> " << cfg.out << "\nrejected " << s.rejected
                << " -> " << pl::rejects_path(cfg.out) << '\n';
    } else if (*train) {
      pl::TrainSummary s = pl::cmd_train_qgen(cfg);
      std::cout << "trained on " << s.examples << " examples for " << s.epochs_run
                << " epochs, final loss " << s.final_loss << "\ncheckpoint " << cfg.checkpoint
                << '\n';
    } else if (*eval_cmd) {
      mwpforge::eval::EvalReport report = pl::cmd_eval(cfg);
      std::cout << mwpforge::eval::report_table(report);
    }
    return 0;
  } catch (const mwpforge::Error& e) {
    nlohmann::ordered_json err;
    err["error"] = e.kind();
    err["message"] = e.what();
    std::cerr << err.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    nlohmann::ordered_json err;
    err["error"] = "internal";
    err["message"] = e.what();
    std::cerr << err.dump() << '\n';
    return 1;
  }
}
