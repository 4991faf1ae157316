// seg2seg command-line tool: gen-data, train, simulate, evaluate, sweep,
// similarity-report. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "seg2seg/checkpoint.hpp"
#include "seg2seg/config.hpp"
#include "seg2seg/pipeline.hpp"
#include "seg2seg/similarity.hpp"
#include "seg2seg/train.hpp"

namespace fs = std::filesystem;
using namespace seg2seg;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string require(const std::string& value, const std::string& key) {
  if (value.empty()) throw UsageError("missing required setting --" + key);
  return value;
}

std::string out_path(const config::RunConfig& c, const std::string& name) {
  fs::create_directories(c.out);
  return (fs::path(c.out) / name).string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

std::vector<tasks::Example> load_examples(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("dataset not found: " + path);
  return tasks::load_jsonl(path);
}

void log_step(std::ostream& os, const train::StepLog& l) {
  nlohmann::json j{{"type", "step"},       {"step", l.step},          {"lr", l.lr},
                   {"grad_norm", l.grad_norm}, {"ce", l.report.ce},   {"cw", l.report.cw_term},
                   {"al", l.report.al_term},  {"total", l.report.total}};
  os << j.dump() << '\n';
}

void log_eval(std::ostream& os, const train::EvalLog& e) {
  nlohmann::json j{{"type", "eval"},          {"step", e.step},     {"token_acc", e.token_accuracy},
                   {"exact_match", e.exact_match}, {"ce", e.report.ce}, {"cw", e.report.cw_term},
                   {"al", e.report.al_term},   {"total", e.report.total}};
  os << j.dump() << '\n';
}

model::Model train_model(const config::RunConfig& c, const std::vector<tasks::Example>& train_set,
                         const std::vector<tasks::Example>& dev_set, std::ostream& log) {
  model::Model init = model::Model::initialize(c.model, c.train.seed);
  const int every = std::max(1, c.train.steps / 20);
  train::TrainResult r = train::train(
      std::move(init), train_set, dev_set, c.train,
      [&](const train::StepLog& l) {
        log_step(log, l);
        if (l.step % every == 0) {
          std::fprintf(stderr, "step %d  ce %.4f  cw %.4f  al %.4f\n", l.step, l.report.ce, l.report.cw_term,
                       l.report.al_term);
        }
      },
      [&](const train::EvalLog& e) {
        log_eval(log, e);
        std::fprintf(stderr, "eval step %d  token_acc %.4f  exact %.4f\n", e.step, e.token_accuracy,
                     e.exact_match);
      });
  return std::move(r.model);
}

int cmd_gen_data(const config::RunConfig& c) {
  const auto splits = pipeline::generate_splits(c.task, c.train_size, c.dev_size, c.test_size);
  tasks::save_jsonl(out_path(c, "train.jsonl"), splits.train);
  tasks::save_jsonl(out_path(c, "dev.jsonl"), splits.dev);
  tasks::save_jsonl(out_path(c, "test.jsonl"), splits.test);
  std::fprintf(stderr, "wrote %zu/%zu/%zu examples to %s\n", splits.train.size(), splits.dev.size(),
               splits.test.size(), c.out.c_str());
  return 0;
}

int cmd_train(const config::RunConfig& c) {
  const auto train_set = load_examples(require(c.train_data, "train_data"));
  const auto dev_set = c.dev_data.empty() ? std::vector<tasks::Example>{} : load_examples(c.dev_data);
  {
    auto cfg = open_out(out_path(c, "config.txt"));
    cfg << config::dump(c);
  }
  auto log = open_out(out_path(c, "train_log.jsonl"));
  const model::Model m = train_model(c, train_set, dev_set, log);
  const std::string ckpt = c.checkpoint.empty() ? out_path(c, "model.s2sg") : c.checkpoint;
  checkpoint::save(ckpt, m);
  std::fprintf(stderr, "checkpoint written to %s\n", ckpt.c_str());
  return 0;
}

int cmd_simulate(const config::RunConfig& c) {
  const model::Model m = checkpoint::load(require(c.checkpoint, "checkpoint"), c.model);
  const auto examples = load_examples(require(c.test_data, "test_data"));
  const auto traces = pipeline::simulate(m, examples, c.policy);
  const std::string tpath = c.traces.empty() ? out_path(c, "traces.jsonl") : c.traces;
  const std::string hpath = c.hypotheses.empty() ? out_path(c, "hypotheses.jsonl") : c.hypotheses;
  auto tos = open_out(tpath);
  std::vector<pipeline::Hypothesis> hyps;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    policy::write_trace_jsonl(tos, traces[i]);
    hyps.push_back(pipeline::hypothesis_of(i, traces[i]));
  }
  auto hos = open_out(hpath);
  pipeline::write_hypotheses_jsonl(hos, hyps);
  std::fprintf(stderr, "simulated %zu examples with %s\n", traces.size(), policy::to_string(c.policy.kind).c_str());
  return 0;
}

int cmd_evaluate(const config::RunConfig& c) {
  const auto examples = load_examples(require(c.test_data, "test_data"));
  std::ifstream tin(require(c.traces, "traces"));
  if (!tin) throw std::runtime_error("cannot open traces " + c.traces);
  std::ifstream hin(require(c.hypotheses, "hypotheses"));
  if (!hin) throw std::runtime_error("cannot open hypotheses " + c.hypotheses);
  const auto traces = policy::read_traces_jsonl(tin);
  const auto hyps = pipeline::read_hypotheses_jsonl(hin);
  const auto report = pipeline::evaluate(traces, hyps, examples, c.boundary_tolerance);
  open_out(out_path(c, "report.json")) << pipeline::report_json(report) << '\n';
  open_out(out_path(c, "report.csv")) << pipeline::report_csv(report);
  const auto& k = report.corpus;
  std::printf("examples %zu  AL %.4f  CW %.4f  AP %.4f  DAL %.4f  token_acc %.4f  emission_acc %.4f  R %.4f\n",
              report.examples.size(), k.al, k.cw, k.ap, k.dal, k.token_accuracy, k.emission_accuracy, k.r_value);
  return 0;
}

int cmd_sweep(const config::RunConfig& c) {
  if (c.lambdas.empty()) throw UsageError("sweep needs a non-empty --lambdas list");
  const auto train_set = load_examples(require(c.train_data, "train_data"));
  const auto test_set = load_examples(require(c.test_data, "test_data"));
  const auto dev_set = c.dev_data.empty() ? std::vector<tasks::Example>{} : load_examples(c.dev_data);
  std::vector<pipeline::SweepRow> rows;
  for (double lambda : c.lambdas) {
    config::RunConfig run = c;
    run.train.loss.lambda = lambda;
    std::fprintf(stderr, "lambda %g\n", lambda);
    char tag[64];
    std::snprintf(tag, sizeof tag, "lambda_%g", lambda);
    auto log = open_out(out_path(c, std::string("train_log_") + tag + ".jsonl"));
    const model::Model m = train_model(run, train_set, dev_set, log);
    checkpoint::save(out_path(c, std::string("model_") + tag + ".s2sg"), m);
    const auto traces = pipeline::simulate(m, test_set, run.policy);
    std::vector<pipeline::Hypothesis> hyps;
    for (std::size_t i = 0; i < traces.size(); ++i) hyps.push_back(pipeline::hypothesis_of(i, traces[i]));
    const auto report = pipeline::evaluate(traces, hyps, test_set, c.boundary_tolerance);
    rows.push_back({lambda, report.corpus.al, report.corpus.cw, report.corpus.ap, report.corpus.dal,
                    report.corpus.token_accuracy});
  }
  const std::string csv = pipeline::sweep_csv(rows);
  open_out(out_path(c, "sweep.csv")) << csv;
  std::cout << csv;
  return 0;
}

int cmd_similarity(const config::RunConfig& c) {
  const model::Model m = checkpoint::load(require(c.checkpoint, "checkpoint"), c.model);
  const auto examples = load_examples(require(c.test_data, "test_data"));
  const auto report = similarity::representation_similarity(m, examples, c.policy, c.target_rep);
  open_out(out_path(c, "similarity.json")) << similarity::to_json(report) << '\n';
  std::printf("segments %zu  source<->target %.4f  source<->segment %.4f  segment<->target %.4f\n",
              report.segments, report.source_target, report.source_segment, report.segment_target);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segment-to-segment simultaneous generation toolkit"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const config::RunConfig&);
  };
  const Command commands[] = {
      {"gen-data", "generate train/dev/test splits for a synthetic task", cmd_gen_data},
      {"train", "train a model and write a checkpoint", cmd_train},
      {"simulate", "run a streaming policy over a dataset", cmd_simulate},
      {"evaluate", "score traces and hypotheses against a dataset", cmd_evaluate},
      {"sweep", "train and evaluate across lambda values", cmd_sweep},
      {"similarity-report", "source/segment/target representation similarity", cmd_similarity},
  };

  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::App*> subs;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_path, "flat key = value configuration file");
    for (const auto& key : config::keys()) {
      sub->add_option_function<std::string>(
          "--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; }, "overrides '" + key + "'");
    }
    subs[cmd.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  config::RunConfig cfg;
  try {
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw UsageError("config file not found: " + config_path);
      cfg = config::load(config_path);
    }
    for (const auto& key : config::keys()) {
      if (auto it = overrides.find(key); it != overrides.end()) config::apply(cfg, key, it->second);
    }
    cfg.validate();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  for (const auto& cmd : commands) {
    if (!subs[cmd.name]->parsed()) continue;
    try {
      return cmd.run(cfg);
    } catch (const UsageError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 1;
    } catch (const train::NonFiniteLoss& e) {
      std::fprintf(stderr, "error: %s (ce %.6g, cw %.6g, al %.6g)\n", e.what(), e.last_finite.ce,
                   e.last_finite.cw_term, e.last_finite.al_term);
      return 2;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 2;
    }
  }
  return 1;
}
