#include "seg2seg/pipeline.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace seg2seg::pipeline {

using nlohmann::json;

DataSplits generate_splits(const tasks::TaskSpec& spec, std::size_t train_size, std::size_t dev_size,
                           std::size_t test_size) {
  DataSplits out;
  tasks::TaskSpec s = spec;
  out.train = tasks::generate(s, train_size);
  s.seed = spec.seed + 1000003ULL;
  out.dev = tasks::generate(s, dev_size);
  s.seed = spec.seed + 2000006ULL;
  out.test = tasks::generate(s, test_size);
  return out;
}

std::vector<policy::StreamTrace> simulate(const model::Model& model, const std::vector<tasks::Example>& examples,
                                          const policy::PolicyConfig& config) {
  std::vector<policy::StreamTrace> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(policy::run_policy(model, ex.source, config));
  return out;
}

Hypothesis hypothesis_of(std::size_t index, const policy::StreamTrace& trace) {
  return {index, model::to_symbols(trace.hypothesis), trace.truncated};
}

void write_hypotheses_jsonl(std::ostream& os, const std::vector<Hypothesis>& hyps) {
  for (const auto& h : hyps) {
    json j;
    j["index"] = h.index;
    j["tokens"] = h.tokens;
    j["truncated"] = h.truncated;
    os << j.dump() << '\n';
  }
}

std::vector<Hypothesis> read_hypotheses_jsonl(std::istream& is) {
  std::vector<Hypothesis> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Hypothesis h;
      h.index = j.at("index").get<std::size_t>();
      h.tokens = j.at("tokens").get<std::vector<int>>();
      h.truncated = j.value("truncated", false);
      out.push_back(std::move(h));
    } catch (const std::exception& e) {
      throw std::invalid_argument("hypotheses line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<int> latency_times(const policy::StreamTrace& trace) {
  if (!trace.t.empty()) return trace.t;
  int reads = 0;
  for (const auto& e : trace.events) {
    if (e.kind == policy::Event::Kind::kRead) ++reads;
    if (e.kind == policy::Event::Kind::kWrite) break;
  }
  return {std::max(reads, 1)};
}

ExampleMetrics evaluate_example(const policy::StreamTrace& trace, const Hypothesis& hyp,
                                const tasks::Example& example, int boundary_tolerance) {
  if (trace.source_length != example.source.size()) {
    throw std::invalid_argument("evaluate: trace source length " + std::to_string(trace.source_length) +
                                " differs from example length " + std::to_string(example.source.size()));
  }
  if (hyp.tokens != model::to_symbols(trace.hypothesis)) {
    throw std::invalid_argument("evaluate: hypothesis " + std::to_string(hyp.index) + " disagrees with its trace");
  }
  ExampleMetrics m;
  policy::StreamTrace timed = trace;
  timed.t = latency_times(trace);
  const metrics::LatencyReport lat = metrics::latency_report(timed, example.alignment);
  m.al = lat.al;
  m.cw = lat.cw;
  m.ap = lat.ap;
  m.dal = lat.dal;
  m.d_mean = lat.mean_alignment_delay;
  m.al_fallback = lat.truncated;
  m.truncated = trace.truncated;
  const metrics::GenerationQuality q = metrics::generation_quality(hyp.tokens, example.target);
  m.token_accuracy = q.token_accuracy;
  m.exact_match = q.exact_match;
  m.emission_accuracy = example.alignment.empty() ? 1.0 : metrics::emission_accuracy(trace.t, example.alignment);
  const metrics::SegmentationScore seg =
      metrics::segmentation_quality(trace.boundaries, example.boundaries, boundary_tolerance);
  m.precision = seg.precision;
  m.recall = seg.recall;
  m.r_value = seg.r_value;
  return m;
}

EvaluationReport evaluate(const std::vector<policy::StreamTrace>& traces, const std::vector<Hypothesis>& hyps,
                          const std::vector<tasks::Example>& examples, int boundary_tolerance) {
  if (traces.size() != examples.size() || hyps.size() != examples.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(traces.size()) + " traces, " +
                                std::to_string(hyps.size()) + " hypotheses and " +
                                std::to_string(examples.size()) + " examples");
  }
  EvaluationReport r;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (hyps[i].index != i) throw std::invalid_argument("evaluate: hypothesis out of order at " + std::to_string(i));
    r.examples.push_back(evaluate_example(traces[i], hyps[i], examples[i], boundary_tolerance));
  }
  if (r.examples.empty()) return r;
  ExampleMetrics& c = r.corpus;
  int exact = 0;
  for (const auto& m : r.examples) {
    c.al += m.al;
    c.cw += m.cw;
    c.ap += m.ap;
    c.dal += m.dal;
    c.d_mean += m.d_mean;
    c.token_accuracy += m.token_accuracy;
    exact += m.exact_match;
    c.emission_accuracy += m.emission_accuracy;
    c.precision += m.precision;
    c.recall += m.recall;
    c.r_value += m.r_value;
    r.truncated += m.truncated ? 1 : 0;
    r.al_fallback += m.al_fallback ? 1 : 0;
  }
  const double n = static_cast<double>(r.examples.size());
  for (double* v : {&c.al, &c.cw, &c.ap, &c.dal, &c.d_mean, &c.token_accuracy, &c.emission_accuracy, &c.precision,
                    &c.recall, &c.r_value})
    *v /= n;
  c.exact_match = exact;
  return r;
}

namespace {

json metrics_json(const ExampleMetrics& m) {
  return {{"al", m.al},
          {"cw", m.cw},
          {"ap", m.ap},
          {"dal", m.dal},
          {"d_mean", m.d_mean},
          {"token_acc", m.token_accuracy},
          {"exact_match", m.exact_match},
          {"emission_acc", m.emission_accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"r_value", m.r_value},
          {"truncated", m.truncated},
          {"al_fallback", m.al_fallback}};
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_row(const std::string& label, const ExampleMetrics& m, const std::string& exact,
                    const std::string& truncated) {
  return label + "," + num(m.al) + "," + num(m.cw) + "," + num(m.ap) + "," + num(m.dal) + "," + num(m.d_mean) + "," +
         num(m.token_accuracy) + "," + exact + "," + num(m.emission_accuracy) + "," + num(m.precision) + "," +
         num(m.recall) + "," + num(m.r_value) + "," + truncated + "\n";
}

}  // namespace

std::string report_json(const EvaluationReport& report) {
  json j;
  j["count"] = report.examples.size();
  json corpus = metrics_json(report.corpus);
  corpus.erase("truncated");
  corpus.erase("al_fallback");
  corpus["exact_match"] = report.examples.empty() ? 0.0
                                                  : static_cast<double>(report.corpus.exact_match) /
                                                        static_cast<double>(report.examples.size());
  corpus["truncated"] = report.truncated;
  corpus["al_fallback"] = report.al_fallback;
  j["corpus"] = corpus;
  json per = json::array();
  for (std::size_t i = 0; i < report.examples.size(); ++i) {
    json e = metrics_json(report.examples[i]);
    e["index"] = i;
    per.push_back(std::move(e));
  }
  j["examples"] = std::move(per);
  return j.dump(2);
}

std::string report_csv(const EvaluationReport& report) {
  std::string out = "index,al,cw,ap,dal,d_mean,token_acc,exact_match,emission_acc,precision,recall,r_value,truncated\n";
  for (std::size_t i = 0; i < report.examples.size(); ++i) {
    const auto& m = report.examples[i];
    out += csv_row(std::to_string(i), m, std::to_string(m.exact_match), m.truncated ? "1" : "0");
  }
  if (!report.examples.empty()) {
    const double n = static_cast<double>(report.examples.size());
    out += csv_row("corpus", report.corpus, num(report.corpus.exact_match / n), num(report.truncated / n));
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& r : rows) {
    out += num(r.lambda) + "," + num(r.al) + "," + num(r.cw) + "," + num(r.ap) + "," + num(r.dal) + "," +
           num(r.token_acc) + "\n";
  }
  return out;
}

}  // namespace seg2seg::pipeline
