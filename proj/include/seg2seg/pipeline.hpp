#pragma once

// Dataset splits, batch simulation, corpus evaluation and report formats
// shared by the command-line tool and the acceptance suite.

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "seg2seg/metrics.hpp"
#include "seg2seg/model.hpp"
#include "seg2seg/policy.hpp"
#include "seg2seg/tasks.hpp"

namespace seg2seg::pipeline {

struct DataSplits {
  std::vector<tasks::Example> train, dev, test;
};

// Three disjointly seeded generations from one task spec.
DataSplits generate_splits(const tasks::TaskSpec& spec, std::size_t train_size, std::size_t dev_size,
                           std::size_t test_size);

// One trace per example, in input order.
std::vector<policy::StreamTrace> simulate(const model::Model& model, const std::vector<tasks::Example>& examples,
                                          const policy::PolicyConfig& config);

struct Hypothesis {
  std::size_t index = 0;
  std::vector<int> tokens;  // task symbols
  bool truncated = false;
  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

Hypothesis hypothesis_of(std::size_t index, const policy::StreamTrace& trace);
void write_hypotheses_jsonl(std::ostream& os, const std::vector<Hypothesis>& hyps);
std::vector<Hypothesis> read_hypotheses_jsonl(std::istream& is);

// Read counts used for latency. A run that writes end-of-sequence before any
// token has no t; it is scored as a single write at the read count where
// end-of-sequence was emitted.
std::vector<int> latency_times(const policy::StreamTrace& trace);

struct ExampleMetrics {
  double al = 0.0, cw = 0.0, ap = 0.0, dal = 0.0, d_mean = 0.0;
  double token_accuracy = 0.0;
  int exact_match = 0;
  double emission_accuracy = 0.0;
  double precision = 0.0, recall = 0.0, r_value = 0.0;
  bool truncated = false;     // max-length cutoff fired
  bool al_fallback = false;   // AL used tau = I
};

struct EvaluationReport {
  std::vector<ExampleMetrics> examples;
  ExampleMetrics corpus;  // means; flags count as fractions are not kept
  std::size_t truncated = 0;
  std::size_t al_fallback = 0;
};

ExampleMetrics evaluate_example(const policy::StreamTrace& trace, const Hypothesis& hyp,
                                const tasks::Example& example, int boundary_tolerance = 0);

// Rejects count mismatches and hypotheses that disagree with their traces.
EvaluationReport evaluate(const std::vector<policy::StreamTrace>& traces, const std::vector<Hypothesis>& hyps,
                          const std::vector<tasks::Example>& examples, int boundary_tolerance = 0);

std::string report_json(const EvaluationReport& report);
// Header: index,al,cw,ap,dal,d_mean,token_acc,exact_match,emission_acc,precision,recall,r_value,truncated
// followed by one row per example and a final `corpus` row.
std::string report_csv(const EvaluationReport& report);

struct SweepRow {
  double lambda = 0.0;
  double al = 0.0, cw = 0.0, ap = 0.0, dal = 0.0, token_acc = 0.0;
};
inline constexpr const char* kSweepHeader = "lambda,al,cw,ap,dal,token_acc";
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace seg2seg::pipeline
