#pragma once

// Flat `key = value` run configuration. Every key can also be given on the
// command line as --key value.

#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "seg2seg/model.hpp"
#include "seg2seg/policy.hpp"
#include "seg2seg/similarity.hpp"
#include "seg2seg/tasks.hpp"
#include "seg2seg/train.hpp"

namespace seg2seg::config {

struct RunConfig {
  tasks::TaskSpec task;
  std::size_t train_size = 8000;
  std::size_t dev_size = 500;
  std::size_t test_size = 500;
  model::ModelConfig model;
  train::TrainConfig train;
  policy::PolicyConfig policy;
  similarity::TargetRep target_rep = similarity::TargetRep::kEmissionQuery;
  std::vector<double> lambdas{0.6, 0.3, 0.1};
  int boundary_tolerance = 0;

  std::string train_data;
  std::string dev_data;
  std::string test_data;
  std::string checkpoint;
  std::string traces;
  std::string hypotheses;
  std::string out = ".";

  void validate() const;
};

// Recognised keys in a stable order.
const std::vector<std::string>& keys();

// Parses `key = value` lines; '#' starts a comment. Duplicate keys and lines
// without '=' are rejected with the line number.
std::map<std::string, std::string> parse_key_values(std::istream& is, const std::string& origin);

// Sets one key; unknown keys and malformed values throw std::invalid_argument.
void apply(RunConfig& config, const std::string& key, const std::string& value);
void apply(RunConfig& config, const std::map<std::string, std::string>& values);

RunConfig load(const std::string& path);

// Current value of a key as text (round-trips through apply).
std::string get(const RunConfig& config, const std::string& key);
std::string dump(const RunConfig& config);

}  // namespace seg2seg::config
