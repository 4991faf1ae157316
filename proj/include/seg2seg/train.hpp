#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seg2seg/losses.hpp"
#include "seg2seg/model.hpp"
#include "seg2seg/tasks.hpp"

namespace seg2seg::train {

enum class OptimizerKind { kSgd, kAdam };
OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

// How the decoder sees the mapping during training. kExpected feeds the soft
// M; kStraightThrough feeds the binary mapping the policy would produce and
// routes gradients through the soft M.
enum class MappingMode { kExpected, kStraightThrough };
MappingMode parse_mapping_mode(const std::string& name);
std::string to_string(MappingMode mode);

struct TrainConfig {
  int steps = 3000;
  int batch = 32;
  double lr = 0.02;
  int warmup = 200;       // linear ramp to lr, constant afterwards
  double clip = 5.0;      // global gradient-norm clip, 0 disables
  OptimizerKind optimizer = OptimizerKind::kSgd;
  std::uint64_t seed = 1;
  int eval_every = 500;   // 0 disables periodic dev evaluation
  MappingMode mapping = MappingMode::kStraightThrough;
  losses::LossConfig loss;

  void validate() const;
};

struct Objective {
  ad::Var loss;
  losses::LossReport report;
};

// Full training objective for one example (task symbols). The decoder reads
// [bos, y_1..y_n] and predicts [y_1..y_n, eos].
Objective build_objective(model::Forward& f, const tasks::Example& ex, const losses::LossConfig& loss,
                          MappingMode mode = MappingMode::kExpected);

// Learning rate at 1-based step `step`.
double learning_rate(const TrainConfig& config, int step);

struct StepLog {
  int step = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  losses::LossReport report;  // batch mean
};

struct EvalLog {
  int step = 0;
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  losses::LossReport report;
};

struct TrainResult {
  model::Model model;
  std::vector<StepLog> steps;
  std::vector<EvalLog> evals;
};

// Thrown when a loss or gradient turns non-finite.
struct NonFiniteLoss : std::runtime_error {
  NonFiniteLoss(int step, const losses::LossReport& last_finite);
  int step;
  losses::LossReport last_finite;
};

using StepCallback = std::function<void(const StepLog&)>;
using EvalCallback = std::function<void(const EvalLog&)>;

// Minibatches are drawn with replacement from `train_set` using the config
// seed; per-example gradients are averaged in batch order.
TrainResult train(model::Model init, const std::vector<tasks::Example>& train_set,
                  const std::vector<tasks::Example>& dev_set, const TrainConfig& config,
                  const StepCallback& on_step = {}, const EvalCallback& on_eval = {});

// Loss terms and offline greedy accuracy on a dataset.
EvalLog evaluate(const model::Model& model, const std::vector<tasks::Example>& examples,
                 const losses::LossConfig& loss, MappingMode mode = MappingMode::kExpected);

}  // namespace seg2seg::train
