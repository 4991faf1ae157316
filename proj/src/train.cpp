#include "seg2seg/train.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "seg2seg/mapping.hpp"
#include "seg2seg/metrics.hpp"
#include "seg2seg/policy.hpp"

namespace seg2seg::train {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

MappingMode parse_mapping_mode(const std::string& name) {
  if (name == "expected") return MappingMode::kExpected;
  if (name == "straight_through") return MappingMode::kStraightThrough;
  throw std::invalid_argument("unknown mapping mode '" + name + "'");
}

std::string to_string(MappingMode mode) {
  return mode == MappingMode::kExpected ? "expected" : "straight_through";
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (warmup < 0) throw std::invalid_argument("train: warmup must be >= 0");
  if (clip < 0.0) throw std::invalid_argument("train: clip must be >= 0");
  if (eval_every < 0) throw std::invalid_argument("train: eval_every must be >= 0");
  if (loss.lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
  if (loss.label_smoothing < 0.0 || loss.label_smoothing >= 1.0) {
    throw std::invalid_argument("train: label smoothing must be in [0, 1)");
  }
}

NonFiniteLoss::NonFiniteLoss(int s, const losses::LossReport& last)
    : std::runtime_error("non-finite loss at step " + std::to_string(s) + " (last finite total " +
                         std::to_string(last.total) + ")"),
      step(s),
      last_finite(last) {}

Objective build_objective(model::Forward& f, const tasks::Example& ex, const losses::LossConfig& loss,
                          MappingMode mode) {
  if (ex.source.empty()) throw std::invalid_argument("build_objective: empty source");
  const std::vector<int> src = model::to_model_ids(ex.source);
  std::vector<int> dec_in{model::kBos};
  std::vector<int> targets = model::to_model_ids(ex.target);
  dec_in.insert(dec_in.end(), targets.begin(), targets.end());
  targets.push_back(model::kEos);

  ad::Var states = f.encode(src);
  ad::Var alpha = f.aggregation_head(states);
  const mapping::AggregationPosterior post = mapping::aggregation_posterior(alpha);
  ad::Var seg = f.segment_reps(post.p_x, states);
  ad::Var tgt = f.target_inputs(dec_in);
  ad::Var beta = mapping::force_final_emission(f.emission_head(tgt, seg));
  ad::Var p_y = mapping::emission_posterior(beta);
  ad::Var m = mapping::attention_mapping(p_y, post.f_x);
  ad::Var attend = m;
  if (mode == MappingMode::kStraightThrough) {
    const Tensor& a = alpha.value();
    attend = mapping::straight_through(m, mapping::policy_mapping(a.storage(), beta.value()));
  }
  ad::Var probs = f.decode(tgt, states, attend);

  ad::Var ce = losses::cross_entropy(probs, targets, loss.label_smoothing);
  if (loss.sum_ce) ce = ad::scale(ce, static_cast<double>(targets.size()));
  ad::Var cw = losses::cw_constraint(alpha, ex.target.size(), loss.lambda);
  ad::Var al = losses::al_constraint(m);
  Objective out;
  out.loss = ad::add(ad::add(ce, cw), al);
  out.report = losses::total_loss(ce.value().item(), cw.value().item(), al.value().item());
  return out;
}

double learning_rate(const TrainConfig& config, int step) {
  if (config.warmup > 0 && step < config.warmup) {
    return config.lr * static_cast<double>(step) / static_cast<double>(config.warmup);
  }
  return config.lr;
}

namespace {

bool finite(const losses::LossReport& r) {
  return std::isfinite(r.ce) && std::isfinite(r.cw_term) && std::isfinite(r.al_term) && std::isfinite(r.total);
}

struct AdamState {
  ad::ParamMap m, v;
  int t = 0;
};

}  // namespace

EvalLog evaluate(const model::Model& model, const std::vector<tasks::Example>& examples,
                 const losses::LossConfig& loss, MappingMode mode) {
  EvalLog log;
  if (examples.empty()) return log;
  double acc = 0.0, exact = 0.0;
  losses::LossReport sum;
  policy::PolicyConfig offline;
  for (const auto& ex : examples) {
    ad::Graph g(false);
    model::Forward f(model.config(), model.params(), g);
    const Objective obj = build_objective(f, ex, loss, mode);
    sum.ce += obj.report.ce;
    sum.cw_term += obj.report.cw_term;
    sum.al_term += obj.report.al_term;
    sum.total += obj.report.total;

    policy::ModelBackend backend(model, model::to_model_ids(ex.source));
    const policy::StreamTrace trace = policy::run_offline(backend, offline);
    const std::vector<int> hyp = model::to_symbols(trace.hypothesis);
    const metrics::GenerationQuality q = metrics::generation_quality(hyp, ex.target);
    acc += q.token_accuracy;
    exact += q.exact_match;
  }
  const double n = static_cast<double>(examples.size());
  log.token_accuracy = acc / n;
  log.exact_match = exact / n;
  log.report = {sum.ce / n, sum.cw_term / n, sum.al_term / n, sum.total / n};
  return log;
}

TrainResult train(model::Model init, const std::vector<tasks::Example>& train_set,
                  const std::vector<tasks::Example>& dev_set, const TrainConfig& config,
                  const StepCallback& on_step, const EvalCallback& on_eval) {
  config.validate();
  if (config.steps > 0 && train_set.empty()) throw std::invalid_argument("train: empty training set");
  TrainResult result{std::move(init), {}, {}};
  model::Model& m = result.model;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, train_set.empty() ? 0 : train_set.size() - 1);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam;
  losses::LossReport last_finite;

  for (int step = 1; step <= config.steps; ++step) {
    ad::Gradients grads;
    losses::LossReport mean;
    for (int b = 0; b < config.batch; ++b) {
      const tasks::Example& ex = train_set[pick(rng)];
      ad::Graph g;
      model::Forward f(m.config(), m.params(), g, m.config().dropout > 0.0 ? &dropout_rng : nullptr);
      Objective obj;
      try {
        obj = build_objective(f, ex, config.loss, config.mapping);
      } catch (const ad::NumericalError&) {
        throw NonFiniteLoss(step, last_finite);
      }
      if (!finite(obj.report)) throw NonFiniteLoss(step, last_finite);
      ad::Gradients gr = g.backward(obj.loss);
      if (grads.empty()) {
        grads = std::move(gr);
      } else {
        for (auto& [name, t] : gr) {
          auto& acc = grads.at(name).storage();
          const auto& src = t.storage();
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
        }
      }
      mean.ce += obj.report.ce;
      mean.cw_term += obj.report.cw_term;
      mean.al_term += obj.report.al_term;
      mean.total += obj.report.total;
    }
    const double inv = 1.0 / config.batch;
    mean = {mean.ce * inv, mean.cw_term * inv, mean.al_term * inv, mean.total * inv};
    double sq = 0.0;
    for (auto& [name, t] : grads) {
      for (double& v : t.storage()) {
        v *= inv;
        sq += v * v;
      }
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NonFiniteLoss(step, last_finite);
    last_finite = mean;
    const double scale = config.clip > 0.0 && norm > config.clip ? config.clip / norm : 1.0;
    const double lr = learning_rate(config, step);

    if (config.optimizer == OptimizerKind::kSgd) {
      for (auto& [name, t] : grads) {
        auto& p = m.params().at(name).storage();
        const auto& gv = t.storage();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * scale * gv[i];
      }
    } else {
      constexpr double b1 = 0.9, b2 = 0.98, eps = 1e-9;
      ++adam.t;
      const double c1 = 1.0 - std::pow(b1, adam.t), c2 = 1.0 - std::pow(b2, adam.t);
      for (auto& [name, t] : grads) {
        auto& p = m.params().at(name).storage();
        const auto& gv = t.storage();
        auto& mv = adam.m.try_emplace(name, Tensor(t.shape(), 0.0)).first->second.storage();
        auto& vv = adam.v.try_emplace(name, Tensor(t.shape(), 0.0)).first->second.storage();
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = gv[i] * scale;
          mv[i] = b1 * mv[i] + (1 - b1) * gi;
          vv[i] = b2 * vv[i] + (1 - b2) * gi * gi;
          p[i] -= lr * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + eps);
        }
      }
    }

    // An overflowing update would otherwise surface as a NaN deep in the next forward pass.
    for (const auto& [name, t] : m.params())
      if (!t.all_finite()) throw NonFiniteLoss(step, last_finite);

    StepLog log{step, lr, norm, mean};
    result.steps.push_back(log);
    if (on_step) on_step(log);
    if (config.eval_every > 0 && !dev_set.empty() && (step % config.eval_every == 0 || step == config.steps)) {
      EvalLog ev = evaluate(m, dev_set, config.loss, config.mapping);
      ev.step = step;
      result.evals.push_back(ev);
      if (on_eval) on_eval(ev);
    }
  }
  return result;
}

}  // namespace seg2seg::train
