#include "seg2seg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace seg2seg::ad {

namespace {

double evaluate(const LossBuilder& build, const ParamMap& params) {
  Graph g(false);
  return build(g, params).value().item();
}

}  // namespace

double relative_error(double analytic, double numeric, double denom_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), denom_floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const LossBuilder& build, ParamMap params, double h, double tol,
                                  double denom_floor) {
  const double f0 = evaluate(build, params);
  const double f1 = evaluate(build, params);
  if (f0 != f1) {
    throw std::runtime_error("finite_diff_check: loss builder is not deterministic");
  }
  Gradients analytic;
  {
    Graph g;
    Var loss = build(g, params);
    analytic = g.backward(loss);
  }
  GradCheckReport report;
  for (auto& [name, tensor] : params) {
    GradCheckEntry entry{name};
    const auto it = analytic.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + h;
      const double up = evaluate(build, params);
      tensor[i] = saved - h;
      const double down = evaluate(build, params);
      tensor[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double err = relative_error(a, numeric, denom_floor);
      if (i == 0 || err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    if (entry.max_rel_error > tol) report.failures.push_back(name);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace seg2seg::ad
