#pragma once

#include <functional>
#include <string>
#include <vector>

#include "seg2seg/autodiff.hpp"

namespace seg2seg::ad {

// Builds a scalar loss on `g`, binding parameters with g.parameter(name, params.at(name)).
using LossBuilder = std::function<Var(Graph& g, const ParamMap& params)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  std::vector<std::string> failures;  // names whose max error exceeds tol
  double max_rel_error = 0.0;
  bool ok() const { return failures.empty(); }
};

// Relative error |a - n| / max(|a|, |n|, denom_floor).
double relative_error(double analytic, double numeric, double denom_floor);

// Compares the analytic gradient against central differences
// (f(p+h) - f(p-h)) / 2h for every element of every parameter. Throws
// std::runtime_error if two evaluations at the same point disagree.
GradCheckReport finite_diff_check(const LossBuilder& build, ParamMap params, double h, double tol,
                                  double denom_floor = 1e-6);

}  // namespace seg2seg::ad
