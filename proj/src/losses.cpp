#include "seg2seg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace seg2seg::losses {

ad::Var cross_entropy(ad::Var distributions, std::span<const int> targets, double smoothing) {
  const Tensor& p = distributions.value();
  if (p.rank() != 2 || p.dim(0) != targets.size()) {
    throw std::invalid_argument("cross_entropy: distributions " + shape_str(p.shape()) + " for " +
                                std::to_string(targets.size()) + " targets");
  }
  if (smoothing < 0.0 || smoothing >= 1.0) throw std::invalid_argument("cross_entropy: smoothing in [0,1)");
  const std::size_t rows = p.dim(0), vocab = p.dim(1);
  if (rows == 0) throw std::invalid_argument("cross_entropy: no targets");
  Tensor q({rows, vocab}, smoothing / static_cast<double>(vocab));
  for (std::size_t i = 0; i < rows; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
    q[i * vocab + static_cast<std::size_t>(targets[i])] += 1.0 - smoothing;
  }
  ad::Graph& g = *distributions.graph();
  // Floor keeps log finite if a probability underflows.
  ad::Var safe = ad::maximum(distributions, g.constant(Tensor(p.shape(), 1e-300)));
  ad::Var nll = ad::sum(ad::mul(ad::log(safe), g.constant(std::move(q))));
  return ad::scale(nll, -1.0 / static_cast<double>(rows));
}

std::size_t cw_kernel(std::size_t source_len, std::size_t target_len, double lambda) {
  if (source_len == 0) throw std::invalid_argument("cw_kernel: empty source");
  const double target = lambda * static_cast<double>(target_len);
  if (!(target > 0.0)) return source_len;
  const double k = std::floor(static_cast<double>(source_len) / target);
  return static_cast<std::size_t>(std::clamp(k, 1.0, static_cast<double>(source_len)));
}

ad::Var cw_constraint(ad::Var alpha, std::size_t target_len, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("cw_constraint: lambda must be >= 0");
  const Tensor& a = alpha.value();
  if (a.rank() != 1 || a.size() == 0) {
    throw std::invalid_argument("cw_constraint: alpha must be a non-empty vector, got " +
                                shape_str(a.shape()));
  }
  const double target = lambda * static_cast<double>(target_len);
  const std::size_t kernel = cw_kernel(a.size(), target_len, lambda);
  ad::Var count = ad::l2_norm(ad::add_scalar(ad::sum(alpha), -target));
  ad::Var uniform = ad::l2_norm(ad::add_scalar(ad::sum(ad::max_pool(alpha, kernel)), -target));
  return ad::add(count, uniform);
}

ad::Var al_constraint(ad::Var mapping) {
  const Tensor& m = mapping.value();
  if (m.rank() != 2 || m.dim(0) == 0) {
    throw std::invalid_argument("al_constraint: bad mapping shape " + shape_str(m.shape()));
  }
  return ad::scale(ad::sum(mapping), 1.0 / static_cast<double>(m.dim(0)));
}

LossReport total_loss(double ce, double cw_term, double al_term) {
  return {ce, cw_term, al_term, ce + cw_term + al_term};
}

}  // namespace seg2seg::losses
