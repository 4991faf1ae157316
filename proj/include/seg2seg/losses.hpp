#pragma once

#include <cstddef>
#include <span>

#include "seg2seg/autodiff.hpp"

namespace seg2seg::losses {

struct LossConfig {
  double lambda = 0.3;           // latency knob; 0 degenerates to offline
  double label_smoothing = 0.1;
  // true: cross-entropy summed over target positions (per-sentence objective);
  // false: averaged.
  bool sum_ce = true;
};

struct LossReport {
  double ce = 0.0;
  double cw_term = 0.0;
  double al_term = 0.0;
  double total = 0.0;
};

// Mean over rows of -sum_v q_v log p_v with q = (1 - eps) onehot + eps / V.
ad::Var cross_entropy(ad::Var distributions, std::span<const int> targets, double smoothing);

// Max-pool kernel floor(J / (lambda * I)), clamped to [1, J]. Windows do not
// overlap (stride = kernel).
std::size_t cw_kernel(std::size_t source_len, std::size_t target_len, double lambda);

// |sum_j alpha_j - lambda I| + |sum MaxPool(alpha, kernel) - lambda I|.
ad::Var cw_constraint(ad::Var alpha, std::size_t target_len, double lambda);

// (1/I) sum_ij M_ij.
ad::Var al_constraint(ad::Var mapping);

LossReport total_loss(double ce, double cw_term, double al_term);

}  // namespace seg2seg::losses
