#pragma once

// Source-to-segment and segment-to-target mapping.
//
// Training uses expected (soft) assignments computed by two monotonic
// dynamic programs; inference uses the hard thresholded counterparts. All
// index conventions are 0-based except boundaries, which are 1-based
// end positions (read counts) so they line up with trace read counts.

#include <cstddef>
#include <vector>

#include "seg2seg/autodiff.hpp"

namespace seg2seg::mapping {

struct AggregationPosterior {
  ad::Var p_x;  // [J, K]: p(x_j in seg_k), K = J
  ad::Var f_x;  // [J, K]: sum_{l <= k} p(x_j in seg_l)
};

// p_x[0] = e_0; p_x[j][k] = p_x[j-1][k-1] * a[j-1] + p_x[j-1][k] * (1 - a[j-1]).
// Recorded on alpha's graph as a single node with an exact adjoint.
AggregationPosterior aggregation_posterior(ad::Var alpha);

// seg = (p_x^T * states) * w_src_seg, i.e. seg_k = W . sum_j p(x_j in seg_k) Rep(x_j)
// with W stored as [d_enc, d_seg] and applied to row vectors.
ad::Var expected_segment_reps(ad::Var p_x, ad::Var states, ad::Var w_src_seg);

// Replaces the last column of beta with 1 (gradient to that column is zero).
ad::Var force_final_emission(ad::Var beta);

// p_y[i][k] = beta[i][k] * r[i][k] with r[i][0] = p_y[i-1][0] and
// r[i][k] = r[i][k-1] * (1 - beta[i][k-1]) + p_y[i-1][k]; the row before the
// first target is the one-hot start state e_0. O(I*K).
ad::Var emission_posterior(ad::Var beta);

// M = p_y * f_x^T.
ad::Var attention_mapping(ad::Var p_y, ad::Var f_x);

struct HardSegmentation {
  std::vector<std::size_t> segment_of;  // 0-based segment index per source token
  std::vector<std::size_t> boundaries;  // 1-based end positions, always includes J
  std::size_t count() const { return boundaries.size(); }
};

// Segment index of x_j is the number of 1s strictly before j; trailing
// tokens after the last 1 form the final segment.
HardSegmentation hard_segmentation(const std::vector<int>& a);

// Thresholds probabilities at 0.5 (>= 0.5 -> 1).
std::vector<int> threshold(const std::vector<double>& probs);

// One-hot p_x [J, J] from a hard segmentation.
Tensor hard_source_posterior(const HardSegmentation& seg);
// One-hot p_y [I, K] from the emitting segment of each target token.
Tensor hard_target_posterior(const std::vector<std::size_t>& emit_segment, std::size_t num_segments);
// Binary M [I, J]: M_ij = 1 iff segment_of[j] <= emit_segment[i].
Tensor hard_mapping(const HardSegmentation& seg, const std::vector<std::size_t>& emit_segment);

// Segment each target row is emitted from when the policy thresholds beta:
// the pointer starts at segment 0 and advances while beta < 0.5, stopping at
// the last segment (where emission is forced).
std::vector<std::size_t> hard_emission_segments(const Tensor& beta, std::size_t num_segments);
// Binary mapping the inference policy would use for these alpha/beta values
// under teacher forcing.
Tensor policy_mapping(const std::vector<double>& alpha, const Tensor& beta);
// Forward value `hard`; the gradient reaches `soft` unchanged.
ad::Var straight_through(ad::Var soft, const Tensor& hard);

// Plain-value helpers used by inference and reports.
Tensor aggregation_posterior_values(const std::vector<double>& alpha);
Tensor emission_posterior_values(const Tensor& beta);

}  // namespace seg2seg::mapping
