#pragma once

// Latency, segmentation, emission and generation-quality metrics.
//
// Latency metrics are in read-count units: t[i] is the number of source
// tokens read before the (i+1)-th target token was written.

#include <span>
#include <vector>

#include "seg2seg/trace.hpp"

namespace seg2seg::metrics {

struct LatencyReport {
  double al = 0.0;
  double cw = 0.0;
  double ap = 0.0;
  double dal = 0.0;
  double mean_alignment_delay = 0.0;
  bool truncated = false;  // AL fell back to tau = I
};

// AL = 1/tau * sum_{i<=tau} (t_i - (i-1) / (I/J)), tau = first i with t_i = J
// (or I if the source is never fully read).
double average_lagging(std::span<const int> t, int source_len, int target_len);
// CW = J / #{i : t_i - t_{i-1} > 0}, t_0 = 0.
double consecutive_wait(std::span<const int> t, int source_len);
// AP = sum_i t_i / (J * I).
double average_proportion(std::span<const int> t, int source_len, int target_len);
// t'_1 = t_1, t'_i = max(t_i, t'_{i-1} + J/I); DAL = 1/I * sum_i (t'_i - (i-1) J/I).
double differentiable_average_lagging(std::span<const int> t, int source_len, int target_len);
// D_mean = 1/n * sum_i (t_hat_i - gold_i) over the common prefix.
double mean_alignment_delay(std::span<const int> t_hat, std::span<const int> gold);

LatencyReport latency_report(const policy::StreamTrace& trace, std::span<const int> gold_alignment);

struct SegmentationScore {
  double precision = 0.0;
  double recall = 0.0;
  double r_value = 0.0;
  int matched = 0;
  bool precision_undefined = false;  // no predicted boundaries
};

// Räsänen's R-value from precision and recall (precision > 0).
double r_value(double precision, double recall);
// Same score written in terms of over-segmentation OS = R/P - 1.
double r_value_from_os(double over_segmentation, double recall);
// Greedy nearest matching: each gold boundary takes the closest unmatched
// prediction within `tolerance` positions (earlier wins ties).
SegmentationScore segmentation_quality(std::span<const int> predicted, std::span<const int> gold,
                                       int tolerance = 0);

// Fraction of target tokens whose gold-aligned source token had been read
// when they were written. Missing hypothesis positions count as misses.
double emission_accuracy(std::span<const int> t, std::span<const int> alignment);

struct GenerationQuality {
  double token_accuracy = 0.0;
  int exact_match = 0;
};
// Position-wise matches over the longer length.
GenerationQuality generation_quality(std::span<const int> hypothesis, std::span<const int> reference);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace seg2seg::metrics
