#include "seg2seg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace seg2seg::metrics {

namespace {

void require_trace(std::span<const int> t, int source_len, const char* what) {
  if (t.empty()) throw std::invalid_argument(std::string(what) + ": empty trace");
  if (source_len <= 0) throw std::invalid_argument(std::string(what) + ": empty source");
}

}  // namespace

double average_lagging(std::span<const int> t, int source_len, int target_len) {
  require_trace(t, source_len, "average_lagging");
  if (target_len <= 0) throw std::invalid_argument("average_lagging: empty target");
  const double rate = static_cast<double>(target_len) / source_len;
  std::size_t tau = t.size();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] >= source_len) {
      tau = i + 1;
      break;
    }
  }
  double s = 0.0;
  for (std::size_t i = 0; i < tau; ++i) s += t[i] - static_cast<double>(i) / rate;
  return s / static_cast<double>(tau);
}

double consecutive_wait(std::span<const int> t, int source_len) {
  require_trace(t, source_len, "consecutive_wait");
  int bursts = 0;
  int prev = 0;
  for (int v : t) {
    if (v - prev > 0) ++bursts;
    prev = v;
  }
  if (bursts == 0) throw std::invalid_argument("consecutive_wait: trace never reads");
  return static_cast<double>(source_len) / bursts;
}

double average_proportion(std::span<const int> t, int source_len, int target_len) {
  require_trace(t, source_len, "average_proportion");
  double s = 0.0;
  for (int v : t) s += v;
  return s / (static_cast<double>(source_len) * target_len);
}

double differentiable_average_lagging(std::span<const int> t, int source_len, int target_len) {
  require_trace(t, source_len, "differentiable_average_lagging");
  if (target_len <= 0) throw std::invalid_argument("differentiable_average_lagging: empty target");
  const double step = static_cast<double>(source_len) / target_len;
  double prev = 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double cur = i == 0 ? t[0] : std::max(static_cast<double>(t[i]), prev + step);
    s += cur - static_cast<double>(i) * step;
    prev = cur;
  }
  return s / target_len;
}

double mean_alignment_delay(std::span<const int> t_hat, std::span<const int> gold) {
  const std::size_t n = std::min(t_hat.size(), gold.size());
  if (n == 0) throw std::invalid_argument("mean_alignment_delay: empty trace");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += t_hat[i] - gold[i];
  return s / static_cast<double>(n);
}

LatencyReport latency_report(const policy::StreamTrace& trace, std::span<const int> gold_alignment) {
  const int j = static_cast<int>(trace.source_length);
  const int i = static_cast<int>(trace.t.size());
  LatencyReport r;
  r.al = average_lagging(trace.t, j, i);
  r.cw = consecutive_wait(trace.t, j);
  r.ap = average_proportion(trace.t, j, i);
  r.dal = differentiable_average_lagging(trace.t, j, i);
  r.mean_alignment_delay = gold_alignment.empty() ? 0.0 : mean_alignment_delay(trace.t, gold_alignment);
  r.truncated = std::none_of(trace.t.begin(), trace.t.end(), [j](int v) { return v >= j; });
  return r;
}

double r_value(double precision, double recall) {
  if (!(precision > 0.0)) throw std::invalid_argument("r_value: precision must be positive");
  const double os = recall / precision - 1.0;
  return r_value_from_os(os, recall);
}

double r_value_from_os(double over_segmentation, double recall) {
  const double r1 = std::sqrt((1.0 - recall) * (1.0 - recall) + over_segmentation * over_segmentation);
  const double r2 = (-over_segmentation + recall - 1.0) / std::sqrt(2.0);
  return 1.0 - (std::abs(r1) + std::abs(r2)) / 2.0;
}

SegmentationScore segmentation_quality(std::span<const int> predicted, std::span<const int> gold,
                                       int tolerance) {
  if (gold.empty()) throw std::invalid_argument("segmentation_quality: no gold boundaries");
  if (tolerance < 0) throw std::invalid_argument("segmentation_quality: negative tolerance");
  std::vector<bool> used(predicted.size(), false);
  SegmentationScore s;
  for (int g : gold) {
    std::size_t best = predicted.size();
    int best_dist = tolerance + 1;
    for (std::size_t p = 0; p < predicted.size(); ++p) {
      if (used[p]) continue;
      const int dist = std::abs(predicted[p] - g);
      if (dist < best_dist) {
        best = p;
        best_dist = dist;
      }
    }
    if (best < predicted.size()) {
      used[best] = true;
      ++s.matched;
    }
  }
  s.recall = static_cast<double>(s.matched) / static_cast<double>(gold.size());
  if (predicted.empty()) {
    s.precision_undefined = true;
    s.precision = 0.0;
  } else {
    s.precision = static_cast<double>(s.matched) / static_cast<double>(predicted.size());
  }
  // R / P - 1 equals the over-segmentation ratio #pred / #gold - 1, which
  // stays defined when nothing matches.
  const double os = static_cast<double>(predicted.size()) / static_cast<double>(gold.size()) - 1.0;
  s.r_value = r_value_from_os(os, s.recall);
  return s;
}

double emission_accuracy(std::span<const int> t, std::span<const int> alignment) {
  if (alignment.empty()) throw std::invalid_argument("emission_accuracy: empty reference");
  int hits = 0;
  for (std::size_t i = 0; i < alignment.size() && i < t.size(); ++i) {
    if (alignment[i] <= t[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(alignment.size());
}

GenerationQuality generation_quality(std::span<const int> hypothesis, std::span<const int> reference) {
  const std::size_t longest = std::max(hypothesis.size(), reference.size());
  GenerationQuality q;
  if (longest == 0) {
    q.token_accuracy = 1.0;
    q.exact_match = 1;
    return q;
  }
  std::size_t matches = 0;
  for (std::size_t i = 0; i < std::min(hypothesis.size(), reference.size()); ++i) {
    if (hypothesis[i] == reference[i]) ++matches;
  }
  q.token_accuracy = static_cast<double>(matches) / static_cast<double>(longest);
  q.exact_match = hypothesis.size() == reference.size() && matches == longest ? 1 : 0;
  return q;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace seg2seg::metrics
