#pragma once

// Source / latent-segment / target representation similarity over the
// segments a streaming run produces.

#include <string>
#include <vector>

#include "seg2seg/model.hpp"
#include "seg2seg/policy.hpp"
#include "seg2seg/tasks.hpp"

namespace seg2seg::similarity {

// Which vector stands for a target token y_i.
enum class TargetRep {
  kDecoderState,  // final decoder hidden state of the row that generated y_i
  kInputStream,   // embedding + position of y_i
  kEmissionQuery, // W_tgt_seg Rep(y_{i-1}): the segment-space query that emitted y_i
};
TargetRep parse_target_rep(const std::string& name);
std::string to_string(TargetRep rep);

struct SegmentVectors {
  std::size_t example = 0;
  std::size_t segment = 0;      // 0-based
  std::vector<double> source;   // sum of encoder states in the segment
  std::vector<double> target;   // sum of target representations emitted from it
  std::vector<double> latent;   // seg_k
};

struct SimilarityReport {
  double source_target = 0.0;
  double source_segment = 0.0;
  double segment_target = 0.0;
  std::size_t segments = 0;     // segments that emitted at least one token
  std::vector<SegmentVectors> vectors;
};

// Mean cosine similarities over the given segments.
SimilarityReport summarize(std::vector<SegmentVectors> vectors);

// Segments come from the run's boundaries; target token i belongs to the
// segment whose boundary equals t_i. Segments that emit nothing are skipped.
std::vector<SegmentVectors> example_vectors(const model::Model& model, std::span<const int> source_ids,
                                            const policy::StreamTrace& trace, TargetRep rep,
                                            std::size_t example_index = 0);

SimilarityReport representation_similarity(const model::Model& model,
                                           const std::vector<tasks::Example>& examples,
                                           const policy::PolicyConfig& config,
                                           TargetRep rep = TargetRep::kEmissionQuery);

// {"source_target":..., "source_segment":..., "segment_target":..., "segments":n,
//  "vectors":[{"example","segment","source","target","segment_rep"}...]}
std::string to_json(const SimilarityReport& report, bool include_vectors = true);

}  // namespace seg2seg::similarity
