#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seg2seg/model.hpp"
#include "seg2seg/trace.hpp"

namespace seg2seg::policy {

enum class PolicyKind { kSeg2Seg, kWaitK, kFixedSegment, kWaitKStrideN };

PolicyKind parse_policy_kind(const std::string& name);
std::string to_string(PolicyKind kind);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kSeg2Seg;
  int k = 3;
  int stride = 2;          // n for wait-k-stride-n; tokens per chunk for fixed segments (0 = adaptive)
  int segment_length = 2;  // chunk size for fixed segments
  int beam = 1;
  int max_target_len = 0;  // 0 selects 2 * J + 16
  int segment_cap = 32;    // per-segment emission cap

  void validate() const;
};

// What a streaming policy needs from a model. Positions are read counts:
// read `n` means tokens 1..n have been received.
class SimulModel {
 public:
  virtual ~SimulModel() = default;
  virtual std::size_t source_length() const = 0;
  // Called once per newly read token, in order; returns alpha for it.
  virtual double read(std::size_t n) = 0;
  // Probability that the segment of source positions (begin, end] emits the
  // token following `prefix`.
  virtual double emission_prob(std::span<const int> prefix, std::size_t begin, std::size_t end) = 0;
  // Log-probabilities of the token following `prefix`. Decoder row r < |prefix|
  // sees prefix_reads[r] source tokens; the last row sees `reads`.
  virtual std::vector<double> next_log_probs(std::span<const int> prefix,
                                             std::span<const int> prefix_reads, int reads) = 0;
};

// SimulModel backed by the network; re-encodes the received prefix on every
// read (the causal encoder makes this equal to restricting a full encoding).
class ModelBackend final : public SimulModel {
 public:
  ModelBackend(const model::Model& model, std::vector<int> source_ids);

  std::size_t source_length() const override { return source_.size(); }
  double read(std::size_t n) override;
  double emission_prob(std::span<const int> prefix, std::size_t begin, std::size_t end) override;
  std::vector<double> next_log_probs(std::span<const int> prefix, std::span<const int> prefix_reads,
                                     int reads) override;

  const Tensor& states() const { return states_; }
  const std::vector<double>& alphas() const { return alphas_; }

 private:
  const model::Model& model_;
  std::vector<int> source_;
  Tensor states_;  // [read, d]
  std::vector<double> alphas_;
};

struct BeamOptions {
  int beam_size = 1;
  int max_tokens = 32;           // per-segment cap
  bool force = false;            // source exhausted: ignore emission probabilities
  std::size_t max_total = 64;    // hypothesis length limit
};

struct SegmentEmission {
  std::vector<int> tokens;  // may end with eos
  bool eos = false;
  bool cap_hit = false;
  double score = 0.0;       // length-normalised log-probability
};

// Per-segment beam search. Beams expand token by token; a beam stops on eos
// or when the emission probability for its next position drops below 0.5.
// The finished beam with the highest length-normalised log-probability wins.
SegmentEmission segment_beam_emit(SimulModel& model, std::span<const int> committed,
                                  std::span<const int> committed_reads, std::size_t seg_begin,
                                  std::size_t seg_end, const BeamOptions& options);

StreamTrace run_seg2seg(SimulModel& model, const PolicyConfig& config);
StreamTrace run_waitk(SimulModel& model, int k, const PolicyConfig& config = {});
// Chunks of `segment_length` reads; emits `tokens_per_chunk` tokens per chunk,
// or decides adaptively through emission probabilities when it is 0.
StreamTrace run_fixed_segment(SimulModel& model, int segment_length, int tokens_per_chunk,
                              const PolicyConfig& config = {});
StreamTrace run_waitk_stride_n(SimulModel& model, int k, int n, const PolicyConfig& config = {});
StreamTrace run_offline(SimulModel& model, const PolicyConfig& config = {});

StreamTrace run_policy(SimulModel& model, const PolicyConfig& config);
// Convenience: builds a ModelBackend for task symbols.
StreamTrace run_policy(const model::Model& model, std::span<const int> source_symbols,
                       const PolicyConfig& config);

}  // namespace seg2seg::policy
