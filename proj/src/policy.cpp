#include "seg2seg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace seg2seg::policy {

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "seg2seg") return PolicyKind::kSeg2Seg;
  if (name == "wait_k" || name == "waitk") return PolicyKind::kWaitK;
  if (name == "fixed_segment") return PolicyKind::kFixedSegment;
  if (name == "wait_k_stride_n") return PolicyKind::kWaitKStrideN;
  throw std::invalid_argument("unknown policy '" + name + "'");
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kSeg2Seg: return "seg2seg";
    case PolicyKind::kWaitK: return "wait_k";
    case PolicyKind::kFixedSegment: return "fixed_segment";
    case PolicyKind::kWaitKStrideN: return "wait_k_stride_n";
  }
  return "unknown";
}

void PolicyConfig::validate() const {
  if (k < 1) throw std::invalid_argument("policy: k must be >= 1");
  if (beam < 1) throw std::invalid_argument("policy: beam must be >= 1");
  if (segment_length < 1) throw std::invalid_argument("policy: segment_length must be >= 1");
  if (stride < 0 || (kind == PolicyKind::kWaitKStrideN && stride < 1)) {
    throw std::invalid_argument("policy: stride must be positive");
  }
  if (segment_cap < 1) throw std::invalid_argument("policy: segment_cap must be >= 1");
  if (max_target_len < 0) throw std::invalid_argument("policy: max_target_len must be >= 0");
}

// ---------------------------------------------------------------------------
// ModelBackend

ModelBackend::ModelBackend(const model::Model& model, std::vector<int> source_ids)
    : model_(model), source_(std::move(source_ids)) {
  if (source_.empty()) throw std::invalid_argument("policy: empty source");
  for (int id : source_) {
    if (id < 0 || id >= model_.config().src_vocab) {
      throw std::out_of_range("policy: source id " + std::to_string(id) +
                              " outside the model vocabulary of " +
                              std::to_string(model_.config().src_vocab));
    }
  }
}

double ModelBackend::read(std::size_t n) {
  if (n != alphas_.size() + 1 || n > source_.size()) {
    throw std::logic_error("ModelBackend::read: tokens must be read in order");
  }
  ad::Graph g(false);
  model::Forward f(model_.config(), model_.params(), g);
  ad::Var states = f.encode(std::span<const int>(source_.data(), n));
  ad::Var alpha = f.aggregation_head(states);
  states_ = states.value();
  alphas_.push_back(alpha.value()[n - 1]);
  return alphas_.back();
}

double ModelBackend::emission_prob(std::span<const int> prefix, std::size_t begin, std::size_t end) {
  if (begin >= end || end > states_.dim(0)) {
    throw std::invalid_argument("ModelBackend::emission_prob: invalid segment range");
  }
  ad::Graph g(false);
  model::Forward f(model_.config(), model_.params(), g);
  std::vector<int> dec_in{model::kBos};
  dec_in.insert(dec_in.end(), prefix.begin(), prefix.end());
  ad::Var rows = f.target_inputs(dec_in);
  ad::Var last = ad::slice(rows, 0, dec_in.size() - 1, dec_in.size());
  ad::Var members = ad::slice(g.constant(states_), 0, begin, end);
  // Hard aggregation: the segment representation is the projected sum of its tokens.
  ad::Var ones = g.constant(Tensor({1, end - begin}, 1.0));
  ad::Var seg = ad::matmul(ad::matmul(ones, members), f.param("w_src_seg"));
  return f.emission_head(last, seg).value().item();
}

std::vector<double> ModelBackend::next_log_probs(std::span<const int> prefix,
                                                 std::span<const int> prefix_reads, int reads) {
  if (prefix_reads.size() != prefix.size()) {
    throw std::invalid_argument("ModelBackend::next_log_probs: reads/prefix length mismatch");
  }
  const std::size_t avail = states_.dim(0);
  if (reads < 1 || static_cast<std::size_t>(reads) > avail) {
    throw std::invalid_argument("ModelBackend::next_log_probs: no source token received");
  }
  ad::Graph g(false);
  model::Forward f(model_.config(), model_.params(), g);
  std::vector<int> dec_in{model::kBos};
  dec_in.insert(dec_in.end(), prefix.begin(), prefix.end());
  const std::size_t rows = dec_in.size();
  Tensor mask({rows, avail}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const int n = r < prefix.size() ? prefix_reads[r] : reads;
    for (std::size_t j = 0; j < static_cast<std::size_t>(n) && j < avail; ++j) mask[r * avail + j] = 1.0;
  }
  ad::Var probs = f.decode(f.target_inputs(dec_in), g.constant(states_), g.constant(std::move(mask)));
  const Tensor& p = probs.value();
  const std::size_t v = p.dim(1);
  std::vector<double> out(v);
  for (std::size_t k = 0; k < v; ++k) {
    const double pk = p[(rows - 1) * v + k];
    out[k] = pk > 0.0 ? std::log(pk) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Beam search inside one segment

namespace {

struct Beam {
  std::vector<int> tokens;
  std::vector<int> reads;
  double logp = 0.0;
};

bool generatable(int id) { return id == model::kEos || id >= model::kFirstSymbol; }

double normalised(const Beam& b) {
  return b.tokens.empty() ? 0.0 : b.logp / static_cast<double>(b.tokens.size());
}

}  // namespace

SegmentEmission segment_beam_emit(SimulModel& model, std::span<const int> committed,
                                  std::span<const int> committed_reads, std::size_t seg_begin,
                                  std::size_t seg_end, const BeamOptions& options) {
  if (options.beam_size < 1) throw std::invalid_argument("segment_beam_emit: beam size must be >= 1");
  SegmentEmission result;
  if (committed.size() >= options.max_total) return result;
  const std::size_t budget =
      std::min(static_cast<std::size_t>(std::max(options.max_tokens, 0)), options.max_total - committed.size());
  if (budget == 0) return result;
  const int reads = static_cast<int>(seg_end);
  const std::vector<int> base(committed.begin(), committed.end());
  const std::vector<int> base_reads(committed_reads.begin(), committed_reads.end());

  auto continues = [&](const Beam& b) {
    if (options.force) return true;
    std::vector<int> prefix = base;
    prefix.insert(prefix.end(), b.tokens.begin(), b.tokens.end());
    return model.emission_prob(prefix, seg_begin, seg_end) >= 0.5;
  };

  std::vector<Beam> active{Beam{}};
  if (!continues(active[0])) return result;
  std::vector<Beam> finished;
  const auto width = static_cast<std::size_t>(options.beam_size);
  for (std::size_t step = 0; step < budget && !active.empty(); ++step) {
    std::vector<Beam> candidates;
    for (const Beam& b : active) {
      std::vector<int> prefix = base;
      prefix.insert(prefix.end(), b.tokens.begin(), b.tokens.end());
      std::vector<int> prefix_reads = base_reads;
      prefix_reads.insert(prefix_reads.end(), b.reads.begin(), b.reads.end());
      const std::vector<double> lp = model.next_log_probs(prefix, prefix_reads, reads);
      std::vector<int> order;
      for (int v = 0; v < static_cast<int>(lp.size()); ++v)
        if (generatable(v) && std::isfinite(lp[static_cast<std::size_t>(v)])) order.push_back(v);
      std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
        return lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(c)];
      });
      if (order.size() > width) order.resize(width);
      for (int v : order) {
        Beam nb = b;
        nb.tokens.push_back(v);
        nb.reads.push_back(reads);
        nb.logp += lp[static_cast<std::size_t>(v)];
        candidates.push_back(std::move(nb));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& c) { return a.logp > c.logp; });
    if (candidates.size() > width) candidates.resize(width);
    active.clear();
    for (Beam& c : candidates) {
      if (c.tokens.back() == model::kEos || !continues(c)) {
        finished.push_back(std::move(c));
      } else {
        active.push_back(std::move(c));
      }
    }
  }
  const bool capped = !active.empty();
  for (Beam& b : active) finished.push_back(std::move(b));
  if (finished.empty()) return result;
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (normalised(finished[i]) > normalised(finished[best])) best = i;
  }
  result.score = normalised(finished[best]);
  result.tokens = std::move(finished[best].tokens);
  result.eos = !result.tokens.empty() && result.tokens.back() == model::kEos;
  result.cap_hit = capped && !result.eos && result.tokens.size() == static_cast<std::size_t>(options.max_tokens);
  return result;
}

// ---------------------------------------------------------------------------
// Policies

namespace {

class Session {
 public:
  Session(SimulModel& model, const PolicyConfig& config) : model_(model), config_(config) {
    config.validate();
    source_len_ = model.source_length();
    if (source_len_ == 0) throw std::invalid_argument("policy: empty source");
    max_len_ = config.max_target_len > 0 ? static_cast<std::size_t>(config.max_target_len)
                                         : 2 * source_len_ + 16;
    trace_.source_length = source_len_;
  }

  std::size_t reads() const { return reads_; }
  std::size_t source_len() const { return source_len_; }
  bool exhausted() const { return reads_ == source_len_; }
  bool done() const { return done_; }

  double read_one() {
    ++reads_;
    trace_.events.push_back(Event::read(static_cast<int>(reads_)));
    return model_.read(reads_);
  }

  void read_to(std::size_t n) {
    n = std::min(n, source_len_);
    while (reads_ < n) read_one();
  }

  void close_segment() {
    if (trace_.boundaries.empty() || trace_.boundaries.back() != static_cast<int>(reads_)) {
      trace_.boundaries.push_back(static_cast<int>(reads_));
    }
  }

  SegmentEmission emit(std::size_t seg_begin, bool force, int beam, int max_tokens) {
    BeamOptions o;
    o.beam_size = beam;
    o.max_tokens = max_tokens;
    o.force = force;
    o.max_total = max_len_;
    // An empty forced segment (source already exhausted) still needs a range.
    const std::size_t begin = std::min(seg_begin, reads_ - 1);
    return segment_beam_emit(model_, trace_.hypothesis, trace_.t, begin, reads_, o);
  }

  void commit(const SegmentEmission& e) {
    if (e.cap_hit) ++trace_.cap_hits;
    for (int tok : e.tokens) {
      trace_.events.push_back(Event::write(tok));
      if (tok == model::kEos) {
        done_ = true;
        return;
      }
      trace_.t.push_back(static_cast<int>(reads_));
      trace_.hypothesis.push_back(tok);
    }
    if (trace_.hypothesis.size() >= max_len_) {
      trace_.truncated = true;
      done_ = true;
    }
  }

  // A forced emission that produced nothing cannot make progress.
  void stall() {
    trace_.truncated = true;
    done_ = true;
  }

  StreamTrace finish() {
    if (!trace_.boundaries.empty() && trace_.boundaries.back() != static_cast<int>(reads_)) {
      close_segment();
    }
    return std::move(trace_);
  }

  const PolicyConfig& config() const { return config_; }

 private:
  SimulModel& model_;
  const PolicyConfig& config_;
  std::size_t source_len_ = 0;
  std::size_t max_len_ = 0;
  std::size_t reads_ = 0;
  bool done_ = false;
  StreamTrace trace_;
};

// Reads `first` tokens, then chunks of `chunk`; after each chunk emits
// `per_chunk` tokens, or adaptively when per_chunk == 0.
StreamTrace run_chunked(SimulModel& model, std::size_t first, std::size_t chunk, int per_chunk,
                        const PolicyConfig& config) {
  Session s(model, config);
  std::size_t seg_begin = 0;
  bool first_chunk = true;
  while (!s.done()) {
    if (!s.exhausted()) {
      s.read_to(s.reads() + (first_chunk ? first : chunk));
      first_chunk = false;
      s.close_segment();
    }
    const bool exhausted = s.exhausted();
    SegmentEmission e;
    if (per_chunk > 0) {
      e = s.emit(seg_begin, true, 1, exhausted ? config.segment_cap : per_chunk);
    } else {
      e = s.emit(seg_begin, exhausted, config.beam, config.segment_cap);
    }
    seg_begin = s.reads();
    s.commit(e);
    if (!s.done() && exhausted && e.tokens.empty()) s.stall();
  }
  return s.finish();
}

}  // namespace

StreamTrace run_seg2seg(SimulModel& model, const PolicyConfig& config) {
  Session s(model, config);
  std::size_t seg_begin = 0;
  while (!s.done()) {
    // WAIT: read at least one token, then until alpha >= 0.5 or the source ends.
    if (!s.exhausted()) {
      double alpha = 0.0;
      do {
        alpha = s.read_one();
      } while (alpha < 0.5 && !s.exhausted());
      s.close_segment();
    }
    // GENERATE: emit while beta >= 0.5, unconditionally once the source is exhausted.
    const bool exhausted = s.exhausted();
    SegmentEmission e = s.emit(seg_begin, exhausted, config.beam, config.segment_cap);
    seg_begin = s.reads();
    s.commit(e);
    if (!s.done() && exhausted && e.tokens.empty()) s.stall();
  }
  return s.finish();
}

StreamTrace run_waitk(SimulModel& model, int k, const PolicyConfig& config) {
  if (k < 1) throw std::invalid_argument("wait-k: k must be >= 1");
  Session s(model, config);
  std::size_t seg_begin = 0;
  std::size_t written = 0;
  while (!s.done()) {
    const std::size_t target = static_cast<std::size_t>(k) + written;  // k + i - 1 for token i = written + 1
    if (!s.exhausted()) {
      const std::size_t before = s.reads();
      s.read_to(target);
      if (s.reads() != before) s.close_segment();
    }
    SegmentEmission e = s.emit(seg_begin, true, 1, 1);
    seg_begin = s.reads();
    s.commit(e);
    written += e.tokens.size();
    if (!s.done() && e.tokens.empty()) s.stall();
  }
  return s.finish();
}

StreamTrace run_fixed_segment(SimulModel& model, int segment_length, int tokens_per_chunk,
                              const PolicyConfig& config) {
  if (segment_length < 1) throw std::invalid_argument("fixed segment: length must be >= 1");
  if (tokens_per_chunk < 0) throw std::invalid_argument("fixed segment: tokens per chunk must be >= 0");
  const auto len = static_cast<std::size_t>(segment_length);
  return run_chunked(model, len, len, tokens_per_chunk, config);
}

StreamTrace run_waitk_stride_n(SimulModel& model, int k, int n, const PolicyConfig& config) {
  if (k < 1 || n < 1) throw std::invalid_argument("wait-k-stride-n: k and n must be >= 1");
  return run_chunked(model, static_cast<std::size_t>(k), static_cast<std::size_t>(n), n, config);
}

StreamTrace run_offline(SimulModel& model, const PolicyConfig& config) {
  const auto j = static_cast<int>(model.source_length());
  return run_waitk(model, std::max(j, 1), config);
}

StreamTrace run_policy(SimulModel& model, const PolicyConfig& config) {
  switch (config.kind) {
    case PolicyKind::kSeg2Seg: return run_seg2seg(model, config);
    case PolicyKind::kWaitK: return run_waitk(model, config.k, config);
    case PolicyKind::kFixedSegment:
      return run_fixed_segment(model, config.segment_length, config.stride, config);
    case PolicyKind::kWaitKStrideN: return run_waitk_stride_n(model, config.k, config.stride, config);
  }
  throw std::invalid_argument("unknown policy kind");
}

StreamTrace run_policy(const model::Model& model, std::span<const int> source_symbols,
                       const PolicyConfig& config) {
  ModelBackend backend(model, model::to_model_ids(source_symbols));
  return run_policy(backend, config);
}

}  // namespace seg2seg::policy
