#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace seg2seg::policy {

struct Event {
  enum class Kind { kRead, kWrite };
  Kind kind = Kind::kRead;
  int value = 0;  // 1-based source index for reads, model token id for writes

  static Event read(int index) { return {Kind::kRead, index}; }
  static Event write(int token) { return {Kind::kWrite, token}; }
  friend bool operator==(const Event&, const Event&) = default;
};

// Ordered READ/WRITE record of one simultaneous decoding run.
struct StreamTrace {
  std::size_t source_length = 0;
  std::vector<Event> events;
  std::vector<int> t;            // read count before each non-eos write
  std::vector<int> hypothesis;   // model ids of non-eos writes
  std::vector<int> boundaries;   // read counts at which a segment was closed
  bool truncated = false;        // max-length cutoff fired before eos
  int cap_hits = 0;              // per-segment emission cap firings

  friend bool operator==(const StreamTrace&, const StreamTrace&) = default;
};

// Returns an empty string when every trace invariant holds.
std::string validate_trace(const StreamTrace& trace);

std::string token_name(int model_id);
int token_from_name(const std::string& name);

// One JSON object per event, then a summary object closing the trace.
void write_trace_jsonl(std::ostream& os, const StreamTrace& trace);
std::string trace_to_jsonl(const StreamTrace& trace);
// Parses a stream of concatenated traces (each closed by its summary line).
std::vector<StreamTrace> read_traces_jsonl(std::istream& is);

}  // namespace seg2seg::policy
