#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace seg2seg::tasks {

enum class TaskKind { kCopy, kExpand, kCompress, kLocalReorder };

TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind kind);

// Tokens are task symbols in [0, vocab). Alignment and boundaries are 1-based
// source positions.
struct Example {
  std::vector<int> source;
  std::vector<int> target;
  std::vector<int> alignment;   // per target token
  std::vector<int> boundaries;  // ends of gold segments, always includes J

  friend bool operator==(const Example&, const Example&) = default;
};

struct TaskSpec {
  TaskKind kind = TaskKind::kCopy;
  int vocab = 16;
  int min_len = 5;
  int max_len = 15;
  std::uint64_t seed = 1;

  void validate() const;
};

// Symbols below this bound are silent in the compression task.
int silent_bound(int vocab);

// Rule application for a single source sequence.
Example apply_rule(TaskKind kind, const std::vector<int>& source, int vocab);

std::vector<Example> generate(const TaskSpec& spec, std::size_t count);

// Independent structural checks; returns an empty string when valid.
std::string validate_example(const Example& ex);

std::string to_json_line(const Example& ex);
Example from_json_line(const std::string& line);  // throws std::invalid_argument
void save_jsonl(const std::string& path, const std::vector<Example>& examples);
std::vector<Example> load_jsonl(const std::string& path);  // errors carry the line number

}  // namespace seg2seg::tasks
