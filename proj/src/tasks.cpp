#include "seg2seg/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace seg2seg::tasks {

using nlohmann::json;

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::kCopy;
  if (name == "expand") return TaskKind::kExpand;
  if (name == "compress") return TaskKind::kCompress;
  if (name == "local_reorder") return TaskKind::kLocalReorder;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kExpand: return "expand";
    case TaskKind::kCompress: return "compress";
    case TaskKind::kLocalReorder: return "local_reorder";
  }
  return "unknown";
}

void TaskSpec::validate() const {
  if (vocab < 4) throw std::invalid_argument("task vocab " + std::to_string(vocab) + " < 4");
  if (min_len < 1 || max_len < min_len) {
    throw std::invalid_argument("task lengths must satisfy 1 <= min_len <= max_len");
  }
}

int silent_bound(int vocab) { return std::max(1, vocab / 8); }

Example apply_rule(TaskKind kind, const std::vector<int>& source, int vocab) {
  if (vocab < 4) throw std::invalid_argument("task vocab " + std::to_string(vocab) + " < 4");
  Example ex;
  ex.source = source;
  const int n = static_cast<int>(source.size());
  switch (kind) {
    case TaskKind::kCopy:
      for (int j = 0; j < n; ++j) {
        ex.target.push_back(source[j]);
        ex.alignment.push_back(j + 1);
        ex.boundaries.push_back(j + 1);
      }
      break;
    case TaskKind::kExpand:
      // Even symbols are emitted twice, odd symbols once.
      for (int j = 0; j < n; ++j) {
        const int reps = source[j] % 2 == 0 ? 2 : 1;
        for (int r = 0; r < reps; ++r) {
          ex.target.push_back(source[j]);
          ex.alignment.push_back(j + 1);
        }
        ex.boundaries.push_back(j + 1);
      }
      break;
    case TaskKind::kCompress: {
      const int silent = silent_bound(vocab);
      for (int j = 0; j < n; ++j) {
        if (source[j] < silent) continue;
        ex.target.push_back(source[j]);
        ex.alignment.push_back(j + 1);
        ex.boundaries.push_back(j + 1);
      }
      if (n > 0 && (ex.boundaries.empty() || ex.boundaries.back() != n)) ex.boundaries.push_back(n);
      break;
    }
    case TaskKind::kLocalReorder:
      // Each adjacent pair is emitted in ascending order.
      for (int j = 0; j + 1 < n; j += 2) {
        const int a = source[j], b = source[j + 1];
        ex.target.push_back(std::min(a, b));
        ex.target.push_back(std::max(a, b));
        ex.alignment.push_back(j + 2);
        ex.alignment.push_back(j + 2);
        ex.boundaries.push_back(j + 2);
      }
      if (n % 2 == 1) {
        ex.target.push_back(source[n - 1]);
        ex.alignment.push_back(n);
        ex.boundaries.push_back(n);
      }
      break;
  }
  return ex;
}

std::vector<Example> generate(const TaskSpec& spec, std::size_t count) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> length(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> symbol(0, spec.vocab - 1);
  std::vector<Example> out;
  out.reserve(count);
  while (out.size() < count) {
    std::vector<int> src(static_cast<std::size_t>(length(rng)));
    for (auto& s : src) s = symbol(rng);
    Example ex = apply_rule(spec.kind, src, spec.vocab);
    if (ex.target.empty()) continue;  // all-silent compression source
    out.push_back(std::move(ex));
  }
  return out;
}

std::string validate_example(const Example& ex) {
  const int n = static_cast<int>(ex.source.size());
  if (n == 0) return "empty source";
  if (ex.alignment.size() != ex.target.size()) return "alignment length differs from target length";
  for (std::size_t i = 0; i < ex.alignment.size(); ++i) {
    if (ex.alignment[i] < 1 || ex.alignment[i] > n) return "alignment out of range";
    if (i > 0 && ex.alignment[i] < ex.alignment[i - 1]) return "alignment not monotone";
  }
  if (ex.boundaries.empty() || ex.boundaries.back() != n) return "boundaries must end at J";
  for (std::size_t b = 0; b < ex.boundaries.size(); ++b) {
    if (ex.boundaries[b] < 1 || ex.boundaries[b] > n) return "boundary out of range";
    if (b > 0 && ex.boundaries[b] <= ex.boundaries[b - 1]) return "boundaries not increasing";
  }
  return {};
}

std::string to_json_line(const Example& ex) {
  json j;
  j["source"] = ex.source;
  j["target"] = ex.target;
  j["alignment"] = ex.alignment;
  j["boundaries"] = ex.boundaries;
  return j.dump();
}

Example from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
  Example ex;
  for (const char* field : {"source", "target", "alignment", "boundaries"}) {
    if (!j.contains(field)) throw std::invalid_argument(std::string("missing field \"") + field + "\"");
    if (!j[field].is_array()) throw std::invalid_argument(std::string("field \"") + field + "\" must be an array");
  }
  try {
    ex.source = j["source"].get<std::vector<int>>();
    ex.target = j["target"].get<std::vector<int>>();
    ex.alignment = j["alignment"].get<std::vector<int>>();
    ex.boundaries = j["boundaries"].get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("non-integer token: ") + e.what());
  }
  if (auto err = validate_example(ex); !err.empty()) throw std::invalid_argument(err);
  return ex;
}

void save_jsonl(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& ex : examples) os << to_json_line(ex) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path);
}

std::vector<Example> load_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset " + path);
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json_line(line));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace seg2seg::tasks
