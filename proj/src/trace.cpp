#include "seg2seg/trace.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "seg2seg/model.hpp"

namespace seg2seg::policy {

using nlohmann::json;

std::string validate_trace(const StreamTrace& trace) {
  int reads = 0;
  std::size_t writes = 0;
  bool saw_eos = false;
  std::vector<int> t;
  for (const auto& e : trace.events) {
    if (saw_eos) return "event after end-of-sequence";
    if (e.kind == Event::Kind::kRead) {
      if (e.value != reads + 1) return "read indices must increase by one from 1";
      ++reads;
    } else {
      ++writes;
      if (e.value == model::kEos) {
        saw_eos = true;
      } else {
        t.push_back(reads);
      }
    }
  }
  if (static_cast<std::size_t>(reads) > trace.source_length) return "read past end of source";
  if (t != trace.t) return "read counts disagree with events";
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] < t[i - 1]) return "read counts decrease";
  }
  if (trace.hypothesis.size() != t.size()) return "hypothesis length differs from write count";
  if (!saw_eos && !trace.truncated) return "trace ends without end-of-sequence or truncation";
  if (writes == 0) return "trace has no writes";
  return {};
}

std::string token_name(int id) {
  switch (id) {
    case model::kPad: return "<pad>";
    case model::kBos: return "<bos>";
    case model::kEos: return "<eos>";
    case model::kUnk: return "<unk>";
    default: return std::to_string(id - model::kFirstSymbol);
  }
}

int token_from_name(const std::string& name) {
  if (name == "<pad>") return model::kPad;
  if (name == "<bos>") return model::kBos;
  if (name == "<eos>") return model::kEos;
  if (name == "<unk>") return model::kUnk;
  std::size_t pos = 0;
  const int v = std::stoi(name, &pos);
  if (pos != name.size() || v < 0) throw std::invalid_argument("bad token name '" + name + "'");
  return v + model::kFirstSymbol;
}

void write_trace_jsonl(std::ostream& os, const StreamTrace& trace) {
  for (const auto& e : trace.events) {
    json j;
    if (e.kind == Event::Kind::kRead) {
      j["type"] = "read";
      j["index"] = e.value;
    } else {
      j["type"] = "write";
      j["token"] = token_name(e.value);
    }
    os << j.dump() << '\n';
  }
  json s;
  s["type"] = "summary";
  s["source_length"] = trace.source_length;
  s["t"] = trace.t;
  s["truncated"] = trace.truncated;
  s["boundaries"] = trace.boundaries;
  s["cap_hits"] = trace.cap_hits;
  os << s.dump() << '\n';
}

std::string trace_to_jsonl(const StreamTrace& trace) {
  std::ostringstream os;
  write_trace_jsonl(os, trace);
  return os.str();
}

std::vector<StreamTrace> read_traces_jsonl(std::istream& is) {
  std::vector<StreamTrace> out;
  StreamTrace cur;
  std::string line;
  std::size_t lineno = 0;
  bool open = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      open = true;
      if (type == "read") {
        cur.events.push_back(Event::read(j.at("index").get<int>()));
      } else if (type == "write") {
        const int id = token_from_name(j.at("token").get<std::string>());
        cur.events.push_back(Event::write(id));
        if (id != model::kEos) cur.hypothesis.push_back(id);
      } else if (type == "summary") {
        cur.source_length = j.at("source_length").get<std::size_t>();
        cur.t = j.at("t").get<std::vector<int>>();
        cur.truncated = j.at("truncated").get<bool>();
        cur.boundaries = j.value("boundaries", std::vector<int>{});
        cur.cap_hits = j.value("cap_hits", 0);
        if (auto err = validate_trace(cur); !err.empty()) throw std::invalid_argument(err);
        out.push_back(std::move(cur));
        cur = StreamTrace{};
        open = false;
      } else {
        throw std::invalid_argument("unknown event type '" + type + "'");
      }
    } catch (const std::exception& e) {
      throw std::invalid_argument("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (open) throw std::invalid_argument("trace stream ends without a summary line");
  return out;
}

}  // namespace seg2seg::policy
