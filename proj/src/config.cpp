#include "seg2seg/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace seg2seg::config {

namespace {

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  const long long n = parse_int(key, v);
  if (n < 0) throw std::invalid_argument("config: '" + key + "' must be non-negative");
  return static_cast<std::size_t>(n);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add = [&](std::string key, std::function<void(RunConfig&, const std::string&)> set,
                   std::function<std::string(const RunConfig&)> get) {
      f.push_back({std::move(key), std::move(set), std::move(get)});
    };
    auto add_int = [&](const std::string& key, std::function<int&(RunConfig&)> ref) {
      add(key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = static_cast<int>(parse_int(key, v)); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); });
    };
    auto add_size = [&](const std::string& key, std::function<std::size_t&(RunConfig&)> ref) {
      add(key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_size(key, v); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); });
    };
    auto add_double = [&](const std::string& key, std::function<double&(RunConfig&)> ref) {
      add(key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_double(key, v); },
          [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); });
    };
    auto add_string = [&](const std::string& key, std::function<std::string&(RunConfig&)> ref) {
      add(key, [ref](RunConfig& c, const std::string& v) { ref(c) = v; },
          [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); });
    };

    add("task", [](RunConfig& c, const std::string& v) { c.task.kind = tasks::parse_task_kind(v); },
        [](const RunConfig& c) { return tasks::to_string(c.task.kind); });
    add_int("vocab", [](RunConfig& c) -> int& { return c.task.vocab; });
    add_int("min_len", [](RunConfig& c) -> int& { return c.task.min_len; });
    add_int("max_len", [](RunConfig& c) -> int& { return c.task.max_len; });
    add("data_seed",
        [](RunConfig& c, const std::string& v) { c.task.seed = parse_size("data_seed", v); },
        [](const RunConfig& c) { return std::to_string(c.task.seed); });
    add_size("train_size", [](RunConfig& c) -> std::size_t& { return c.train_size; });
    add_size("dev_size", [](RunConfig& c) -> std::size_t& { return c.dev_size; });
    add_size("test_size", [](RunConfig& c) -> std::size_t& { return c.test_size; });

    add_int("d", [](RunConfig& c) -> int& { return c.model.d; });
    add_int("enc_layers", [](RunConfig& c) -> int& { return c.model.enc_layers; });
    add_int("dec_layers", [](RunConfig& c) -> int& { return c.model.dec_layers; });
    add_int("heads", [](RunConfig& c) -> int& { return c.model.heads; });
    add_int("ffn", [](RunConfig& c) -> int& { return c.model.ffn; });
    add_double("dropout", [](RunConfig& c) -> double& { return c.model.dropout; });

    add_double("lambda", [](RunConfig& c) -> double& { return c.train.loss.lambda; });
    add_double("label_smoothing", [](RunConfig& c) -> double& { return c.train.loss.label_smoothing; });
    add("sum_ce", [](RunConfig& c, const std::string& v) { c.train.loss.sum_ce = parse_bool("sum_ce", v); },
        [](const RunConfig& c) { return std::string(c.train.loss.sum_ce ? "true" : "false"); });
    add_int("steps", [](RunConfig& c) -> int& { return c.train.steps; });
    add_int("batch", [](RunConfig& c) -> int& { return c.train.batch; });
    add_double("lr", [](RunConfig& c) -> double& { return c.train.lr; });
    add_int("warmup", [](RunConfig& c) -> int& { return c.train.warmup; });
    add_double("clip", [](RunConfig& c) -> double& { return c.train.clip; });
    add("optimizer", [](RunConfig& c, const std::string& v) { c.train.optimizer = train::parse_optimizer(v); },
        [](const RunConfig& c) { return train::to_string(c.train.optimizer); });
    add("mapping", [](RunConfig& c, const std::string& v) { c.train.mapping = train::parse_mapping_mode(v); },
        [](const RunConfig& c) { return train::to_string(c.train.mapping); });
    add("seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_size("seed", v); },
        [](const RunConfig& c) { return std::to_string(c.train.seed); });
    add_int("eval_every", [](RunConfig& c) -> int& { return c.train.eval_every; });

    add("policy", [](RunConfig& c, const std::string& v) { c.policy.kind = policy::parse_policy_kind(v); },
        [](const RunConfig& c) { return policy::to_string(c.policy.kind); });
    add_int("k", [](RunConfig& c) -> int& { return c.policy.k; });
    add_int("stride", [](RunConfig& c) -> int& { return c.policy.stride; });
    add_int("segment_length", [](RunConfig& c) -> int& { return c.policy.segment_length; });
    add_int("beam", [](RunConfig& c) -> int& { return c.policy.beam; });
    add_int("max_target_len", [](RunConfig& c) -> int& { return c.policy.max_target_len; });
    add_int("segment_cap", [](RunConfig& c) -> int& { return c.policy.segment_cap; });

    add("target_rep",
        [](RunConfig& c, const std::string& v) { c.target_rep = similarity::parse_target_rep(v); },
        [](const RunConfig& c) { return similarity::to_string(c.target_rep); });
    add("lambdas",
        [](RunConfig& c, const std::string& v) {
          std::vector<double> out;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(parse_double("lambdas", item));
          }
          c.lambdas = std::move(out);
        },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.lambdas.size(); ++i) s += (i ? "," : "") + fmt(c.lambdas[i]);
          return s;
        });
    add_int("boundary_tolerance", [](RunConfig& c) -> int& { return c.boundary_tolerance; });

    add_string("train_data", [](RunConfig& c) -> std::string& { return c.train_data; });
    add_string("dev_data", [](RunConfig& c) -> std::string& { return c.dev_data; });
    add_string("test_data", [](RunConfig& c) -> std::string& { return c.test_data; });
    add_string("checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; });
    add_string("traces", [](RunConfig& c) -> std::string& { return c.traces; });
    add_string("hypotheses", [](RunConfig& c) -> std::string& { return c.hypotheses; });
    add_string("out", [](RunConfig& c) -> std::string& { return c.out; });
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  task.validate();
  model.validate();
  train.validate();
  policy.validate();
  if (model.src_vocab != task.vocab + model::kFirstSymbol || model.tgt_vocab != task.vocab + model::kFirstSymbol) {
    throw std::invalid_argument("config: model vocabulary must equal task vocab + " +
                                std::to_string(model::kFirstSymbol));
  }
  if (boundary_tolerance < 0) throw std::invalid_argument("config: boundary_tolerance must be >= 0");
}

const std::vector<std::string>& keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return out;
}

std::map<std::string, std::string> parse_key_values(std::istream& is, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw std::invalid_argument(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(where + ": empty key");
    if (!out.emplace(key, value).second) throw std::invalid_argument(where + ": duplicate key '" + key + "'");
  }
  return out;
}

void apply(RunConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, value);
  // The vocabulary is owned by the task; the model follows it.
  if (key == "vocab") {
    config.model.src_vocab = config.task.vocab + model::kFirstSymbol;
    config.model.tgt_vocab = config.task.vocab + model::kFirstSymbol;
  }
}

void apply(RunConfig& config, const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) apply(config, k, v);
}

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  RunConfig c;
  const auto values = parse_key_values(in, path);
  for (const auto& [k, v] : values) {
    try {
      apply(c, k, v);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ": " + e.what());
    }
  }
  return c;
}

std::string get(const RunConfig& config, const std::string& key) { return field(key).get(config); }

std::string dump(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace seg2seg::config
