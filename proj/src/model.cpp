#include "seg2seg/model.hpp"

#include <cmath>
#include <stdexcept>

#include "seg2seg/mapping.hpp"

namespace seg2seg::model {

void ModelConfig::validate() const {
  if (src_vocab <= kFirstSymbol || tgt_vocab <= kFirstSymbol) {
    throw std::invalid_argument("model config: vocabularies must exceed the special ids");
  }
  if (d <= 0 || heads <= 0 || ffn <= 0 || enc_layers < 0 || dec_layers < 0) {
    throw std::invalid_argument("model config: sizes must be positive");
  }
  if (d % heads != 0) {
    throw std::invalid_argument("model config: d=" + std::to_string(d) +
                                " not divisible by heads=" + std::to_string(heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model config: dropout in [0,1)");
}

std::vector<int> to_model_ids(std::span<const int> symbols) {
  std::vector<int> out(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) out[i] = symbols[i] + kFirstSymbol;
  return out;
}

std::vector<int> to_symbols(std::span<const int> ids) {
  std::vector<int> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = ids[i] >= kFirstSymbol ? ids[i] - kFirstSymbol : -1;
  return out;
}

Model::Model(ModelConfig config, ad::ParamMap params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto shapes = parameter_shapes(config_);
  if (shapes.size() != params_.size()) {
    throw std::invalid_argument("model: expected " + std::to_string(shapes.size()) +
                                " parameters, got " + std::to_string(params_.size()));
  }
  for (const auto& [name, t] : shapes) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("model: missing parameter " + name);
    if (it->second.shape() != t.shape()) {
      throw std::invalid_argument("model: parameter " + name + " has shape " +
                                  shape_str(it->second.shape()) + ", expected " +
                                  shape_str(t.shape()));
    }
    if (!it->second.all_finite()) throw std::invalid_argument("model: non-finite parameter " + name);
  }
}

ad::ParamMap parameter_shapes(const ModelConfig& c) {
  c.validate();
  const auto d = static_cast<std::size_t>(c.d);
  const auto f = static_cast<std::size_t>(c.ffn);
  ad::ParamMap p;
  auto add = [&](const std::string& name, Shape s) { p.emplace(name, Tensor(std::move(s))); };
  auto add_ln = [&](const std::string& name) {
    add(name + ".g", {d});
    add(name + ".b", {d});
  };
  auto add_attn = [&](const std::string& name) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) add(name + w, {d, d});
  };
  auto add_ffn = [&](const std::string& name) {
    add(name + ".w1", {d, f});
    add(name + ".b1", {f});
    add(name + ".w2", {f, d});
    add(name + ".b2", {d});
  };
  add("src_embed", {static_cast<std::size_t>(c.src_vocab), d});
  add("tgt_embed", {static_cast<std::size_t>(c.tgt_vocab), d});
  for (int l = 0; l < c.enc_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    add_ln(pre + ".ln1");
    add_attn(pre + ".attn");
    add_ln(pre + ".ln2");
    add_ffn(pre + ".ffn");
  }
  add_ln("enc.ln");
  for (int l = 0; l < c.dec_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    add_ln(pre + ".ln1");
    add_attn(pre + ".self");
    add_ln(pre + ".ln2");
    add_attn(pre + ".cross");
    add_ln(pre + ".ln3");
    add_ffn(pre + ".ffn");
  }
  add_ln("dec.ln");
  add("out.w", {d, static_cast<std::size_t>(c.tgt_vocab)});
  add("out.b", {static_cast<std::size_t>(c.tgt_vocab)});
  // Aggregation head: two linear layers, hidden width d.
  add("agg.w1", {d, d});
  add("agg.b1", {d});
  add("agg.w2", {d, 1});
  add("agg.b2", {1});
  add("w_src_seg", {d, d});
  add("w_tgt_seg", {d, d});
  return p;
}

Model Model::initialize(const ModelConfig& config, std::uint64_t seed) {
  ad::ParamMap params = parameter_shapes(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double d = config.d;
  for (auto& [name, t] : params) {
    // Biases and layer-norm shifts start at zero, gains at one.
    const bool is_gain = name.ends_with(".g");
    const bool is_shift = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") ||
                          name == "out.b";
    if (is_gain) {
      for (auto& v : t.storage()) v = 1.0;
      continue;
    }
    if (is_shift) continue;
    // Segment-space projections start as the identity.
    if (name == "w_src_seg" || name == "w_tgt_seg") {
      for (std::size_t i = 0; i < t.dim(0); ++i) t[i * t.dim(1) + i] = 1.0;
      continue;
    }
    double stddev = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
    if (name == "src_embed" || name == "tgt_embed") stddev = 1.0 / std::sqrt(d);
    for (auto& v : t.storage()) v = stddev * normal(rng);
  }
  return Model(config, std::move(params));
}

Tensor sinusoidal_positions(std::size_t length, std::size_t d) {
  Tensor pe({length, d});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) pe[pos * d + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

Forward::Forward(const ModelConfig& config, const ad::ParamMap& params, ad::Graph& graph,
                 std::mt19937_64* dropout_rng)
    : config_(config), params_(params), graph_(graph), rng_(dropout_rng) {}

ad::Var Forward::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter " + name);
  return graph_.parameter(name, it->second);
}

ad::Var Forward::drop(ad::Var x) {
  if (rng_ == nullptr || config_.dropout <= 0.0) return x;
  return ad::dropout(x, config_.dropout, *rng_);
}

ad::Var Forward::norm(const std::string& prefix, ad::Var x) {
  return ad::layer_norm(x, param(prefix + ".g"), param(prefix + ".b"));
}

ad::Var Forward::ffn(const std::string& prefix, ad::Var x) {
  ad::Var h = ad::gelu(ad::add_bias(ad::matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
  return ad::add_bias(ad::matmul(drop(h), param(prefix + ".w2")), param(prefix + ".b2"));
}

ad::Var Forward::attention(const std::string& prefix, ad::Var query_in, ad::Var kv_in,
                           const std::vector<std::uint8_t>* mask, const ad::Var* modulation) {
  const auto heads = static_cast<std::size_t>(config_.heads);
  const auto dh = static_cast<std::size_t>(config_.d) / heads;
  ad::Var q = ad::matmul(query_in, param(prefix + ".wq"));
  ad::Var k = ad::matmul(kv_in, param(prefix + ".wk"));
  ad::Var v = ad::matmul(kv_in, param(prefix + ".wv"));
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice(q, 1, h * dh, (h + 1) * dh);
    ad::Var kh = ad::slice(k, 1, h * dh, (h + 1) * dh);
    ad::Var vh = ad::slice(v, 1, h * dh, (h + 1) * dh);
    ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv);
    ad::Var weights = mask ? ad::masked_softmax(scores, *mask) : ad::softmax(scores);
    if (modulation) weights = ad::row_normalize(ad::mul(weights, *modulation), kRenormFloor);
    outs.push_back(ad::matmul(weights, vh));
  }
  ad::Var merged = heads == 1 ? outs[0] : ad::concat(outs, 1);
  return ad::matmul(merged, param(prefix + ".wo"));
}

namespace {

std::vector<std::uint8_t> causal_mask(std::size_t n) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
  return m;
}

}  // namespace

ad::Var Forward::encode(std::span<const int> src_ids) {
  if (src_ids.empty()) throw std::invalid_argument("encode: empty source");
  for (int id : src_ids) {
    if (id < 0 || id >= config_.src_vocab) {
      throw std::out_of_range("encode: source id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.src_vocab));
    }
  }
  const std::size_t n = src_ids.size();
  const auto d = static_cast<std::size_t>(config_.d);
  ad::Var x = ad::scale(ad::embedding(param("src_embed"), src_ids), std::sqrt(static_cast<double>(d)));
  x = drop(ad::add(x, graph_.constant(sinusoidal_positions(n, d))));
  const auto mask = causal_mask(n);
  for (int l = 0; l < config_.enc_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    ad::Var h = norm(pre + ".ln1", x);
    x = ad::add(x, drop(attention(pre + ".attn", h, h, &mask, nullptr)));
    x = ad::add(x, drop(ffn(pre + ".ffn", norm(pre + ".ln2", x))));
  }
  return norm("enc.ln", x);
}

ad::Var Forward::aggregation_head(ad::Var states) {
  ad::Var h = ad::gelu(ad::add_bias(ad::matmul(states, param("agg.w1")), param("agg.b1")));
  ad::Var logits = ad::add_bias(ad::matmul(h, param("agg.w2")), param("agg.b2"));
  return ad::sigmoid(ad::reshape(logits, {states.value().dim(0)}));
}

ad::Var Forward::segment_reps(ad::Var p_x, ad::Var states) {
  return mapping::expected_segment_reps(p_x, states, param("w_src_seg"));
}

ad::Var Forward::target_inputs(std::span<const int> dec_in_ids) {
  for (int id : dec_in_ids) {
    if (id < 0 || id >= config_.tgt_vocab) {
      throw std::out_of_range("decode: target id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.tgt_vocab));
    }
  }
  const auto d = static_cast<std::size_t>(config_.d);
  ad::Var y = ad::scale(ad::embedding(param("tgt_embed"), dec_in_ids), std::sqrt(static_cast<double>(d)));
  return ad::add(y, graph_.constant(sinusoidal_positions(dec_in_ids.size(), d)));
}

ad::Var Forward::emission_head(ad::Var tgt_inputs, ad::Var seg) {
  const Tensor& t = tgt_inputs.value();
  const Tensor& s = seg.value();
  if (t.rank() != 2 || s.rank() != 2 || t.dim(1) != s.dim(1) ||
      t.dim(1) != static_cast<std::size_t>(config_.d)) {
    throw std::invalid_argument("emission_head: target inputs " + shape_str(t.shape()) +
                                " and segments " + shape_str(s.shape()) + " disagree on d");
  }
  ad::Var query = ad::matmul(tgt_inputs, param("w_tgt_seg"));
  ad::Var logits = ad::scale(ad::matmul(query, ad::transpose(seg)),
                             1.0 / std::sqrt(static_cast<double>(config_.d)));
  return ad::sigmoid(logits);
}

ad::Var Forward::decode_hidden(ad::Var tgt_inputs, ad::Var states, ad::Var mapping) {
  const Tensor& m = mapping.value();
  const std::size_t rows = tgt_inputs.value().dim(0);
  if (m.rank() != 2 || m.dim(0) != rows || m.dim(1) != states.value().dim(0)) {
    throw std::invalid_argument("decode: mapping " + shape_str(m.shape()) + " does not match " +
                                std::to_string(rows) + " queries x " +
                                std::to_string(states.value().dim(0)) + " sources");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.dim(1); ++j) s += m[i * m.dim(1) + j];
    if (!(s > 0.0)) {
      throw std::invalid_argument("decode: query " + std::to_string(i) + " admits no source token");
    }
  }
  const auto mask = causal_mask(rows);
  ad::Var x = drop(tgt_inputs);
  for (int l = 0; l < config_.dec_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    ad::Var h = norm(pre + ".ln1", x);
    x = ad::add(x, drop(attention(pre + ".self", h, h, &mask, nullptr)));
    x = ad::add(x, drop(attention(pre + ".cross", norm(pre + ".ln2", x), states, nullptr, &mapping)));
    x = ad::add(x, drop(ffn(pre + ".ffn", norm(pre + ".ln3", x))));
  }
  return norm("dec.ln", x);
}

ad::Var Forward::output(ad::Var hidden) {
  return ad::softmax(ad::add_bias(ad::matmul(hidden, param("out.w")), param("out.b")));
}

ad::Var Forward::decode(ad::Var tgt_inputs, ad::Var states, ad::Var mapping) {
  return output(decode_hidden(tgt_inputs, states, mapping));
}

}  // namespace seg2seg::model
