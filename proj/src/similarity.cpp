#include "seg2seg/similarity.hpp"

#include <stdexcept>

#include "json.hpp"
#include "seg2seg/metrics.hpp"

namespace seg2seg::similarity {

TargetRep parse_target_rep(const std::string& name) {
  if (name == "decoder_state") return TargetRep::kDecoderState;
  if (name == "input_stream") return TargetRep::kInputStream;
  if (name == "emission_query") return TargetRep::kEmissionQuery;
  throw std::invalid_argument("unknown target representation '" + name + "'");
}

std::string to_string(TargetRep rep) {
  switch (rep) {
    case TargetRep::kDecoderState: return "decoder_state";
    case TargetRep::kInputStream: return "input_stream";
    case TargetRep::kEmissionQuery: return "emission_query";
  }
  return "?";
}

SimilarityReport summarize(std::vector<SegmentVectors> vectors) {
  SimilarityReport r;
  r.segments = vectors.size();
  for (const auto& v : vectors) {
    r.source_target += metrics::cosine_similarity(v.source, v.target);
    r.source_segment += metrics::cosine_similarity(v.source, v.latent);
    r.segment_target += metrics::cosine_similarity(v.latent, v.target);
  }
  if (r.segments > 0) {
    const double n = static_cast<double>(r.segments);
    r.source_target /= n;
    r.source_segment /= n;
    r.segment_target /= n;
  }
  r.vectors = std::move(vectors);
  return r;
}

namespace {

void add_row(std::vector<double>& acc, const Tensor& m, std::size_t row) {
  const std::size_t d = m.dim(1);
  if (acc.empty()) acc.assign(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) acc[c] += m[row * d + c];
}

}  // namespace

std::vector<SegmentVectors> example_vectors(const model::Model& model, std::span<const int> source_ids,
                                            const policy::StreamTrace& trace, TargetRep rep,
                                            std::size_t example_index) {
  const std::size_t J = source_ids.size();
  if (J == 0 || trace.source_length != J) {
    throw std::invalid_argument("similarity: trace does not belong to this source");
  }
  if (trace.t.empty()) return {};
  const auto d = static_cast<std::size_t>(model.config().d);

  ad::Graph g(false);
  model::Forward f(model.config(), model.params(), g);
  ad::Var states = f.encode(source_ids);
  std::vector<int> dec_in{model::kBos};
  dec_in.insert(dec_in.end(), trace.hypothesis.begin(), trace.hypothesis.end());
  ad::Var inputs = f.target_inputs(dec_in);
  const std::size_t rows = dec_in.size();
  Tensor mask({rows, J}, 0.0);
  int total_reads = 0;
  for (const auto& e : trace.events)
    if (e.kind == policy::Event::Kind::kRead) ++total_reads;
  for (std::size_t r = 0; r < rows; ++r) {
    const int n = r < trace.t.size() ? trace.t[r] : total_reads;
    for (int j = 0; j < n; ++j) mask[r * J + static_cast<std::size_t>(j)] = 1.0;
  }
  const Tensor hidden = f.decode_hidden(inputs, states, g.constant(std::move(mask))).value();
  const Tensor& S = states.value();
  const Tensor& X = inputs.value();
  const Tensor& W = model.params().at("w_src_seg");
  const Tensor Q = ad::matmul(inputs, g.constant(model.params().at("w_tgt_seg"))).value();

  std::vector<SegmentVectors> out;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < trace.boundaries.size(); ++k) {
    const auto end = static_cast<std::size_t>(trace.boundaries[k]);
    if (end <= begin || end > J) throw std::invalid_argument("similarity: bad segment boundaries");
    SegmentVectors v;
    v.example = example_index;
    v.segment = k;
    for (std::size_t j = begin; j < end; ++j) add_row(v.source, S, j);
    for (std::size_t i = 0; i < trace.t.size(); ++i) {
      if (static_cast<std::size_t>(trace.t[i]) != end) continue;
      switch (rep) {
        case TargetRep::kDecoderState: add_row(v.target, hidden, i); break;
        case TargetRep::kInputStream: add_row(v.target, X, i + 1); break;
        case TargetRep::kEmissionQuery: add_row(v.target, Q, i); break;
      }
    }
    begin = end;
    if (v.target.empty()) continue;
    v.latent.assign(d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) v.latent[b] += v.source[a] * W[a * d + b];
    out.push_back(std::move(v));
  }
  return out;
}

SimilarityReport representation_similarity(const model::Model& model,
                                           const std::vector<tasks::Example>& examples,
                                           const policy::PolicyConfig& config, TargetRep rep) {
  std::vector<SegmentVectors> all;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const std::vector<int> ids = model::to_model_ids(examples[e].source);
    policy::ModelBackend backend(model, ids);
    const policy::StreamTrace trace = policy::run_policy(backend, config);
    for (auto& v : example_vectors(model, ids, trace, rep, e)) all.push_back(std::move(v));
  }
  return summarize(std::move(all));
}

std::string to_json(const SimilarityReport& report, bool include_vectors) {
  nlohmann::json j;
  j["source_target"] = report.source_target;
  j["source_segment"] = report.source_segment;
  j["segment_target"] = report.segment_target;
  j["segments"] = report.segments;
  if (include_vectors) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : report.vectors) {
      arr.push_back({{"example", v.example},
                     {"segment", v.segment},
                     {"source", v.source},
                     {"target", v.target},
                     {"segment_rep", v.latent}});
    }
    j["vectors"] = std::move(arr);
  }
  return j.dump(2);
}

}  // namespace seg2seg::similarity
