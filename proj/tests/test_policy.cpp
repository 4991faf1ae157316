#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "scripted_model.hpp"
#include "seg2seg/mapping.hpp"
#include "seg2seg/model.hpp"
#include "seg2seg/policy.hpp"

using namespace seg2seg;
using namespace seg2seg::policy;
using scripted::sigmoid;

namespace {

std::vector<double> row_sums(const Tensor& m, std::size_t rows) {
  std::vector<double> out;
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.dim(1); ++j) s += m.at(i, j);
    out.push_back(s);
  }
  return out;
}

std::vector<double> as_double(const std::vector<int>& v) { return {v.begin(), v.end()}; }

// Saturated random alpha/beta with an I-token target.
scripted::Model random_saturated(std::mt19937_64& rng, std::size_t J, std::size_t I, Tensor* beta_out) {
  std::vector<double> alpha(J);
  for (double& a : alpha) a = sigmoid(rng() % 2 ? 25.0 : -25.0);
  Tensor beta({I + 1, J});
  for (double& b : beta.storage()) b = sigmoid(rng() % 3 ? 25.0 : -25.0);
  *beta_out = beta;
  return scripted::tabled(alpha, beta, I);
}

scripted::Model random_model(std::mt19937_64& rng) {
  scripted::Model m;
  const std::size_t J = 1 + rng() % 9;
  for (std::size_t j = 0; j < J; ++j) m.alpha.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
  const std::uint64_t salt = rng();
  m.beta = [salt](std::size_t i, std::size_t b, std::size_t e) {
    return static_cast<double>(std::hash<std::uint64_t>{}(salt ^ (i * 131 + b * 17 + e)) % 1000) / 999.0;
  };
  m.logits = [salt](std::span<const int> prefix, std::span<const int>, int reads) {
    std::vector<double> lp(scripted::kVocab);
    double z = 0.0;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      lp[v] = static_cast<double>(std::hash<std::uint64_t>{}(salt + prefix.size() * 977 + v * 31 +
                                                            static_cast<std::uint64_t>(reads)) %
                                  100) /
              20.0;
      z += std::exp(lp[v]);
    }
    for (double& v : lp) v -= std::log(z);
    return lp;
  };
  return m;
}

std::vector<int> offline_greedy(const model::Model& net, const std::vector<int>& src, std::size_t max_len) {
  std::vector<int> out;
  while (out.size() < max_len) {
    ad::Graph g(false);
    model::Forward f(net.config(), net.params(), g);
    ad::Var states = f.encode(src);
    std::vector<int> dec{model::kBos};
    dec.insert(dec.end(), out.begin(), out.end());
    const Tensor p = f.decode(f.target_inputs(dec), states, g.constant(Tensor({dec.size(), src.size()}, 1.0))).value();
    int best = model::kEos;
    for (int v = model::kFirstSymbol; v < static_cast<int>(p.dim(1)); ++v)
      if (p.at(dec.size() - 1, static_cast<std::size_t>(v)) > p.at(dec.size() - 1, static_cast<std::size_t>(best)))
        best = v;
    if (best == model::kEos) break;
    out.push_back(best);
  }
  return out;
}

}  // namespace

TEST_CASE("three-segment decision pattern gives read counts 2,2,5,5,6") {
  scripted::Model m = scripted::three_segment_pattern();
  const StreamTrace tr = run_seg2seg(m, PolicyConfig{});
  CHECK(tr.t == std::vector<int>{2, 2, 5, 5, 6});
  CHECK(tr.boundaries == std::vector<int>{2, 5, 6});
  CHECK(tr.hypothesis.size() == 5);
  CHECK(tr.events.back() == Event::write(model::kEos));
  CHECK(validate_trace(tr).empty());
  CHECK_FALSE(tr.truncated);
}

TEST_CASE("policy read counts equal the row sums of the hard mapping under saturation") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t J = 1 + rng() % 7, I = 1 + rng() % 6;
    Tensor beta;
    scripted::Model m = random_saturated(rng, J, I, &beta);
    const StreamTrace tr = run_seg2seg(m, PolicyConfig{});
    REQUIRE(validate_trace(tr).empty());
    const auto seg = mapping::hard_segmentation(mapping::threshold(m.alpha));
    // An early end-of-sequence stops reading, so the trace holds a prefix of the segmentation.
    REQUIRE(tr.boundaries.size() <= seg.boundaries.size());
    CHECK(tr.boundaries == std::vector<int>(seg.boundaries.begin(),
                                            seg.boundaries.begin() + static_cast<long>(tr.boundaries.size())));
    const Tensor hard = mapping::policy_mapping(m.alpha, beta);
    // Early end-of-sequence emission shortens the trace; rows it covers must agree.
    REQUIRE(tr.t.size() <= I);
    CHECK(as_double(tr.t) == row_sums(hard, tr.t.size()));
  }
}

TEST_CASE("threshold extremes") {
  SUBCASE("alpha and beta all high: one read, then emission until end-of-sequence") {
    scripted::Model m;
    m.alpha.assign(6, 0.9);
    m.beta = [](std::size_t, std::size_t, std::size_t) { return 0.8; };
    m.logits = scripted::counting(4);
    const StreamTrace tr = run_seg2seg(m, PolicyConfig{});
    CHECK(tr.t == std::vector<int>{1, 1, 1, 1});
    CHECK(tr.events.front() == Event::read(1));
    CHECK(m.last_read == 1);
  }
  SUBCASE("alpha all low: the whole source is one segment") {
    scripted::Model m;
    m.alpha.assign(5, 0.2);
    m.beta = [](std::size_t, std::size_t, std::size_t) { return 0.0; };
    m.logits = scripted::counting(7);
    const StreamTrace tr = run_seg2seg(m, PolicyConfig{});
    CHECK(tr.t == std::vector<int>(7, 5));
    CHECK(tr.boundaries == std::vector<int>{5});
  }
  SUBCASE("beta low everywhere defers emission to the exhausted source") {
    scripted::Model m;
    m.alpha.assign(4, 0.9);
    m.beta = [](std::size_t, std::size_t, std::size_t) { return 0.1; };
    m.logits = scripted::counting(3);
    const StreamTrace tr = run_seg2seg(m, PolicyConfig{});
    CHECK(tr.t == std::vector<int>{4, 4, 4});
    CHECK(tr.boundaries == std::vector<int>{1, 2, 3, 4});
  }
}

TEST_CASE("wait-k read counts") {
  for (int k = 1; k <= 12; ++k) {
    for (std::size_t J : {1u, 5u, 10u}) {
      for (std::size_t I : {1u, 6u, 14u}) {
        scripted::Model m;
        m.alpha.assign(J, 0.0);
        m.beta = [](std::size_t, std::size_t, std::size_t) { return 0.0; };
        m.logits = scripted::counting(I);
        const StreamTrace tr = run_waitk(m, k);
        REQUIRE(tr.t.size() == I);
        for (std::size_t i = 1; i <= I; ++i)
          CHECK(tr.t[i - 1] == std::min<int>(k + static_cast<int>(i) - 1, static_cast<int>(J)));
        CHECK(validate_trace(tr).empty());
      }
    }
  }
  scripted::Model m = scripted::three_segment_pattern();
  CHECK_THROWS_AS(run_waitk(m, 0), std::invalid_argument);
}

TEST_CASE("fixed segments close at multiples of the segment length") {
  for (int len = 1; len <= 5; ++len) {
    for (int per_chunk : {0, 1, 2}) {
      scripted::Model m;
      m.alpha.assign(11, 0.0);
      m.beta = [](std::size_t i, std::size_t, std::size_t end) { return i < end ? 1.0 : 0.0; };
      m.logits = scripted::counting(9);
      const StreamTrace tr = run_fixed_segment(m, len, per_chunk);
      CHECK(validate_trace(tr).empty());
      for (std::size_t b = 0; b < tr.boundaries.size(); ++b)
        CHECK(tr.boundaries[b] == std::min(11, len * static_cast<int>(b + 1)));
      if (per_chunk > 0) {
        for (std::size_t i = 0; i < tr.t.size(); ++i) CHECK(tr.t[i] <= static_cast<int>(i) / per_chunk * len + len);
      }
    }
  }
  scripted::Model m;
  m.alpha.assign(6, 0.0);
  m.beta = [](std::size_t, std::size_t, std::size_t) { return 1.0; };
  m.logits = scripted::counting(4);
  CHECK(run_fixed_segment(m, 6, 1).t == std::vector<int>(4, 6));
}

TEST_CASE("wait-k-stride-n reads k then chunks of n") {
  scripted::Model m;
  m.alpha.assign(9, 0.0);
  m.beta = [](std::size_t, std::size_t, std::size_t) { return 0.0; };
  m.logits = scripted::counting(8);
  const StreamTrace tr = run_waitk_stride_n(m, 3, 2);
  CHECK(tr.t == std::vector<int>{3, 3, 5, 5, 7, 7, 9, 9});
  CHECK(tr.boundaries == std::vector<int>{3, 5, 7, 9});
}

TEST_CASE("beam of one equals greedy emission") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    scripted::Model m = random_model(rng);
    for (std::size_t n = 1; n <= m.alpha.size(); ++n) m.read(n);
    BeamOptions o;
    o.beam_size = 1;
    o.max_tokens = 6;
    o.force = trial % 2 == 0;
    const std::size_t J = m.alpha.size();
    const SegmentEmission e = segment_beam_emit(m, {}, {}, 0, J, o);
    // Greedy by hand.
    std::vector<int> greedy, reads;
    const bool start = o.force || m.beta(0, 0, J) >= 0.5;
    while (start && greedy.size() < 6) {
      const auto lp = m.logits(greedy, reads, static_cast<int>(J));
      int best = -1;
      for (int v = 0; v < scripted::kVocab; ++v) {
        if (v != model::kEos && v < model::kFirstSymbol) continue;
        if (best < 0 || lp[static_cast<std::size_t>(v)] > lp[static_cast<std::size_t>(best)]) best = v;
      }
      greedy.push_back(best);
      reads.push_back(static_cast<int>(J));
      if (best == model::kEos || (!o.force && m.beta(greedy.size(), 0, J) < 0.5)) break;
    }
    CHECK(e.tokens == greedy);
  }
}

TEST_CASE("beam five recovers the better two-token continuation") {
  scripted::Model m;
  m.alpha.assign(3, 0.0);
  m.beta = [](std::size_t i, std::size_t, std::size_t) { return i < 2 ? 1.0 : 0.0; };
  // First step: 4 (0.55) beats 5 (0.45). After 4 the mass is spread; after 5, 6 is near certain.
  m.logits = [](std::span<const int> prefix, std::span<const int>, int) {
    std::vector<double> p(scripted::kVocab, 1e-6);
    if (prefix.empty()) {
      p[4] = 0.55;
      p[5] = 0.45;
    } else if (prefix[0] == 4) {
      for (int v = 6; v < 10; ++v) p[static_cast<std::size_t>(v)] = 0.25;
    } else {
      p[6] = 0.95;
    }
    std::vector<double> lp;
    for (double v : p) lp.push_back(std::log(v));
    return lp;
  };
  for (std::size_t n = 1; n <= 3; ++n) m.read(n);
  // Exhaustive oracle over every length-two continuation.
  double best = -1e300;
  std::vector<int> best_pair;
  const auto first = m.logits({}, {}, 3);
  for (int a = 0; a < scripted::kVocab; ++a) {
    const std::vector<int> pre{a};
    const auto second = m.logits(pre, std::vector<int>{3}, 3);
    for (int b = 0; b < scripted::kVocab; ++b) {
      const double s = first[static_cast<std::size_t>(a)] + second[static_cast<std::size_t>(b)];
      if (s > best) {
        best = s;
        best_pair = {a, b};
      }
    }
  }
  REQUIRE(best_pair == std::vector<int>{5, 6});
  BeamOptions o;
  o.max_tokens = 8;
  o.beam_size = 1;
  CHECK(segment_beam_emit(m, {}, {}, 0, 3, o).tokens == std::vector<int>{4, 6});
  o.beam_size = 5;
  const SegmentEmission e = segment_beam_emit(m, {}, {}, 0, 3, o);
  CHECK(e.tokens == best_pair);
  CHECK(e.score == doctest::Approx(best / 2.0).epsilon(1e-12));
  o.beam_size = 0;
  CHECK_THROWS_AS(segment_beam_emit(m, {}, {}, 0, 3, o), std::invalid_argument);
}

TEST_CASE("segments that do not emit return nothing") {
  scripted::Model m;
  m.alpha.assign(2, 0.0);
  m.beta = [](std::size_t, std::size_t, std::size_t) { return 0.3; };
  m.logits = scripted::counting(3);
  m.read(1);
  BeamOptions o;
  o.beam_size = 4;
  const SegmentEmission e = segment_beam_emit(m, {}, {}, 0, 1, o);
  CHECK(e.tokens.empty());
  CHECK_FALSE(e.eos);
  CHECK(m.calls == 0);
}

TEST_CASE("per-segment cap and length limit are logged") {
  scripted::Model m;
  m.alpha.assign(3, 0.9);
  m.beta = [](std::size_t, std::size_t, std::size_t) { return 1.0; };
  m.logits = scripted::counting(1000);
  PolicyConfig cfg;
  cfg.segment_cap = 3;
  const StreamTrace tr = run_seg2seg(m, cfg);
  CHECK(validate_trace(tr).empty());
  CHECK(tr.truncated);
  CHECK(tr.hypothesis.size() == 2 * 3 + 16);
  CHECK(tr.cap_hits >= 2);
  cfg.max_target_len = 5;
  scripted::Model m2 = m;
  m2.last_read = 0;
  const StreamTrace short_tr = run_seg2seg(m2, cfg);
  CHECK(short_tr.hypothesis.size() == 5);
  CHECK(short_tr.truncated);
}

TEST_CASE("every policy produces valid, deterministic traces") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 200; ++trial) {
    const scripted::Model proto = random_model(rng);
    PolicyConfig cfg;
    cfg.kind = static_cast<PolicyKind>(trial % 4);
    cfg.k = 1 + static_cast<int>(rng() % 4);
    cfg.stride = static_cast<int>(rng() % 3) + (cfg.kind == PolicyKind::kWaitKStrideN ? 1 : 0);
    cfg.segment_length = 1 + static_cast<int>(rng() % 3);
    cfg.beam = 1 + static_cast<int>(rng() % 3);
    cfg.segment_cap = 1 + static_cast<int>(rng() % 5);
    scripted::Model a = proto, b = proto;
    const StreamTrace ta = run_policy(a, cfg), tb = run_policy(b, cfg);
    CHECK_MESSAGE(validate_trace(ta).empty(), validate_trace(ta));
    CHECK(ta == tb);
    std::istringstream in(trace_to_jsonl(ta));
    const auto back = read_traces_jsonl(in);
    REQUIRE(back.size() == 1);
    CHECK(back[0] == ta);
  }
}

TEST_CASE("policy config parsing and validation") {
  CHECK(parse_policy_kind("seg2seg") == PolicyKind::kSeg2Seg);
  CHECK(parse_policy_kind("waitk") == PolicyKind::kWaitK);
  for (PolicyKind k : {PolicyKind::kSeg2Seg, PolicyKind::kWaitK, PolicyKind::kFixedSegment, PolicyKind::kWaitKStrideN})
    CHECK(parse_policy_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_policy_kind("greedy"), std::invalid_argument);
  PolicyConfig c;
  c.beam = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = PolicyConfig{};
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = PolicyConfig{};
  c.segment_cap = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("trace jsonl errors") {
  scripted::Model m = scripted::three_segment_pattern();
  const std::string good = trace_to_jsonl(run_seg2seg(m, PolicyConfig{}));
  {
    std::istringstream in(good + good);
    CHECK(read_traces_jsonl(in).size() == 2);
  }
  {
    std::istringstream in("");
    CHECK(read_traces_jsonl(in).empty());
  }
  auto rejects = [](const std::string& text) {
    std::istringstream in(text);
    CHECK_THROWS_AS(read_traces_jsonl(in), std::invalid_argument);
  };
  rejects(good.substr(0, good.rfind("{\"boundaries\"")));  // no summary line
  rejects("{\"type\":\"read\",\"index\":1}\n{oops\n");
  rejects("{\"type\":\"jump\"}\n");
  rejects("{\"type\":\"read\",\"index\":2}\n{\"type\":\"write\",\"token\":\"<eos>\"}\n"
          "{\"type\":\"summary\",\"source_length\":3,\"t\":[],\"truncated\":false}\n");
  std::string wrong_t = good;
  wrong_t.replace(wrong_t.find("\"t\":[2,2,5,5,6]"), 15, "\"t\":[1,2,5,5,6]");
  rejects(wrong_t);
  CHECK(token_from_name(token_name(9)) == 9);
  CHECK(token_from_name("<eos>") == model::kEos);
  CHECK_THROWS_AS(token_from_name("x1"), std::invalid_argument);
}

TEST_CASE("network backend: wait-k with k = J equals offline greedy decoding") {
  model::ModelConfig c;
  c.src_vocab = c.tgt_vocab = 12;
  c.d = 8;
  c.heads = 2;
  c.ffn = 16;
  const model::Model net = model::Model::initialize(c, 44);
  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> symbols(2 + rng() % 4);
    for (int& s : symbols) s = static_cast<int>(rng() % 8);
    PolicyConfig cfg;
    cfg.kind = PolicyKind::kWaitK;
    cfg.k = static_cast<int>(symbols.size());
    cfg.max_target_len = 6;
    const StreamTrace tr = run_policy(net, symbols, cfg);
    CHECK(tr.hypothesis == offline_greedy(net, model::to_model_ids(symbols), 6));
    CHECK(validate_trace(tr).empty());
    cfg.kind = PolicyKind::kSeg2Seg;
    CHECK(validate_trace(run_policy(net, symbols, cfg)).empty());
  }
  CHECK_THROWS_AS(run_policy(net, std::vector<int>{9}, PolicyConfig{}), std::out_of_range);
  CHECK_THROWS_AS(run_policy(net, std::vector<int>{}, PolicyConfig{}), std::invalid_argument);
}
