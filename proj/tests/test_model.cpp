#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "seg2seg/checkpoint.hpp"
#include "seg2seg/model.hpp"
#include "test_util.hpp"

using namespace seg2seg;
using namespace seg2seg::model;
using testutil::max_abs_diff;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.src_vocab = c.tgt_vocab = 12;
  c.d = 8;
  c.heads = 2;
  c.ffn = 16;
  c.enc_layers = c.dec_layers = 2;
  return c;
}

std::vector<int> random_ids(std::size_t n, int vocab, std::mt19937_64& rng) {
  std::vector<int> v(n);
  for (int& x : v) x = kFirstSymbol + static_cast<int>(rng() % static_cast<unsigned>(vocab - kFirstSymbol));
  return v;
}

Tensor encode_all(const Model& m, const std::vector<int>& ids) {
  ad::Graph g(false);
  Forward f(m.config(), m.params(), g);
  return f.encode(ids).value();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("seg2seg_test_" + name)).string();
}

}  // namespace

TEST_CASE("prefix encodings equal the restricted full encoding") {
  const Model m = Model::initialize(tiny(), 3);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ids = random_ids(1 + rng() % 12, 12, rng);
    const Tensor full = encode_all(m, ids);
    const std::size_t j = 1 + rng() % ids.size();
    const Tensor prefix = encode_all(m, std::vector<int>(ids.begin(), ids.begin() + static_cast<long>(j)));
    const std::size_t d = 8;
    double diff = 0.0;
    for (std::size_t i = 0; i < j * d; ++i) diff = std::max(diff, std::abs(prefix[i] - full[i]));
    CHECK(diff <= 1e-12);
  }
}

TEST_CASE("changing later tokens leaves earlier states untouched") {
  const Model m = Model::initialize(tiny(), 5);
  std::vector<int> a{4, 5, 6, 7, 8}, b{4, 5, 6, 11, 9};
  const Tensor sa = encode_all(m, a), sb = encode_all(m, b);
  for (std::size_t i = 0; i < 3 * 8; ++i) CHECK(sa[i] == sb[i]);
  CHECK(sa.shape() == Shape{5, 8});
  CHECK(encode_all(m, {4}).shape() == Shape{1, 8});
}

TEST_CASE("encoder rejects empty and out-of-vocabulary input") {
  const Model m = Model::initialize(tiny(), 5);
  ad::Graph g(false);
  Forward f(m.config(), m.params(), g);
  CHECK_THROWS_AS(f.encode(std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(f.encode(std::vector<int>{4, 12}), std::out_of_range);
  CHECK_THROWS_AS(f.target_inputs(std::vector<int>{-1}), std::out_of_range);
}

TEST_CASE("zero aggregation weights give alpha = 0.5") {
  Model m = Model::initialize(tiny(), 6);
  for (const char* n : {"agg.w1", "agg.b1", "agg.w2", "agg.b2"})
    for (double& v : m.params().at(n).storage()) v = 0.0;
  ad::Graph g(false);
  Forward f(m.config(), m.params(), g);
  const Tensor alpha = f.aggregation_head(f.encode(std::vector<int>{4, 5, 6})).value();
  CHECK(alpha.shape() == Shape{3});
  for (double a : alpha.storage()) CHECK(a == 0.5);
}

TEST_CASE("emission head: orthogonal vectors give 0.5 and logits scale quadratically") {
  ModelConfig c = tiny();
  Model m = Model::initialize(c, 7);
  Tensor& w = m.params().at("w_tgt_seg");
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) w.at(i, j) = i == j ? 1.0 : 0.0;
  ad::Graph g(false);
  Forward f(m.config(), m.params(), g);
  Tensor q({1, 8}, 0.0), s({2, 8}, 0.0);
  q.at(0, 0) = 1.0;
  s.at(0, 1) = 1.0;   // orthogonal
  s.at(1, 0) = 0.7;   // aligned
  const Tensor beta = f.emission_head(g.constant(q), g.constant(s)).value();
  CHECK(beta.shape() == Shape{1, 2});
  CHECK(beta.at(0, 0) == 0.5);
  auto logit = [](double p) { return std::log(p / (1 - p)); };
  Tensor q3 = q, s3 = s;
  for (double& v : q3.storage()) v *= 3.0;
  for (double& v : s3.storage()) v *= 3.0;
  const Tensor beta3 = f.emission_head(g.constant(q3), g.constant(s3)).value();
  CHECK(logit(beta3.at(0, 1)) == doctest::Approx(9.0 * logit(beta.at(0, 1))).epsilon(1e-9));
  CHECK_THROWS_AS(f.emission_head(g.constant(Tensor({1, 4})), g.constant(s)), std::invalid_argument);
}

TEST_CASE("decoder output rows are distributions and masked sources are ignored") {
  const Model m = Model::initialize(tiny(), 8);
  const std::vector<int> src{4, 5, 6, 7}, dec{kBos, 8, 9};
  ad::Graph g(false);
  Forward f(m.config(), m.params(), g);
  Tensor states = f.encode(src).value();
  ad::Var tgt = f.target_inputs(dec);
  Tensor mask({3, 4}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) mask.at(i, 0) = 1.0;
  const Tensor p1 = f.decode(tgt, g.constant(states), g.constant(mask)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t v = 0; v < 12; ++v) s += p1.at(i, v);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  // With only x_1 admitted, perturbing the other states changes nothing as long
  // as the admitted attention mass stays above kRenormFloor.
  for (std::size_t c = 8; c < states.size(); ++c) states[c] += 0.1 * static_cast<double>(c % 3);
  const Tensor p2 = f.decode(tgt, g.constant(states), g.constant(mask)).value();
  CHECK(max_abs_diff(p1, p2) == 0.0);
  mask.at(1, 0) = 0.0;
  CHECK_THROWS_AS(f.decode(tgt, g.constant(states), g.constant(mask)), std::invalid_argument);
  CHECK_THROWS_AS(f.decode(tgt, g.constant(states), g.constant(Tensor({2, 4}, 1.0))), std::invalid_argument);
}

TEST_CASE("uniformly scaled mapping leaves the decoder unchanged") {
  // Renormalisation removes a common factor as long as the admitted mass stays above the floor.
  const Model m = Model::initialize(tiny(), 9);
  ad::Graph g(false);
  Forward f(m.config(), m.params(), g);
  ad::Var states = f.encode(std::vector<int>{4, 5, 6});
  ad::Var tgt = f.target_inputs(std::vector<int>{kBos, 7});
  const Tensor a = f.decode(tgt, states, g.constant(Tensor({2, 3}, 1.0))).value();
  const Tensor b = f.decode(tgt, states, g.constant(Tensor({2, 3}, 0.6))).value();
  CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("decoder is causal over the target prefix") {
  const Model m = Model::initialize(tiny(), 10);
  ad::Graph g(false);
  Forward f(m.config(), m.params(), g);
  ad::Var states = f.encode(std::vector<int>{4, 5, 6});
  ad::Var mask = g.constant(Tensor({3, 3}, 1.0));
  const Tensor a = f.decode(f.target_inputs(std::vector<int>{kBos, 7, 8}), states, mask).value();
  const Tensor b = f.decode(f.target_inputs(std::vector<int>{kBos, 7, 10}), states, mask).value();
  for (std::size_t c = 0; c < 2 * 12; ++c) CHECK(a[c] == b[c]);
}

TEST_CASE("initialisation is seeded and validated") {
  CHECK(Model::initialize(tiny(), 1).params() == Model::initialize(tiny(), 1).params());
  CHECK_FALSE(Model::initialize(tiny(), 1).params() == Model::initialize(tiny(), 2).params());
  ModelConfig bad = tiny();
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  ad::ParamMap p = Model::initialize(tiny(), 1).params();
  p.at("out.b")[0] = std::nan("");
  CHECK_THROWS_AS(Model(tiny(), p), std::invalid_argument);
  p.erase("out.b");
  CHECK_THROWS_AS(Model(tiny(), p), std::invalid_argument);
}

TEST_CASE("dropout-free forward passes are deterministic") {
  const Model m = Model::initialize(tiny(), 11);
  const std::vector<int> ids{4, 9, 6};
  CHECK(encode_all(m, ids) == encode_all(m, ids));
}

TEST_CASE("symbol conversion shifts by the special ids") {
  CHECK(to_model_ids(std::vector<int>{0, 3}) == std::vector<int>{4, 7});
  CHECK(to_symbols(std::vector<int>{kEos, 4, 9}) == std::vector<int>{-1, 0, 5});
}

TEST_CASE("checkpoint round trip preserves every parameter bit") {
  const Model m = Model::initialize(tiny(), 12);
  const std::string path = temp_path("roundtrip.s2sg");
  checkpoint::save(path, m);
  const Model back = checkpoint::load(path);
  CHECK(back.config() == m.config());
  CHECK(back.params() == m.params());
  CHECK(checkpoint::load(path, tiny()).params() == m.params());
  ModelConfig other = tiny();
  other.ffn = 32;
  CHECK_THROWS_AS(checkpoint::load(path, other), std::runtime_error);

  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "S2SG");
  CHECK(bytes[4] == 1);  // little-endian version 1
  std::filesystem::remove(path);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const Model m = Model::initialize(tiny(), 13);
  const std::string path = temp_path("corrupt.s2sg");
  checkpoint::save(path, m);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };
  write(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(checkpoint::load(path), std::runtime_error);
  std::string bad = bytes;
  bad[0] = 'X';
  write(bad);
  CHECK_THROWS_AS(checkpoint::load(path), std::runtime_error);
  bad = bytes;
  bad[4] = 9;
  write(bad);
  CHECK_THROWS_AS(checkpoint::load(path), std::runtime_error);
  CHECK_THROWS_AS(checkpoint::load(temp_path("missing.s2sg")), std::runtime_error);
  std::filesystem::remove(path);
}
