// Python bindings. Matrices cross the boundary as lists of rows.

#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "seg2seg/checkpoint.hpp"
#include "seg2seg/config.hpp"
#include "seg2seg/losses.hpp"
#include "seg2seg/mapping.hpp"
#include "seg2seg/metrics.hpp"
#include "seg2seg/pipeline.hpp"
#include "seg2seg/policy.hpp"
#include "seg2seg/similarity.hpp"
#include "seg2seg/tasks.hpp"
#include "seg2seg/train.hpp"

namespace py = pybind11;
using namespace seg2seg;

namespace {

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Tensor& t) {
  Rows out(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) out[r][c] = t[r * t.dim(1) + c];
  return out;
}

Tensor from_rows(const Rows& rows) {
  const std::size_t n = rows.size(), m = n ? rows[0].size() : 0;
  Tensor t({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    if (rows[r].size() != m) throw std::invalid_argument("ragged matrix");
    for (std::size_t c = 0; c < m; ++c) t[r * m + c] = rows[r][c];
  }
  return t;
}

// p_x, f_x, p_y and M for given alpha [J] and beta [I, J]; the final beta
// column is forced to one.
py::dict soft_mapping(const std::vector<double>& alpha, const Rows& beta_rows) {
  ad::Graph g(false);
  const auto agg = mapping::aggregation_posterior(g.constant(Tensor::vector(alpha)));
  const Tensor beta = from_rows(beta_rows);
  if (beta.dim(1) != alpha.size()) throw std::invalid_argument("beta needs one column per source token");
  const ad::Var p_y = mapping::emission_posterior(mapping::force_final_emission(g.constant(beta)));
  const ad::Var m = mapping::attention_mapping(p_y, agg.f_x);
  py::dict d;
  d["p_x"] = to_rows(agg.p_x.value());
  d["f_x"] = to_rows(agg.f_x.value());
  d["p_y"] = to_rows(p_y.value());
  d["mapping"] = to_rows(m.value());
  return d;
}

}  // namespace

PYBIND11_MODULE(_seg2seg, m) {
  m.doc() = "Segment-to-segment simultaneous generation";

  py::register_exception<train::NonFiniteLoss>(m, "NonFiniteLoss", PyExc_RuntimeError);

  // mapping
  m.def("soft_mapping", &soft_mapping, py::arg("alpha"), py::arg("beta"));
  m.def(
      "hard_segmentation",
      [](const std::vector<int>& a) {
        const auto s = mapping::hard_segmentation(a);
        return py::make_tuple(s.segment_of, s.boundaries);
      },
      py::arg("a"), "(segment_of, boundaries) for binary aggregation decisions");
  m.def(
      "policy_mapping",
      [](const std::vector<double>& alpha, const Rows& beta) {
        return to_rows(mapping::policy_mapping(alpha, from_rows(beta)));
      },
      py::arg("alpha"), py::arg("beta"));

  // metrics
  m.def("average_lagging", [](const std::vector<int>& t, int J, int I) { return metrics::average_lagging(t, J, I); },
        py::arg("t"), py::arg("source_len"), py::arg("target_len"));
  m.def("consecutive_wait", [](const std::vector<int>& t, int J) { return metrics::consecutive_wait(t, J); },
        py::arg("t"), py::arg("source_len"));
  m.def("average_proportion",
        [](const std::vector<int>& t, int J, int I) { return metrics::average_proportion(t, J, I); }, py::arg("t"),
        py::arg("source_len"), py::arg("target_len"));
  m.def("differentiable_average_lagging",
        [](const std::vector<int>& t, int J, int I) { return metrics::differentiable_average_lagging(t, J, I); },
        py::arg("t"), py::arg("source_len"), py::arg("target_len"));
  m.def("mean_alignment_delay",
        [](const std::vector<int>& t, const std::vector<int>& gold) { return metrics::mean_alignment_delay(t, gold); },
        py::arg("t"), py::arg("gold"));
  m.def("r_value", &metrics::r_value, py::arg("precision"), py::arg("recall"));
  m.def(
      "segmentation_quality",
      [](const std::vector<int>& pred, const std::vector<int>& gold, int tol) {
        const auto s = metrics::segmentation_quality(pred, gold, tol);
        py::dict d;
        d["precision"] = s.precision;
        d["recall"] = s.recall;
        d["r_value"] = s.r_value;
        d["matched"] = s.matched;
        return d;
      },
      py::arg("predicted"), py::arg("gold"), py::arg("tolerance") = 0);
  m.def("emission_accuracy",
        [](const std::vector<int>& t, const std::vector<int>& a) { return metrics::emission_accuracy(t, a); },
        py::arg("t"), py::arg("alignment"));
  m.def("cosine_similarity",
        [](const std::vector<double>& a, const std::vector<double>& b) { return metrics::cosine_similarity(a, b); },
        py::arg("a"), py::arg("b"));

  // losses
  m.def("cw_kernel", &losses::cw_kernel, py::arg("source_len"), py::arg("target_len"), py::arg("lam"));

  // tasks
  py::class_<tasks::Example>(m, "Example")
      .def(py::init<>())
      .def_readwrite("source", &tasks::Example::source)
      .def_readwrite("target", &tasks::Example::target)
      .def_readwrite("alignment", &tasks::Example::alignment)
      .def_readwrite("boundaries", &tasks::Example::boundaries)
      .def("to_json", [](const tasks::Example& e) { return tasks::to_json_line(e); })
      .def_static("from_json", &tasks::from_json_line)
      .def(py::self == py::self)
      .def("__repr__", [](const tasks::Example& e) { return "Example(" + tasks::to_json_line(e) + ")"; });
  m.def(
      "generate",
      [](const std::string& kind, std::size_t count, std::uint64_t seed, int vocab, int min_len, int max_len) {
        tasks::TaskSpec s;
        s.kind = tasks::parse_task_kind(kind);
        s.seed = seed;
        s.vocab = vocab;
        s.min_len = min_len;
        s.max_len = max_len;
        return tasks::generate(s, count);
      },
      py::arg("kind"), py::arg("count"), py::arg("seed") = 1, py::arg("vocab") = 16, py::arg("min_len") = 5,
      py::arg("max_len") = 15);
  m.def("apply_rule",
        [](const std::string& kind, const std::vector<int>& src, int vocab) {
          return tasks::apply_rule(tasks::parse_task_kind(kind), src, vocab);
        },
        py::arg("kind"), py::arg("source"), py::arg("vocab") = 16);
  m.def("validate_example", &tasks::validate_example);
  m.def("save_jsonl", &tasks::save_jsonl);
  m.def("load_jsonl", &tasks::load_jsonl);

  // model
  py::class_<model::ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("src_vocab", &model::ModelConfig::src_vocab)
      .def_readwrite("tgt_vocab", &model::ModelConfig::tgt_vocab)
      .def_readwrite("d", &model::ModelConfig::d)
      .def_readwrite("enc_layers", &model::ModelConfig::enc_layers)
      .def_readwrite("dec_layers", &model::ModelConfig::dec_layers)
      .def_readwrite("heads", &model::ModelConfig::heads)
      .def_readwrite("ffn", &model::ModelConfig::ffn)
      .def("validate", &model::ModelConfig::validate);
  py::class_<model::Model>(m, "Model")
      .def_static("initialize", &model::Model::initialize, py::arg("config"), py::arg("seed") = 1)
      .def_property_readonly("config", &model::Model::config)
      .def("parameter_count",
           [](const model::Model& mm) {
             std::size_t n = 0;
             for (const auto& [name, t] : mm.params()) n += t.size();
             return n;
           })
      .def("save", [](const model::Model& mm, const std::string& path) { checkpoint::save(path, mm); })
      .def_static("load", py::overload_cast<const std::string&>(&checkpoint::load));

  // policy
  py::class_<policy::PolicyConfig>(m, "PolicyConfig")
      .def(py::init([](const std::string& kind, int k, int stride, int segment_length, int beam) {
             policy::PolicyConfig c;
             c.kind = policy::parse_policy_kind(kind);
             c.k = k;
             c.stride = stride;
             c.segment_length = segment_length;
             c.beam = beam;
             c.validate();
             return c;
           }),
           py::arg("kind") = "seg2seg", py::arg("k") = 3, py::arg("stride") = 2, py::arg("segment_length") = 2,
           py::arg("beam") = 1)
      .def_property_readonly("kind", [](const policy::PolicyConfig& c) { return policy::to_string(c.kind); })
      .def_readwrite("k", &policy::PolicyConfig::k)
      .def_readwrite("beam", &policy::PolicyConfig::beam)
      .def_readwrite("max_target_len", &policy::PolicyConfig::max_target_len)
      .def_readwrite("segment_cap", &policy::PolicyConfig::segment_cap);
  py::class_<policy::StreamTrace>(m, "StreamTrace")
      .def_readonly("source_length", &policy::StreamTrace::source_length)
      .def_readonly("t", &policy::StreamTrace::t)
      .def_readonly("boundaries", &policy::StreamTrace::boundaries)
      .def_readonly("truncated", &policy::StreamTrace::truncated)
      .def_property_readonly("hypothesis",
                             [](const policy::StreamTrace& tr) { return model::to_symbols(tr.hypothesis); })
      .def("to_jsonl", &policy::trace_to_jsonl)
      .def("validate", &policy::validate_trace);
  m.def(
      "run_policy",
      [](const model::Model& mm, const std::vector<int>& source, const policy::PolicyConfig& c) {
        return policy::run_policy(mm, source, c);
      },
      py::arg("model"), py::arg("source"), py::arg("config") = policy::PolicyConfig{});

  // training
  m.def(
      "train",
      [](const model::Model& init, const std::vector<tasks::Example>& data, int steps, double lam, double lr,
         int batch, std::uint64_t seed) {
        train::TrainConfig c;
        c.steps = steps;
        c.loss.lambda = lam;
        c.lr = lr;
        c.batch = batch;
        c.seed = seed;
        c.eval_every = 0;
        py::gil_scoped_release release;
        return train::train(init, data, {}, c).model;
      },
      py::arg("model"), py::arg("data"), py::arg("steps") = 3000, py::arg("lam") = 0.3, py::arg("lr") = 0.02,
      py::arg("batch") = 32, py::arg("seed") = 1);

  // corpus evaluation
  m.def(
      "evaluate",
      [](const model::Model& mm, const std::vector<tasks::Example>& examples, const policy::PolicyConfig& c) {
        const auto traces = pipeline::simulate(mm, examples, c);
        std::vector<pipeline::Hypothesis> hyps;
        for (std::size_t i = 0; i < traces.size(); ++i) hyps.push_back(pipeline::hypothesis_of(i, traces[i]));
        return pipeline::report_json(pipeline::evaluate(traces, hyps, examples));
      },
      py::arg("model"), py::arg("examples"), py::arg("config") = policy::PolicyConfig{},
      "JSON report with corpus means and per-example rows");
  m.def(
      "similarity_report",
      [](const model::Model& mm, const std::vector<tasks::Example>& examples, const std::string& rep) {
        return similarity::to_json(
            similarity::representation_similarity(mm, examples, {}, similarity::parse_target_rep(rep)), false);
      },
      py::arg("model"), py::arg("examples"), py::arg("target_rep") = "emission_query");
}
