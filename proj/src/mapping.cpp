#include "seg2seg/mapping.hpp"

#include <stdexcept>
#include <string>

namespace seg2seg::mapping {

namespace {

Tensor aggregation_forward(const Tensor& alpha) {
  const std::size_t n = alpha.size();
  Tensor p({n, n}, 0.0);
  p[0] = 1.0;
  for (std::size_t j = 1; j < n; ++j) {
    const double a = alpha[j - 1];
    for (std::size_t k = 0; k <= j; ++k) {
      const double stay = p[(j - 1) * n + k] * (1.0 - a);
      const double open = k > 0 ? p[(j - 1) * n + k - 1] * a : 0.0;
      p[j * n + k] = stay + open;
    }
  }
  return p;
}

// r is the reachability table: r[i][k] = mass that arrives at segment k
// still waiting to emit target i.
void emission_forward(const Tensor& beta, Tensor& p, Tensor& r) {
  const std::size_t rows = beta.dim(0), cols = beta.dim(1);
  p = Tensor({rows, cols}, 0.0);
  r = Tensor({rows, cols}, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < cols; ++k) {
      const double prev = i == 0 ? (k == 0 ? 1.0 : 0.0) : p[(i - 1) * cols + k];
      const double carried =
          k == 0 ? 0.0 : r[i * cols + k - 1] * (1.0 - beta[i * cols + k - 1]);
      r[i * cols + k] = carried + prev;
      p[i * cols + k] = beta[i * cols + k] * r[i * cols + k];
    }
  }
}

}  // namespace

AggregationPosterior aggregation_posterior(ad::Var alpha) {
  const Tensor& a = alpha.value();
  if (a.rank() != 1) {
    throw std::invalid_argument("aggregation_posterior: alpha must be rank-1, got " +
                                shape_str(a.shape()));
  }
  if (a.size() == 0) throw std::invalid_argument("aggregation_posterior: empty alpha");
  ad::Graph& g = *alpha.graph();
  Tensor p = aggregation_forward(a);
  const std::size_t n = a.size();
  const int ai = alpha.id();
  const int pi = static_cast<int>(g.size());
  const ad::Graph* gp = &g;
  ad::Var px = g.record(std::move(p), {ai}, [gp, ai, pi, n](const Tensor& go, std::span<Tensor*> gi) {
    const Tensor& a = gp->value(ai);
    const Tensor& p = gp->value(pi);
    Tensor G = go;  // adjoint of p, accumulated backwards over j
    Tensor& ga = *gi[0];
    for (std::size_t j = n; j-- > 1;) {
      const double aj = a[j - 1];
      for (std::size_t k = 0; k <= j; ++k) {
        const double gjk = G[j * n + k];
        if (gjk == 0.0) continue;
        G[(j - 1) * n + k] += gjk * (1.0 - aj);
        double d = -p[(j - 1) * n + k];
        if (k > 0) {
          G[(j - 1) * n + k - 1] += gjk * aj;
          d += p[(j - 1) * n + k - 1];
        }
        ga[j - 1] += gjk * d;
      }
    }
  });
  return {px, ad::cumsum(px, 1)};
}

ad::Var expected_segment_reps(ad::Var p_x, ad::Var states, ad::Var w_src_seg) {
  const Tensor& P = p_x.value();
  const Tensor& S = states.value();
  const Tensor& W = w_src_seg.value();
  if (P.rank() != 2 || S.rank() != 2 || P.dim(0) != S.dim(0)) {
    throw std::invalid_argument("expected_segment_reps: p_x " + shape_str(P.shape()) +
                                " incompatible with states " + shape_str(S.shape()));
  }
  if (W.rank() != 2 || W.dim(0) != S.dim(1)) {
    throw std::invalid_argument("expected_segment_reps: projection " + shape_str(W.shape()) +
                                " incompatible with states " + shape_str(S.shape()));
  }
  return ad::matmul(ad::matmul(ad::transpose(p_x), states), w_src_seg);
}

ad::Var force_final_emission(ad::Var beta) {
  const Tensor& B = beta.value();
  if (B.rank() != 2 || B.dim(1) == 0) {
    throw std::invalid_argument("force_final_emission: bad beta shape " + shape_str(B.shape()));
  }
  const std::size_t rows = B.dim(0), cols = B.dim(1);
  Tensor out = B;
  for (std::size_t i = 0; i < rows; ++i) out[i * cols + cols - 1] = 1.0;
  return beta.graph()->record(std::move(out), {beta.id()},
                              [rows, cols](const Tensor& go, std::span<Tensor*> gi) {
                                for (std::size_t i = 0; i < rows; ++i)
                                  for (std::size_t k = 0; k + 1 < cols; ++k)
                                    (*gi[0])[i * cols + k] += go[i * cols + k];
                              });
}

ad::Var emission_posterior(ad::Var beta) {
  const Tensor& B = beta.value();
  if (B.rank() != 2) {
    throw std::invalid_argument("emission_posterior: beta must be rank-2, got " +
                                shape_str(B.shape()));
  }
  if (B.dim(1) == 0) throw std::invalid_argument("emission_posterior: zero segments");
  Tensor p, r;
  emission_forward(B, p, r);
  const std::size_t rows = B.dim(0), cols = B.dim(1);
  const int bi = beta.id();
  const ad::Graph* gp = beta.graph();
  return beta.graph()->record(
      std::move(p), {bi},
      [gp, bi, rows, cols, r = std::move(r)](const Tensor& go, std::span<Tensor*> gi) {
        if (rows == 0) return;
        const Tensor& B = gp->value(bi);
        Tensor& gb = *gi[0];
        std::vector<double> gp_row(go.storage().end() - static_cast<std::ptrdiff_t>(cols),
                                   go.storage().end());
        std::vector<double> gr(cols);
        for (std::size_t i = rows; i-- > 0;) {
          // gp_row holds the full adjoint of p[i][*] at this point.
          for (std::size_t k = 0; k < cols; ++k) {
            gb[i * cols + k] += gp_row[k] * r[i * cols + k];
            gr[k] = gp_row[k] * B[i * cols + k];
          }
          for (std::size_t k = cols; k-- > 1;) {
            gr[k - 1] += gr[k] * (1.0 - B[i * cols + k - 1]);
            gb[i * cols + k - 1] -= gr[k] * r[i * cols + k - 1];
          }
          if (i == 0) break;
          for (std::size_t k = 0; k < cols; ++k) gp_row[k] = go[(i - 1) * cols + k] + gr[k];
        }
      });
}

ad::Var attention_mapping(ad::Var p_y, ad::Var f_x) {
  const Tensor& P = p_y.value();
  const Tensor& F = f_x.value();
  if (P.rank() != 2 || F.rank() != 2 || P.dim(1) != F.dim(1)) {
    throw std::invalid_argument("attention_mapping: p_y " + shape_str(P.shape()) +
                                " and f_x " + shape_str(F.shape()) + " disagree on segments");
  }
  return ad::matmul(p_y, ad::transpose(f_x));
}

HardSegmentation hard_segmentation(const std::vector<int>& a) {
  HardSegmentation out;
  out.segment_of.resize(a.size());
  std::size_t seg = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    out.segment_of[j] = seg;
    if (a[j] != 0) {
      out.boundaries.push_back(j + 1);
      ++seg;
    }
  }
  if (!a.empty() && (out.boundaries.empty() || out.boundaries.back() != a.size())) {
    out.boundaries.push_back(a.size());
  }
  return out;
}

std::vector<int> threshold(const std::vector<double>& probs) {
  std::vector<int> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= 0.5 ? 1 : 0;
  return out;
}

Tensor hard_source_posterior(const HardSegmentation& seg) {
  const std::size_t n = seg.segment_of.size();
  Tensor p({n, n}, 0.0);
  for (std::size_t j = 0; j < n; ++j) p[j * n + seg.segment_of[j]] = 1.0;
  return p;
}

Tensor hard_target_posterior(const std::vector<std::size_t>& emit_segment, std::size_t num_segments) {
  Tensor p({emit_segment.size(), num_segments}, 0.0);
  for (std::size_t i = 0; i < emit_segment.size(); ++i) {
    if (emit_segment[i] >= num_segments) {
      throw std::out_of_range("hard_target_posterior: segment " + std::to_string(emit_segment[i]) +
                              " >= " + std::to_string(num_segments));
    }
    p[i * num_segments + emit_segment[i]] = 1.0;
  }
  return p;
}

Tensor hard_mapping(const HardSegmentation& seg, const std::vector<std::size_t>& emit_segment) {
  const std::size_t rows = emit_segment.size(), cols = seg.segment_of.size();
  Tensor m({rows, cols}, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      m[i * cols + j] = seg.segment_of[j] <= emit_segment[i] ? 1.0 : 0.0;
  return m;
}

std::vector<std::size_t> hard_emission_segments(const Tensor& beta, std::size_t num_segments) {
  if (beta.rank() != 2 || num_segments == 0 || num_segments > beta.dim(1)) {
    throw std::invalid_argument("hard_emission_segments: bad beta shape " + shape_str(beta.shape()) +
                                " for " + std::to_string(num_segments) + " segments");
  }
  const std::size_t rows = beta.dim(0), cols = beta.dim(1);
  std::vector<std::size_t> out(rows);
  std::size_t k = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    while (k + 1 < num_segments && beta[i * cols + k] < 0.5) ++k;
    out[i] = k;
  }
  return out;
}

Tensor policy_mapping(const std::vector<double>& alpha, const Tensor& beta) {
  const HardSegmentation seg = hard_segmentation(threshold(alpha));
  return hard_mapping(seg, hard_emission_segments(beta, seg.count()));
}

ad::Var straight_through(ad::Var soft, const Tensor& hard) {
  if (soft.value().shape() != hard.shape()) {
    throw std::invalid_argument("straight_through: shape mismatch " + shape_str(soft.value().shape()) +
                                " vs " + shape_str(hard.shape()));
  }
  return soft.graph()->record(hard, {soft.id()}, [](const Tensor& go, std::span<Tensor*> gi) {
    auto& g = gi[0]->storage();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
  });
}

Tensor aggregation_posterior_values(const std::vector<double>& alpha) {
  if (alpha.empty()) throw std::invalid_argument("aggregation_posterior: empty alpha");
  return aggregation_forward(Tensor::vector(alpha));
}

Tensor emission_posterior_values(const Tensor& beta) {
  if (beta.rank() != 2 || beta.dim(1) == 0) {
    throw std::invalid_argument("emission_posterior: bad beta shape " + shape_str(beta.shape()));
  }
  Tensor p, r;
  emission_forward(beta, p, r);
  return p;
}

}  // namespace seg2seg::mapping
