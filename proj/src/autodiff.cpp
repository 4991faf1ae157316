#include "seg2seg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace seg2seg::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an unbound Var");
  return *a.graph();
}

Graph& graph_of(Var a, Var b) {
  Graph& g = graph_of(a);
  if (b.graph() != &g) throw std::invalid_argument("operands belong to different graphs");
  return g;
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                shape_str(t.shape()));
  }
}

void reject_nan(const char* op, const Tensor& t) {
  for (double v : t.storage()) {
    if (std::isnan(v)) throw NumericalError(std::string(op) + ": NaN input");
  }
}

template <class F>
Var unary(Var x, F&& f, std::function<double(double, double)> dfdx_given_xy) {
  Graph& g = graph_of(x);
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const int xi = x.id();
  const Graph* gp = &g;
  return g.record(std::move(out), {xi},
                  [gp, xi, d = std::move(dfdx_given_xy)](const Tensor& go, std::span<Tensor*> gi) {
                    const Tensor& xin = gp->value(xi);
                    Tensor& acc = *gi[0];
                    for (std::size_t i = 0; i < go.size(); ++i) acc[i] += go[i] * d(xin[i], 0.0);
                  });
}

}  // namespace

const Tensor& Var::value() const {
  if (!graph_) throw std::invalid_argument("value() on an unbound Var");
  return graph_->value(id_);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::parameter(const std::string& name, const Tensor& value) {
  if (auto it = param_index_.find(name); it != param_index_.end()) {
    return Var(this, it->second);
  }
  Node n;
  n.external = &value;
  n.param_name = name;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_index_.emplace(name, id);
  return Var(this, id);
}

Var Graph::record(Tensor value, std::vector<int> parents, BackwardFn backward) {
  for (int p : parents) {
    if (p < 0 || p >= static_cast<int>(nodes_.size())) {
      throw std::invalid_argument("record: parent id out of range");
    }
  }
  Node n;
  n.owned = std::move(value);
  if (record_) {
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Graph::value(int id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  return n.external ? *n.external : n.owned;
}

Gradients Graph::backward(Var loss) const {
  if (loss.graph() != this) throw std::invalid_argument("backward: loss from another graph");
  if (!record_) throw std::logic_error("backward: graph was built without recording");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(lv.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.id())] = Tensor(lv.shape(), 1.0);
  Gradients out;
  std::vector<Tensor*> parent_grads;
  for (int i = loss.id(); i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    if (grads[ui].size() == 0 && value(i).size() != 0) continue;
    const Node& n = nodes_[ui];
    if (!n.param_name.empty()) {
      auto [it, inserted] = out.try_emplace(n.param_name, grads[ui]);
      if (!inserted) {
        for (std::size_t k = 0; k < grads[ui].size(); ++k) it->second[k] += grads[ui][k];
      }
      continue;
    }
    if (!n.backward) continue;
    parent_grads.clear();
    for (int p : n.parents) {
      auto& pg = grads[static_cast<std::size_t>(p)];
      if (pg.size() == 0 && value(p).size() != 0) pg = Tensor(value(p).shape(), 0.0);
      parent_grads.push_back(&pg);
    }
    n.backward(grads[ui], parent_grads);
    // Free intermediate gradient storage once consumed.
    grads[ui] = Tensor();
  }
  // Parameters untouched by the loss still get a zero gradient.
  for (const auto& [name, id] : param_index_) {
    out.try_emplace(name, Tensor(value(id).shape(), 0.0));
  }
  return out;
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2("matmul", A);
  require_rank2("matmul", B);
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
  if (B.dim(0) != k) shape_error("matmul", A.shape(), B.shape());
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = &B[p * m];
      double* orow = &out[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  const int ai = a.id(), bi = b.id();
  const Graph* gp = &g;
  return g.record(std::move(out), {ai, bi},
                  [gp, ai, bi, n, k, m](const Tensor& go, std::span<Tensor*> gi) {
                    const Tensor& A = gp->value(ai);
                    const Tensor& B = gp->value(bi);
                    Tensor& gA = *gi[0];
                    Tensor& gB = *gi[1];
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double av = A[i * k + p];
                        for (std::size_t j = 0; j < m; ++j) {
                          const double gov = go[i * m + j];
                          s += gov * B[p * m + j];
                          gB[p * m + j] += av * gov;
                        }
                        gA[i * k + p] += s;
                      }
                    }
                  });
}

namespace {

enum class Binary { kAdd, kSub, kMul, kMin, kMax };

Var binary(Var a, Var b, Binary op, const char* name) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_error(name, A.shape(), B.shape());
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    switch (op) {
      case Binary::kAdd: out[i] = A[i] + B[i]; break;
      case Binary::kSub: out[i] = A[i] - B[i]; break;
      case Binary::kMul: out[i] = A[i] * B[i]; break;
      case Binary::kMin: out[i] = B[i] < A[i] ? B[i] : A[i]; break;
      case Binary::kMax: out[i] = B[i] > A[i] ? B[i] : A[i]; break;
    }
  }
  const int ai = a.id(), bi = b.id();
  const Graph* gp = &g;
  return g.record(std::move(out), {ai, bi}, [gp, ai, bi, op](const Tensor& go, std::span<Tensor*> gi) {
    Tensor& gA = *gi[0];
    Tensor& gB = *gi[1];
    switch (op) {
      case Binary::kAdd:
        for (std::size_t i = 0; i < go.size(); ++i) {
          gA[i] += go[i];
          gB[i] += go[i];
        }
        break;
      case Binary::kSub:
        for (std::size_t i = 0; i < go.size(); ++i) {
          gA[i] += go[i];
          gB[i] -= go[i];
        }
        break;
      case Binary::kMul: {
        const Tensor& A = gp->value(ai);
        const Tensor& B = gp->value(bi);
        for (std::size_t i = 0; i < go.size(); ++i) {
          gA[i] += go[i] * B[i];
          gB[i] += go[i] * A[i];
        }
        break;
      }
      case Binary::kMin:
      case Binary::kMax: {
        const Tensor& A = gp->value(ai);
        const Tensor& B = gp->value(bi);
        for (std::size_t i = 0; i < go.size(); ++i) {
          const bool pick_b = op == Binary::kMin ? B[i] < A[i] : B[i] > A[i];
          (pick_b ? gB : gA)[i] += go[i];
        }
        break;
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, Binary::kAdd, "add"); }
Var sub(Var a, Var b) { return binary(a, b, Binary::kSub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, Binary::kMul, "mul"); }
Var minimum(Var a, Var b) { return binary(a, b, Binary::kMin, "minimum"); }
Var maximum(Var a, Var b) { return binary(a, b, Binary::kMax, "maximum"); }

Var add_bias(Var x, Var bias) {
  Graph& g = graph_of(x, bias);
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  require_rank2("add_bias", X);
  if (B.rank() != 1 || B.dim(0) != X.dim(1)) shape_error("add_bias", X.shape(), B.shape());
  const std::size_t n = X.dim(0), m = X.dim(1);
  Tensor out = X;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += B[j];
  return g.record(std::move(out), {x.id(), bias.id()}, [n, m](const Tensor& go, std::span<Tensor*> gi) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        (*gi[0])[i * m + j] += go[i * m + j];
        (*gi[1])[j] += go[i * m + j];
      }
    }
  });
}

Var scale(Var x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(Var x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var x) {
  reject_nan("sigmoid", x.value());
  auto s = [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(x, s, [s](double v, double) {
    const double y = s(v);
    return y * (1.0 - y);
  });
}

Var gelu(Var x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  auto f = [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); };
  auto df = [](double v, double) {
    const double u = c * (v + 0.044715 * v * v * v);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
    return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
  };
  return unary(x, f, df);
}

Var log(Var x) {
  for (double v : x.value().storage()) {
    if (!(v > 0.0)) throw std::invalid_argument("log: non-positive input");
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var masked_softmax(Var x, const std::vector<std::uint8_t>& mask) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  reject_nan("softmax", X);
  if (mask.size() != X.size()) {
    throw std::invalid_argument("softmax: mask of " + std::to_string(mask.size()) +
                                " entries for input " + shape_str(X.shape()));
  }
  const std::size_t m = X.rank() == 0 ? 1 : X.shape().back();
  const std::size_t n = m ? X.size() / m : 0;
  Tensor out(X.shape(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (mask[r * m + j]) mx = std::max(mx, X[r * m + j]);
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax: row with every entry masked");
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask[r * m + j]) continue;
      out[r * m + j] = std::exp(X[r * m + j] - mx);
      z += out[r * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] /= z;
  }
  const int oi = static_cast<int>(g.size());  // id this node will get
  const Graph* gp = &g;
  return g.record(std::move(out), {x.id()}, [gp, oi, n, m](const Tensor& go, std::span<Tensor*> gi) {
    const Tensor& Y = gp->value(oi);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += go[r * m + j] * Y[r * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        (*gi[0])[r * m + j] += Y[r * m + j] * (go[r * m + j] - dot);
      }
    }
  });
}

Var softmax(Var x) {
  return masked_softmax(x, std::vector<std::uint8_t>(x.value().size(), 1));
}

Var row_normalize(Var x, double floor) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), m = X.cols();
  Tensor out = X;
  std::vector<double> denom(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += X[r * m + j];
    denom[r] = std::max(s, floor);
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] /= denom[r];
  }
  const int xi = x.id();
  const Graph* gp = &g;
  return g.record(std::move(out), {xi},
                  [gp, xi, n, m, floor, denom](const Tensor& go, std::span<Tensor*> gi) {
                    const Tensor& X = gp->value(xi);
                    for (std::size_t r = 0; r < n; ++r) {
                      const double s = denom[r];
                      double corr = 0.0;
                      // d/dx of the row sum only matters when the floor is inactive.
                      double raw = 0.0;
                      for (std::size_t j = 0; j < m; ++j) raw += X[r * m + j];
                      if (raw > floor) {
                        for (std::size_t j = 0; j < m; ++j) corr += go[r * m + j] * X[r * m + j];
                        corr /= s * s;
                      }
                      for (std::size_t j = 0; j < m; ++j) {
                        (*gi[0])[r * m + j] += go[r * m + j] / s - corr;
                      }
                    }
                  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x, gain);
  graph_of(x, bias);
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), d = X.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    shape_error("layer_norm", X.shape(), gain.value().shape());
  }
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  Tensor out(X.shape());
  Tensor xhat(X.shape());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += X[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (X[r * d + j] - mu) * (X[r * d + j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (X[r * d + j] - mu) * inv_std[r];
      out[r * d + j] = G[j] * xhat[r * d + j] + B[j];
    }
  }
  const int gi_id = gain.id();
  const Graph* gp = &g;
  return g.record(std::move(out), {x.id(), gain.id(), bias.id()},
                  [gp, gi_id, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      const Tensor& go, std::span<Tensor*> gi) {
                    const Tensor& G = gp->value(gi_id);
                    const double dd = static_cast<double>(d);
                    for (std::size_t r = 0; r < n; ++r) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gxh = go[r * d + j] * G[j];
                        s1 += gxh;
                        s2 += gxh * xhat[r * d + j];
                        (*gi[1])[j] += go[r * d + j] * xhat[r * d + j];
                        (*gi[2])[j] += go[r * d + j];
                      }
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gxh = go[r * d + j] * G[j];
                        (*gi[0])[r * d + j] +=
                            inv_std[r] * (gxh - s1 / dd - xhat[r * d + j] * s2 / dd);
                      }
                    }
                  });
}

Var embedding(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table);
  const Tensor& T = table.value();
  require_rank2("embedding", T);
  const std::size_t v = T.dim(0), d = T.dim(1);
  Tensor out({ids.size(), d});
  std::vector<int> idv(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(idv[i]) +
                              " outside vocabulary of " + std::to_string(v));
    }
    std::copy_n(&T[static_cast<std::size_t>(idv[i]) * d], d, &out[i * d]);
  }
  return g.record(std::move(out), {table.id()}, [idv, d](const Tensor& go, std::span<Tensor*> gi) {
    for (std::size_t i = 0; i < idv.size(); ++i) {
      const std::size_t row = static_cast<std::size_t>(idv[i]);
      for (std::size_t j = 0; j < d; ++j) (*gi[0])[row * d + j] += go[i * d + j];
    }
  });
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> m(X.size());
  for (auto& v : m) v = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * m[i];
  return g.record(std::move(out), {x.id()}, [m = std::move(m)](const Tensor& go, std::span<Tensor*> gi) {
    for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i] * m[i];
  });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  double s = 0.0;
  for (double v : x.value().storage()) s += v;
  return g.record(Tensor::scalar(s), {x.id()}, [](const Tensor& go, std::span<Tensor*> gi) {
    for (auto& v : gi[0]->storage()) v += go[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_axis(Var x, std::size_t axis) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank2("sum_axis", X);
  if (axis > 1) throw std::invalid_argument("sum_axis: axis out of range");
  const std::size_t n = X.dim(0), m = X.dim(1);
  Tensor out({axis == 0 ? m : n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[axis == 0 ? j : i] += X[i * m + j];
  return g.record(std::move(out), {x.id()}, [n, m, axis](const Tensor& go, std::span<Tensor*> gi) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) (*gi[0])[i * m + j] += go[axis == 0 ? j : i];
  });
}

Var cumsum(Var x, std::size_t axis) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  std::size_t n = 1, m = 0;
  if (X.rank() == 1 && axis == 0) {
    n = 1;
    m = X.dim(0);
    axis = 1;  // treat as a single row
  } else if (X.rank() == 2 && axis < 2) {
    n = X.dim(0);
    m = X.dim(1);
  } else {
    throw std::invalid_argument("cumsum: unsupported axis " + std::to_string(axis) + " for " +
                                shape_str(X.shape()));
  }
  Tensor out(X.shape());
  if (axis == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] = (s += X[i * m + j]);
    }
  } else {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) out[i * m + j] = (s += X[i * m + j]);
    }
  }
  return g.record(std::move(out), {x.id()}, [n, m, axis](const Tensor& go, std::span<Tensor*> gi) {
    // Reverse cumulative sum of the incoming gradient.
    if (axis == 1) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = m; j-- > 0;) (*gi[0])[i * m + j] += (s += go[i * m + j]);
      }
    } else {
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t i = n; i-- > 0;) (*gi[0])[i * m + j] += (s += go[i * m + j]);
      }
    }
  });
}

Var max_pool(Var x, std::size_t kernel) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  if (X.rank() != 1) throw std::invalid_argument("max_pool: expected rank-1 input");
  if (kernel == 0) throw std::invalid_argument("max_pool: kernel must be >= 1");
  const std::size_t n = X.dim(0);
  const std::size_t windows = (n + kernel - 1) / kernel;
  Tensor out({windows});
  std::vector<std::size_t> arg(windows);
  for (std::size_t w = 0; w < windows; ++w) {
    std::size_t best = w * kernel;
    for (std::size_t i = best + 1; i < std::min(n, (w + 1) * kernel); ++i) {
      if (X[i] > X[best]) best = i;
    }
    arg[w] = best;
    out[w] = X[best];
  }
  return g.record(std::move(out), {x.id()}, [arg = std::move(arg)](const Tensor& go, std::span<Tensor*> gi) {
    for (std::size_t w = 0; w < arg.size(); ++w) (*gi[0])[arg[w]] += go[w];
  });
}

Var l2_norm(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  double s = 0.0;
  for (double v : X.storage()) s += v * v;
  const double norm = std::sqrt(s);
  const int xi = x.id();
  const Graph* gp = &g;
  return g.record(Tensor::scalar(norm), {xi}, [gp, xi, norm](const Tensor& go, std::span<Tensor*> gi) {
    if (norm == 0.0) return;  // subgradient 0
    const Tensor& X = gp->value(xi);
    for (std::size_t i = 0; i < X.size(); ++i) (*gi[0])[i] += go[0] * X[i] / norm;
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Graph& g = graph_of(parts[0]);
  const Tensor& first = parts[0].value();
  std::vector<int> ids;
  if (first.rank() == 1) {
    if (axis != 0) throw std::invalid_argument("concat: axis out of range for rank-1");
    std::vector<double> data;
    std::vector<std::size_t> sizes;
    for (Var p : parts) {
      graph_of(parts[0], p);
      const Tensor& t = p.value();
      if (t.rank() != 1) shape_error("concat", first.shape(), t.shape());
      data.insert(data.end(), t.storage().begin(), t.storage().end());
      sizes.push_back(t.size());
      ids.push_back(p.id());
    }
    return g.record(Tensor::vector(std::move(data)), std::move(ids),
                    [sizes](const Tensor& go, std::span<Tensor*> gi) {
                      std::size_t off = 0;
                      for (std::size_t p = 0; p < sizes.size(); ++p) {
                        for (std::size_t i = 0; i < sizes[p]; ++i) (*gi[p])[i] += go[off + i];
                        off += sizes[p];
                      }
                    });
  }
  require_rank2("concat", first);
  if (axis > 1) throw std::invalid_argument("concat: axis out of range");
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (Var p : parts) {
    graph_of(parts[0], p);
    const Tensor& t = p.value();
    if (t.rank() != 2 || t.dim(1 - axis) != first.dim(1 - axis)) {
      shape_error("concat", first.shape(), t.shape());
    }
    extents.push_back(t.dim(axis));
    total += t.dim(axis);
    ids.push_back(p.id());
  }
  const std::size_t other = first.dim(1 - axis);
  const std::size_t rows = axis == 0 ? total : other;
  const std::size_t cols = axis == 0 ? other : total;
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p].value();
    for (std::size_t i = 0; i < t.dim(0); ++i)
      for (std::size_t j = 0; j < t.dim(1); ++j) {
        const std::size_t r = axis == 0 ? off + i : i;
        const std::size_t c = axis == 0 ? j : off + j;
        out[r * cols + c] = t[i * t.dim(1) + j];
      }
    off += extents[p];
  }
  return g.record(std::move(out), std::move(ids),
                  [extents, other, axis, cols](const Tensor& go, std::span<Tensor*> gi) {
                    std::size_t off = 0;
                    for (std::size_t p = 0; p < extents.size(); ++p) {
                      const std::size_t pr = axis == 0 ? extents[p] : other;
                      const std::size_t pc = axis == 0 ? other : extents[p];
                      for (std::size_t i = 0; i < pr; ++i)
                        for (std::size_t j = 0; j < pc; ++j) {
                          const std::size_t r = axis == 0 ? off + i : i;
                          const std::size_t c = axis == 0 ? j : off + j;
                          (*gi[p])[i * pc + j] += go[r * cols + c];
                        }
                      off += extents[p];
                    }
                  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  if (X.rank() == 1) {
    if (axis != 0 || begin > end || end > X.dim(0)) {
      throw std::out_of_range("slice: range [" + std::to_string(begin) + ", " +
                              std::to_string(end) + ") invalid for " + shape_str(X.shape()));
    }
    std::vector<double> v(X.storage().begin() + static_cast<std::ptrdiff_t>(begin),
                          X.storage().begin() + static_cast<std::ptrdiff_t>(end));
    return g.record(Tensor::vector(std::move(v)), {x.id()}, [begin](const Tensor& go, std::span<Tensor*> gi) {
      for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[begin + i] += go[i];
    });
  }
  require_rank2("slice", X);
  if (axis > 1 || begin > end || end > X.dim(axis)) {
    throw std::out_of_range("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") invalid on axis " + std::to_string(axis) + " of " +
                            shape_str(X.shape()));
  }
  const std::size_t n = X.dim(0), m = X.dim(1);
  const std::size_t rows = axis == 0 ? end - begin : n;
  const std::size_t cols = axis == 0 ? m : end - begin;
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 0 ? 0 : begin;
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = X[(r0 + i) * m + c0 + j];
  return g.record(std::move(out), {x.id()}, [rows, cols, r0, c0, m](const Tensor& go, std::span<Tensor*> gi) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) (*gi[0])[(r0 + i) * m + c0 + j] += go[i * cols + j];
  });
}

Var transpose(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank2("transpose", X);
  const std::size_t n = X.dim(0), m = X.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = X[i * m + j];
  return g.record(std::move(out), {x.id()}, [n, m](const Tensor& go, std::span<Tensor*> gi) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) (*gi[0])[i * m + j] += go[j * n + i];
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  if (shape_size(shape) != X.size()) shape_error("reshape", X.shape(), shape);
  return g.record(X.reshaped(std::move(shape)), {x.id()}, [](const Tensor& go, std::span<Tensor*> gi) {
    for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i];
  });
}

}  // namespace seg2seg::ad
