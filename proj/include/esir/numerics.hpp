#pragma once

// Small reverse-mode differentiation kernel over dense row-major matrices.
// A Graph records one forward pass; backward() walks it in reverse creation
// order, which is a valid topological order since inputs always precede the
// nodes built from them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "esir/rng.hpp"

namespace esir {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Tensor {
  std::vector<std::size_t> shape{0, 0};
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : shape{rows, cols}, values(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> v) : shape{rows, cols}, values(std::move(v)) {
    if (values.size() != rows * cols) throw ShapeError("Tensor: value count does not match shape");
  }

  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }
  std::size_t size() const { return values.size(); }
  double& at(std::size_t r, std::size_t c) { return values[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * shape[1] + c]; }
  std::span<double> row(std::size_t r) { return {values.data() + r * shape[1], shape[1]}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * shape[1], shape[1]}; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor&) const = default;
};

inline std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

namespace kernels {

// c (+)= op(a) * op(b), with op = optional transpose.
inline void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c, bool accumulate) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t n = tb ? b.rows() : b.cols();
  if ((tb ? b.cols() : b.rows()) != k || c.rows() != m || c.cols() != n)
    throw ShapeError("gemm: incompatible shapes " + shape_str(a) + " " + shape_str(b));
  if (!accumulate) std::fill(c.values.begin(), c.values.end(), 0.0);
  const double* A = a.values.data();
  const double* B = b.values.data();
  double* C = c.values.data();
  const std::size_t lda = a.cols(), ldb = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? A[p * lda + i] : A[i * lda + p];
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = B + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * B[j * ldb + p];
      }
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Parameters and optimizer

using Gradients = std::map<std::string, Tensor>;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class ParamStore {
 public:
  static constexpr int kFormatVersion = 1;

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::size_t step_count() const { return steps_; }

  Tensor& add(const std::string& name, Tensor value) {
    if (params_.contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    return params_[name] = std::move(value);
  }
  bool contains(const std::string& name) const { return params_.contains(name); }
  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
    return it->second;
  }
  Tensor& get_mut(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
    return it->second;
  }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  // Per-parameter adaptive-moment update with bias correction. The whole step
  // is rejected, leaving the store untouched, if any gradient is non-finite.
  void adam_step(const Gradients& grads, const AdamConfig& cfg) {
    for (const auto& [name, g] : grads) {
      const Tensor& p = get(name);
      if (!g.same_shape(p)) throw ShapeError("adam_step: gradient shape mismatch for '" + name + "'");
      if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient for '" + name + "'");
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps_));
    for (const auto& [name, g] : grads) {
      Tensor& p = params_.at(name);
      auto& st = moments_[name];
      if (st.first.size() != p.size()) {
        st.first.assign(p.size(), 0.0);
        st.second.assign(p.size(), 0.0);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        st.first[i] = cfg.beta1 * st.first[i] + (1.0 - cfg.beta1) * g.values[i];
        st.second[i] = cfg.beta2 * st.second[i] + (1.0 - cfg.beta2) * g.values[i] * g.values[i];
        const double mhat = st.first[i] / bc1;
        const double vhat = st.second[i] / bc2;
        p.values[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, t] : params_) params[name] = {{"shape", t.shape}, {"values", t.values}};
    return {{"format_version", kFormatVersion}, {"seed", seed_}, {"params", std::move(params)}};
  }

  static ParamStore from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format_version", 0) != kFormatVersion)
      throw std::runtime_error("ParamStore: unsupported or missing format_version");
    ParamStore store(j.at("seed").get<std::uint64_t>());
    for (const auto& [name, entry] : j.at("params").items()) {
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw std::runtime_error("ParamStore: parameter '" + name + "' must be 2-D");
      std::vector<double> values;
      values.reserve(shape[0] * shape[1]);
      for (const auto& v : entry.at("values")) {
        if (!v.is_number()) throw std::runtime_error("ParamStore: non-numeric value in '" + name + "'");
        values.push_back(v.get<double>());
      }
      store.add(name, Tensor(shape[0], shape[1], std::move(values)));
    }
    return store;
  }

  bool operator==(const ParamStore& o) const { return seed_ == o.seed_ && params_ == o.params_; }

 private:
  std::uint64_t seed_;
  std::size_t steps_ = 0;
  std::map<std::string, Tensor> params_;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

inline Tensor uniform_init(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.values) v = rng.uniform(-bound, bound);
  return t;
}

// Dense layer: weight [in x out] and bias [1 x out], both U(-1/sqrt(in), 1/sqrt(in)).
inline void init_dense(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(prefix + ".w", uniform_init(in, out, bound, rng));
  store.add(prefix + ".b", uniform_init(1, out, bound, rng));
}

inline void init_embedding(ParamStore& store, const std::string& name, std::size_t rows, std::size_t cols,
                           Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.values) v = rng.normal(0.0, 0.02);
  store.add(name, std::move(t));
}

inline void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".gamma", Tensor(1, dim, 1.0));
  store.add(prefix + ".beta", Tensor(1, dim, 0.0));
}

// ---------------------------------------------------------------------------
// Graph

struct Var {
  std::size_t id = SIZE_MAX;
};

using Mask = std::vector<std::uint8_t>;

inline std::size_t mask_count(const Mask& m) {
  std::size_t n = 0;
  for (auto b : m) n += b ? 1 : 0;
  return n;
}

class Graph {
 public:
  // With track_grad false, parameters enter as constants and no backward
  // closures are kept; for scoring only.
  explicit Graph(bool track_grad = true) : track_grad_(track_grad) { nodes_.reserve(256); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar(Var v) const { return nodes_[v.id].value.values.at(0); }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) { return push(std::move(t), false, {}); }

  // A constant whose gradient is still wanted (e.g. input features for a
  // pathwise derivative).
  Var input(Tensor t) { return push(std::move(t), true, {}); }

  // Read-only parameter leaf; repeated lookups of a name share one node so
  // gradients accumulate in one place.
  Var param(const ParamStore& store, const std::string& name) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return {it->second};
    Var v = push(store.get(name), track_grad_, {});
    param_ids_.emplace(name, v.id);
    return v;
  }

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) throw ShapeError("matmul: " + shape_str(A) + " x " + shape_str(B));
    Tensor out(A.rows(), B.cols());
    kernels::gemm(A, false, B, false, out, false);
    return push(std::move(out), needs(a, b), [a, b](Graph& g, std::size_t self) {
      const Tensor& dC = g.nodes_[self].grad;
      if (g.wants(a)) kernels::gemm(dC, false, g.value(b), true, g.nodes_[a.id].grad, true);
      if (g.wants(b)) kernels::gemm(g.value(a), true, dC, false, g.nodes_[b.id].grad, true);
    });
  }

  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    if (!A.same_shape(value(b))) throw ShapeError("add: " + shape_str(A) + " + " + shape_str(value(b)));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += value(b).values[i];
    return push(std::move(out), needs(a, b), [a, b](Graph& g, std::size_t self) {
      g.accumulate(a, g.nodes_[self].grad);
      g.accumulate(b, g.nodes_[self].grad);
    });
  }

  // x [m x n] + b [1 x n] broadcast over rows.
  Var add_bias(Var x, Var b) {
    const Tensor& X = value(x);
    const Tensor& B = value(b);
    if (B.rows() != 1 || B.cols() != X.cols()) throw ShapeError("add_bias: " + shape_str(X) + " + " + shape_str(B));
    Tensor out = X;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += B.values[c];
    return push(std::move(out), needs(x, b), [x, b](Graph& g, std::size_t self) {
      const Tensor& d = g.nodes_[self].grad;
      g.accumulate(x, d);
      if (g.wants(b)) {
        Tensor& db = g.nodes_[b.id].grad;
        for (std::size_t r = 0; r < d.rows(); ++r)
          for (std::size_t c = 0; c < d.cols(); ++c) db.values[c] += d.at(r, c);
      }
    });
  }

  Var dense(const ParamStore& store, Var x, const std::string& prefix) {
    return add_bias(matmul(x, param(store, prefix + ".w")), param(store, prefix + ".b"));
  }

  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw ShapeError("mul: " + shape_str(A) + " * " + shape_str(B));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= B.values[i];
    return push(std::move(out), needs(a, b), [a, b](Graph& g, std::size_t self) {
      const Tensor& d = g.nodes_[self].grad;
      if (g.wants(a)) {
        Tensor& da = g.nodes_[a.id].grad;
        for (std::size_t i = 0; i < d.size(); ++i) da.values[i] += d.values[i] * g.value(b).values[i];
      }
      if (g.wants(b)) {
        Tensor& db = g.nodes_[b.id].grad;
        for (std::size_t i = 0; i < d.size(); ++i) db.values[i] += d.values[i] * g.value(a).values[i];
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor out = value(a);
    for (double& v : out.values) v *= s;
    return push(std::move(out), needs(a), [a, s](Graph& g, std::size_t self) {
      if (!g.wants(a)) return;
      const Tensor& d = g.nodes_[self].grad;
      Tensor& da = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < d.size(); ++i) da.values[i] += s * d.values[i];
    });
  }

  Var tanh(Var a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
  }
  Var sigmoid(Var a) {
    return unary(a, sigmoid_fn, [](double, double y) { return y * (1.0 - y); });
  }
  Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
  }
  Var log(Var a) {
    for (double v : value(a).values)
      if (!(v > 0.0)) throw NumericError("log: non-positive argument");
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
  }
  Var softplus(Var a) {
    return unary(a, softplus_fn, [](double x, double) { return sigmoid_fn(x); });
  }
  Var relu(Var a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
  }
  // tanh approximation of GELU; smooth, so finite-difference checks apply.
  Var gelu(Var a) { return unary(a, gelu_fn, [](double x, double) { return gelu_grad(x); }); }

  // Gradient flows only where the input lies strictly inside (lo, hi).
  Var clamp(Var a, double lo, double hi) {
    return unary(
        a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
  }

  Var transpose(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.cols(), A.rows());
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < A.cols(); ++c) out.at(c, r) = A.at(r, c);
    return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
      if (!g.wants(a)) return;
      const Tensor& d = g.nodes_[self].grad;
      Tensor& da = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) da.at(c, r) += d.at(r, c);
    });
  }

  // Rows of table selected by index.
  Var embedding(Var table, const std::vector<std::size_t>& indices) {
    const Tensor& T = value(table);
    Tensor out(indices.size(), T.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] >= T.rows()) throw ShapeError("embedding: index out of range");
      std::copy(T.row(indices[r]).begin(), T.row(indices[r]).end(), out.row(r).begin());
    }
    return push(std::move(out), needs(table), [table, indices](Graph& g, std::size_t self) {
      if (!g.wants(table)) return;
      const Tensor& d = g.nodes_[self].grad;
      Tensor& dt = g.nodes_[table.id].grad;
      for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) dt.at(indices[r], c) += d.at(r, c);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    bool rg = false;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw ShapeError("concat_cols: row count mismatch");
      cols += value(p).cols();
      rg = rg || nodes_[p.id].requires_grad;
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& P = value(p);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < P.cols(); ++c) out.at(r, off + c) = P.at(r, c);
      off += P.cols();
    }
    return push(std::move(out), rg, [parts](Graph& g, std::size_t self) {
      const Tensor& d = g.nodes_[self].grad;
      std::size_t off = 0;
      for (Var p : parts) {
        const std::size_t pc = g.value(p).cols();
        if (g.wants(p)) {
          Tensor& dp = g.nodes_[p.id].grad;
          for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < pc; ++c) dp.at(r, c) += d.at(r, off + c);
        }
        off += pc;
      }
    });
  }

  Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const Tensor& A = value(a);
    if (begin + count > A.cols()) throw ShapeError("slice_cols: out of range");
    Tensor out(A.rows(), count);
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) out.at(r, c) = A.at(r, begin + c);
    return push(std::move(out), needs(a), [a, begin](Graph& g, std::size_t self) {
      if (!g.wants(a)) return;
      const Tensor& d = g.nodes_[self].grad;
      Tensor& da = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) da.at(r, begin + c) += d.at(r, c);
    });
  }

  // Row-wise softmax over the columns whose mask entry is set; masked columns
  // get exactly zero weight.
  Var masked_softmax(Var a, const Mask& col_mask) {
    const Tensor& A = value(a);
    if (col_mask.size() != A.cols()) throw ShapeError("masked_softmax: mask length mismatch");
    if (mask_count(col_mask) == 0) throw ShapeError("masked_softmax: every position is masked");
    Tensor out(A.rows(), A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r) {
      double mx = -INFINITY;
      for (std::size_t c = 0; c < A.cols(); ++c)
        if (col_mask[c]) mx = std::max(mx, A.at(r, c));
      double z = 0.0;
      for (std::size_t c = 0; c < A.cols(); ++c)
        if (col_mask[c]) z += (out.at(r, c) = std::exp(A.at(r, c) - mx));
      for (std::size_t c = 0; c < A.cols(); ++c)
        if (col_mask[c]) out.at(r, c) /= z;
    }
    return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
      if (!g.wants(a)) return;
      const Tensor& y = g.nodes_[self].value;
      const Tensor& d = g.nodes_[self].grad;
      Tensor& da = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += d.at(r, c) * y.at(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) da.at(r, c) += y.at(r, c) * (d.at(r, c) - dot);
      }
    });
  }

  Var log_softmax(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.rows(), A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r) {
      double mx = -INFINITY;
      for (double v : A.row(r)) mx = std::max(mx, v);
      double z = 0.0;
      for (double v : A.row(r)) z += std::exp(v - mx);
      const double lse = mx + std::log(z);
      for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) = A.at(r, c) - lse;
    }
    return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
      if (!g.wants(a)) return;
      const Tensor& y = g.nodes_[self].value;
      const Tensor& d = g.nodes_[self].grad;
      Tensor& da = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) sum += d.at(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) da.at(r, c) += d.at(r, c) - std::exp(y.at(r, c)) * sum;
      }
    });
  }

  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor& X = value(x);
    const std::size_t n = X.cols();
    if (value(gamma).size() != n || value(beta).size() != n) throw ShapeError("layer_norm: parameter width mismatch");
    Tensor out(X.rows(), n);
    auto xhat = std::make_shared<Tensor>(X.rows(), n);
    auto inv_std = std::make_shared<std::vector<double>>(X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) {
      double mean = 0.0;
      for (double v : X.row(r)) mean += v;
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (double v : X.row(r)) var += (v - mean) * (v - mean);
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[r] = is;
      for (std::size_t c = 0; c < n; ++c) {
        xhat->at(r, c) = (X.at(r, c) - mean) * is;
        out.at(r, c) = xhat->at(r, c) * value(gamma).values[c] + value(beta).values[c];
      }
    }
    return push(std::move(out), needs(x, gamma, beta), [x, gamma, beta, xhat, inv_std, n](Graph& g, std::size_t self) {
      const Tensor& d = g.nodes_[self].grad;
      const Tensor& G = g.value(gamma);
      if (g.wants(gamma) || g.wants(beta)) {
        for (std::size_t r = 0; r < d.rows(); ++r)
          for (std::size_t c = 0; c < n; ++c) {
            if (g.wants(gamma)) g.nodes_[gamma.id].grad.values[c] += d.at(r, c) * xhat->at(r, c);
            if (g.wants(beta)) g.nodes_[beta.id].grad.values[c] += d.at(r, c);
          }
      }
      if (!g.wants(x)) return;
      Tensor& dx = g.nodes_[x.id].grad;
      const double nn = static_cast<double>(n);
      for (std::size_t r = 0; r < d.rows(); ++r) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const double dy = d.at(r, c) * G.values[c];
          sum_dy += dy;
          sum_dy_xhat += dy * xhat->at(r, c);
        }
        for (std::size_t c = 0; c < n; ++c) {
          const double dy = d.at(r, c) * G.values[c];
          dx.at(r, c) += (*inv_std)[r] * (dy - sum_dy / nn - xhat->at(r, c) * sum_dy_xhat / nn);
        }
      }
    });
  }

  // Mean of the rows whose mask entry is set -> [1 x cols].
  Var mean_over_mask(Var a, const Mask& row_mask) {
    const Tensor& A = value(a);
    if (row_mask.size() != A.rows()) throw ShapeError("mean_over_mask: mask length mismatch");
    const std::size_t count = mask_count(row_mask);
    if (count == 0) throw ShapeError("mean_over_mask: every position is masked");
    Tensor out(1, A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r)
      if (row_mask[r])
        for (std::size_t c = 0; c < A.cols(); ++c) out.values[c] += A.at(r, c);
    const double inv = 1.0 / static_cast<double>(count);
    for (double& v : out.values) v *= inv;
    return push(std::move(out), needs(a), [a, row_mask, inv](Graph& g, std::size_t self) {
      if (!g.wants(a)) return;
      const Tensor& d = g.nodes_[self].grad;
      Tensor& da = g.nodes_[a.id].grad;
      for (std::size_t r = 0; r < da.rows(); ++r)
        if (row_mask[r])
          for (std::size_t c = 0; c < da.cols(); ++c) da.at(r, c) += d.values[c] * inv;
    });
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double v : value(a).values) s += v;
    return push(Tensor(1, 1, s), needs(a), [a](Graph& g, std::size_t self) {
      if (!g.wants(a)) return;
      const double d = g.nodes_[self].grad.values[0];
      for (double& v : g.nodes_[a.id].grad.values) v += d;
    });
  }

  Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(value(a).size())); }

  // sum(a ⊙ weights) with constant weights.
  Var weighted_sum(Var a, Tensor weights) {
    const Tensor& A = value(a);
    if (!A.same_shape(weights)) throw ShapeError("weighted_sum: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A.values[i] * weights.values[i];
    return push(Tensor(1, 1, s), needs(a), [a, w = std::move(weights)](Graph& g, std::size_t self) {
      if (!g.wants(a)) return;
      const double d = g.nodes_[self].grad.values[0];
      Tensor& da = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < w.size(); ++i) da.values[i] += d * w.values[i];
    });
  }

  void backward(Var loss) {
    const Tensor& L = value(loss);
    if (L.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(L));
    for (auto& n : nodes_) n.grad = n.requires_grad ? Tensor(n.value.rows(), n.value.cols()) : Tensor();
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad.values[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;)
      if (nodes_[i].requires_grad && nodes_[i].back) nodes_[i].back(*this, i);
  }

  // Gradients of every parameter reached by this graph (zero if unreached by
  // the loss).
  Gradients param_gradients() const {
    Gradients out;
    for (const auto& [name, id] : param_ids_) {
      const Node& n = nodes_[id];
      out[name] = n.grad.size() == n.value.size() ? n.grad : Tensor(n.value.rows(), n.value.cols());
    }
    return out;
  }

  static double sigmoid_fn(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
  static double softplus_fn(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
  static double gelu_fn(double x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
  }
  static double gelu_grad(double x) {
    constexpr double k = 0.7978845608028654;
    const double u = k * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x);
  }

 private:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    Backward back;
    bool requires_grad = false;
  };

  Var push(Tensor value, bool requires_grad, Backward back) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad ? std::move(back) : Backward{}, requires_grad});
    return {nodes_.size() - 1};
  }

  template <typename... V>
  bool needs(V... vs) const {
    return (nodes_[vs.id].requires_grad || ...);
  }
  bool wants(Var v) const { return nodes_[v.id].requires_grad; }

  void accumulate(Var target, const Tensor& d) {
    if (!wants(target)) return;
    Tensor& t = nodes_[target.id].grad;
    for (std::size_t i = 0; i < d.size(); ++i) t.values[i] += d.values[i];
  }

  template <typename F, typename DF>
  Var unary(Var a, F f, DF df) {
    Tensor out = value(a);
    for (double& v : out.values) v = f(v);
    return push(std::move(out), needs(a), [a, df](Graph& g, std::size_t self) {
      if (!g.wants(a)) return;
      const Tensor& x = g.value(a);
      const Tensor& y = g.nodes_[self].value;
      const Tensor& d = g.nodes_[self].grad;
      Tensor& da = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < d.size(); ++i) da.values[i] += d.values[i] * df(x.values[i], y.values[i]);
    });
  }

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_ids_;
  bool track_grad_ = true;
};

}  // namespace esir
