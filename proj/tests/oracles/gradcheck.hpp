#pragma once

// Central-difference gradient oracle. Compares the graph's analytic gradient
// of a scalar loss with (L(p + h) - L(p - h)) / 2h, tensor by tensor.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "esir/numerics.hpp"

namespace esir::oracle {

struct TensorCheck {
  std::string name;
  double rel_error = 0.0;
};

using LossBuilder = std::function<Var(Graph&, const ParamStore&)>;

inline double eval_loss(const LossBuilder& f, const ParamStore& p) {
  Graph g(false);
  return g.scalar(f(g, p));
}

// ||analytic - numeric|| / max(||analytic|| + ||numeric||, floor). The floor
// keeps tensors whose true gradient is zero from dividing roundoff by zero.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-6) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), floor);
}

inline std::vector<TensorCheck> check_gradients(ParamStore& store, const LossBuilder& f, double h = 1e-4) {
  Graph g;
  Var loss = f(g, store);
  g.backward(loss);
  const Gradients grads = g.param_gradients();
  std::vector<TensorCheck> out;
  for (const auto& [name, analytic] : grads) {
    std::vector<double> numeric(analytic.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      double& x = store.get_mut(name).values[i];
      const double saved = x;
      x = saved + h;
      const double lp = eval_loss(f, store);
      x = saved - h;
      const double lm = eval_loss(f, store);
      x = saved;
      numeric[i] = (lp - lm) / (2.0 * h);
    }
    out.push_back({name, relative_error(analytic.values, numeric)});
  }
  return out;
}

inline double max_error(const std::vector<TensorCheck>& checks) {
  double m = 0.0;
  for (const auto& c : checks) m = std::max(m, c.rel_error);
  return m;
}

}  // namespace esir::oracle
