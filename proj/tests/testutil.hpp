#pragma once

// Shared helpers for the test suites: finite-difference gradient checking and
// small random-tensor construction.

#include <cmath>
#include <functional>
#include <vector>

#include "vlp/nn.hpp"
#include "vlp/tensor.hpp"

namespace vlp::test {

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Central-difference check of d(fn)/d(params). fn must rebuild the graph from
// the current param values on every call.
inline void check_gradients(const std::vector<Param*>& params,
                            const std::function<Var(Tape&)>& fn, double h = 1e-5,
                            double tol = 1e-6, double* max_err_out = nullptr) {
  Tape t;
  Var loss = fn(t);
  t.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (Param* p : params) {
    const std::vector<double>* g = t.param_grad(*p);
    analytic.push_back(g ? *g : std::vector<double>(p->numel(), 0.0));
  }
  double max_err = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param* p = params[pi];
    for (int64_t i = 0; i < p->numel(); ++i) {
      double orig = p->value[i];
      p->value[i] = orig + h;
      Tape tp;
      double fp = tp.scalar(fn(tp));
      p->value[i] = orig - h;
      Tape tm;
      double fm = tm.scalar(fn(tm));
      p->value[i] = orig;
      double fd = (fp - fm) / (2.0 * h);
      double err = rel_err(analytic[pi][i], fd);
      max_err = std::max(max_err, err);
      if (err > tol)
        throw std::runtime_error("gradcheck failed for " + p->name + "[" + std::to_string(i) +
                                 "]: analytic=" + std::to_string(analytic[pi][i]) +
                                 " fd=" + std::to_string(fd));
    }
  }
  if (max_err_out) *max_err_out = max_err;
}

inline Param make_param(const std::string& name, Shape s, Rng& rng, double scale = 1.0) {
  Param p(name, s);
  for (auto& v : p.value) v = rng.normal(0.0, scale);
  return p;
}

}  // namespace vlp::test
