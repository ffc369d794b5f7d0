#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "star/autograd.hpp"
#include "star/nn.hpp"

namespace star::gradcheck {

using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;

struct TensorReport {
  std::string name;
  double relative_error = 0.0;  // |a - n| / max(|a|, |n|, floor), 2-norms
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double max_abs_diff = 0.0;
};

struct Report {
  std::vector<TensorReport> tensors;

  double worst() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.relative_error);
    return w;
  }
  bool passed(double tol) const { return worst() < tol; }
};

using LossFn = std::function<Var(Tape&)>;

struct Options {
  double step = 1e-6;
  double norm_floor = 1e-5;
};

inline TensorReport compare(const std::string& name, const Mat& analytic, const Mat& numeric, double floor) {
  TensorReport r;
  r.name = name;
  r.analytic_norm = analytic.norm();
  r.numeric_norm = numeric.norm();
  const Mat diff = analytic - numeric;
  r.max_abs_diff = diff.size() ? diff.cwiseAbs().maxCoeff() : 0.0;
  r.relative_error = diff.norm() / std::max({r.analytic_norm, r.numeric_norm, floor});
  return r;
}

// Checks d loss / d p for every parameter in `params`. `loss` must build a
// fresh scalar on the given tape and must not depend on hidden state that
// the evaluation itself mutates.
inline Report check(std::vector<Parameter*> params, const LossFn& loss, Options opt = {}) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    Var l = loss(t);
    t.backward(l);
  }
  auto eval = [&]() {
    Tape t;
    return loss(t).scalar();
  };
  Report rep;
  for (Parameter* p : params) {
    Mat numeric(p->value.rows(), p->value.cols());
    for (ad::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + opt.step;
      const double up = eval();
      p->value.data()[i] = orig - opt.step;
      const double down = eval();
      p->value.data()[i] = orig;
      numeric.data()[i] = (up - down) / (2.0 * opt.step);
    }
    rep.tensors.push_back(compare(p->name, p->grad, numeric, opt.norm_floor));
  }
  return rep;
}

inline Report check(nn::ParamStore& store, const LossFn& loss, Options opt = {}) {
  std::vector<Parameter*> params;
  for (auto& p : store.all()) {
    if (p.trainable) params.push_back(&p);
  }
  return check(std::move(params), loss, opt);
}

// Gradient check with respect to plain input matrices: each input is bound
// as a temporary parameter named "input<k>".
inline Report check_inputs(std::vector<Mat> inputs, const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
                           Options opt = {}) {
  std::vector<Parameter> holders(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    holders[k].name = "input" + std::to_string(k);
    holders[k].value = std::move(inputs[k]);
  }
  std::vector<Parameter*> ptrs;
  for (auto& h : holders) ptrs.push_back(&h);
  return check(ptrs,
               [&](Tape& t) {
                 std::vector<Var> vs;
                 for (auto& h : holders) vs.push_back(t.param(h));
                 return fn(t, vs);
               },
               opt);
}

}  // namespace star::gradcheck
