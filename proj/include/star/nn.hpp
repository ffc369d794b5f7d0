#pragma once

// Parameter storage and the small layer vocabulary shared by the model:
// linear maps, an LSTM, multi-head cross-attention, squeeze-and-excitation,
// a two-layer feed-forward block, batch normalization, and strided conv.

#include <cmath>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "star/autograd.hpp"
#include "star/ops.hpp"

namespace star::nn {

using ad::Index;
using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;
using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Mat uniform_mat(Rng& rng, Index rows, Index cols, double bound) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -bound, bound);
  return m;
}

// Ordered registry of named parameters; addresses are stable.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& add(std::string name, Mat value, bool trainable = true) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
    Parameter p;
    p.name = std::move(name);
    p.value = std::move(value);
    p.trainable = trainable;
    p.grad.setZero(p.value.rows(), p.value.cols());
    p.velocity.setZero(p.value.rows(), p.value.cols());
    params_.push_back(std::move(p));
    return params_.back();
  }

  Parameter* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  Index trainable_count() const {
    Index n = 0;
    for (const auto& p : params_) {
      if (p.trainable) n += p.size();
    }
    return n;
  }

 private:
  std::deque<Parameter> params_;
};

// y = x W + b, W is [in x out].
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParamStore& ps, const std::string& name, Index in, Index out, Rng& rng,
                       bool with_bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = &ps.add(name + ".weight", uniform_mat(rng, in, out, bound));
    if (with_bias) l.bias = &ps.add(name + ".bias", uniform_mat(rng, 1, out, bound));
    return l;
  }

  Var operator()(Tape& t, const Var& x) const {
    Var y = ad::matmul(x, t.param(*weight));
    return bias != nullptr ? ad::add_row(y, t.param(*bias)) : y;
  }

  Index in() const { return weight->value.rows(); }
  Index out() const { return weight->value.cols(); }
};

// Single-layer LSTM, gate order (input, forget, cell, output).
struct Lstm {
  Parameter* w_input = nullptr;   // [in x 4H]
  Parameter* w_hidden = nullptr;  // [H x 4H]
  Parameter* bias = nullptr;      // [1 x 4H]
  Index hidden = 0;

  static Lstm create(ParamStore& ps, const std::string& name, Index in, Index hidden, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    Lstm l;
    l.hidden = hidden;
    l.w_input = &ps.add(name + ".w_input", uniform_mat(rng, in, 4 * hidden, bound));
    l.w_hidden = &ps.add(name + ".w_hidden", uniform_mat(rng, hidden, 4 * hidden, bound));
    Mat b = uniform_mat(rng, 1, 4 * hidden, bound);
    b.middleCols(hidden, hidden).setOnes();
    l.bias = &ps.add(name + ".bias", std::move(b));
    return l;
  }

  // `steps[t]` is the [B x in] input at time t; returns hidden states [B x H].
  std::vector<Var> operator()(Tape& t, const std::vector<Var>& steps) const {
    std::vector<Var> out;
    if (steps.empty()) return out;
    const Index batch = steps.front().rows();
    Var wi = t.param(*w_input);
    Var wh = t.param(*w_hidden);
    Var b = t.param(*bias);
    Var h = t.constant(Mat::Zero(batch, hidden));
    Var c = t.constant(Mat::Zero(batch, hidden));
    out.reserve(steps.size());
    for (const Var& x : steps) {
      Var z = ad::add_row(ad::add(ad::matmul(x, wi), ad::matmul(h, wh)), b);
      Var gi = ad::sigmoid(ad::slice_cols(z, 0, hidden));
      Var gf = ad::sigmoid(ad::slice_cols(z, hidden, hidden));
      Var gg = ad::tanh(ad::slice_cols(z, 2 * hidden, hidden));
      Var go = ad::sigmoid(ad::slice_cols(z, 3 * hidden, hidden));
      c = ad::add(ad::mul(gf, c), ad::mul(gi, gg));
      h = ad::mul(go, ad::tanh(c));
      out.push_back(h);
    }
    return out;
  }
};

// Scaled dot-product multi-head attention with learned Q/K/V/output maps.
struct MultiHeadAttention {
  Linear q, k, v, o;
  Index heads = 1;

  static MultiHeadAttention create(ParamStore& ps, const std::string& name, Index dim, Index heads, Rng& rng) {
    if (heads < 1 || dim % heads != 0) {
      throw ConfigError(name + ": model width " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
    MultiHeadAttention a;
    a.heads = heads;
    a.q = Linear::create(ps, name + ".q", dim, dim, rng);
    a.k = Linear::create(ps, name + ".k", dim, dim, rng);
    a.v = Linear::create(ps, name + ".v", dim, dim, rng);
    a.o = Linear::create(ps, name + ".out", dim, dim, rng);
    return a;
  }

  Index dim() const { return q.in(); }

  // Attends already-projected queries [Nq x D] over projected keys/values
  // [Nk x D]; returns the head-concatenated context before the output map.
  // Each head's [Nq x Nk] probability matrix is appended to `probs` if given.
  Var attend_projected(const Var& qp, const Var& kp, const Var& vp, std::vector<Mat>* probs = nullptr) const {
    const Index dh = dim() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> ctx;
    ctx.reserve(heads);
    for (Index h = 0; h < heads; ++h) {
      Var qh = ad::slice_cols(qp, h * dh, dh);
      Var kh = ad::slice_cols(kp, h * dh, dh);
      Var vh = ad::slice_cols(vp, h * dh, dh);
      Var p = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), scale));
      if (probs != nullptr) probs->push_back(p.value());
      ctx.push_back(ad::matmul(p, vh));
    }
    return heads == 1 ? ctx.front() : ad::concat_cols(ctx);
  }

  Var operator()(Tape& t, const Var& query, const Var& key, const Var& value,
                 std::vector<Mat>* probs = nullptr) const {
    if (query.cols() != dim() || key.cols() != dim() || value.cols() != dim()) {
      throw ShapeError("attention: feature width mismatch");
    }
    if (key.rows() != value.rows()) throw ShapeError("attention: key/value length mismatch");
    return o(t, attend_projected(q(t, query), k(t, key), v(t, value), probs));
  }
};

// Channel gating: mean over rows -> FC(D -> D/r) -> ReLU -> FC(D/r -> D) -> sigmoid.
struct SqueezeExcite {
  Linear reduce, expand;

  static SqueezeExcite create(ParamStore& ps, const std::string& name, Index dim, Index ratio, Rng& rng) {
    if (ratio < 1 || dim / ratio < 1) throw ConfigError(name + ": invalid reduction ratio");
    SqueezeExcite se;
    se.reduce = Linear::create(ps, name + ".reduce", dim, dim / ratio, rng);
    se.expand = Linear::create(ps, name + ".expand", dim / ratio, dim, rng);
    return se;
  }

  // [N x D] -> [1 x D]
  Var operator()(Tape& t, const Var& x) const {
    return ad::sigmoid(expand(t, ad::relu(reduce(t, ad::mean_rows(x)))));
  }
};

struct FeedForward {
  Linear hidden, output;

  static FeedForward create(ParamStore& ps, const std::string& name, Index in, Index mid, Index out, Rng& rng) {
    FeedForward f;
    f.hidden = Linear::create(ps, name + ".hidden", in, mid, rng);
    f.output = Linear::create(ps, name + ".output", mid, out, rng);
    return f;
  }

  Var operator()(Tape& t, const Var& x) const { return output(t, ad::relu(hidden(t, x))); }
};

// Per-feature batch normalization over rows. Training mode normalizes with
// batch statistics and (optionally) updates the running buffers.
struct BatchNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm create(ParamStore& ps, const std::string& name, Index features) {
    BatchNorm bn;
    bn.gamma = &ps.add(name + ".gamma", Mat::Ones(1, features));
    bn.beta = &ps.add(name + ".beta", Mat::Zero(1, features));
    bn.running_mean = &ps.add(name + ".running_mean", Mat::Zero(1, features), false);
    bn.running_var = &ps.add(name + ".running_var", Mat::Ones(1, features), false);
    return bn;
  }

  Var operator()(Tape& t, const Var& x, bool training, bool update_stats = true) const {
    Var g = t.param(*gamma);
    Var b = t.param(*beta);
    if (!training) {
      Mat inv = (running_var->value.array() + eps).rsqrt().matrix();
      Var xc = ad::add_row(x, t.constant(-running_mean->value));
      return ad::add_row(ad::mul_row(ad::mul_row(xc, t.constant(inv)), g), b);
    }
    if (x.rows() < 2) throw ShapeError("batch norm: training mode needs at least two rows");
    Var mu = ad::mean_rows(x);
    Var xc = ad::sub(x, ad::matmul(t.constant(Mat::Ones(x.rows(), 1)), mu));
    Var var = ad::mean_rows(ad::mul(xc, xc));
    Var inv = ad::pow_scalar(ad::add_scalar(var, eps), -0.5);
    if (update_stats) {
      const double n = static_cast<double>(x.rows());
      running_mean->value = (1.0 - momentum) * running_mean->value + momentum * mu.value();
      running_var->value = (1.0 - momentum) * running_var->value + momentum * var.value() * (n / (n - 1.0));
    }
    return ad::add_row(ad::mul_row(ad::mul_row(xc, inv), g), b);
  }
};

struct ConvGeometry {
  Index in_h = 0, in_w = 0, in_c = 0, out_c = 0;
  Index kernel = 3, stride = 2, pad = 1;

  Index out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  Index out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  Index patch() const { return kernel * kernel * in_c; }
};

// Batched 2-D convolution. `x` holds one image per row in HWC order; the
// weight is [k*k*Cin x Cout] and the result is [N x Ho*Wo*Cout] (HWC).
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geo) {
  if (x.cols() != geo.in_h * geo.in_w * geo.in_c) throw ShapeError("conv2d: input width mismatch");
  if (weight.rows() != geo.patch() || weight.cols() != geo.out_c) throw ShapeError("conv2d: weight shape");
  const Index n = x.rows();
  const Index ho = geo.out_h();
  const Index wo = geo.out_w();
  Mat cols = Mat::Zero(n * ho * wo, geo.patch());
  const Mat& in = x.value();
  for (Index img = 0; img < n; ++img) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const Index row = (img * ho + oy) * wo + ox;
        for (Index ky = 0; ky < geo.kernel; ++ky) {
          const Index iy = oy * geo.stride + ky - geo.pad;
          if (iy < 0 || iy >= geo.in_h) continue;
          for (Index kx = 0; kx < geo.kernel; ++kx) {
            const Index ix = ox * geo.stride + kx - geo.pad;
            if (ix < 0 || ix >= geo.in_w) continue;
            cols.row(row).segment((ky * geo.kernel + kx) * geo.in_c, geo.in_c) =
                in.row(img).segment((iy * geo.in_w + ix) * geo.in_c, geo.in_c);
          }
        }
      }
    }
  }
  Mat out = cols * weight.value();
  out.rowwise() += bias.value().row(0);
  Mat y = Eigen::Map<const Mat>(out.data(), n, ho * wo * geo.out_c);
  return x.tape()->record(
      std::move(y), {x, weight, bias}, [x, weight, bias, geo, cols = std::move(cols)](Tape& t, const Mat& g) {
        const Index n = x.rows();
        const Index ho = geo.out_h();
        const Index wo = geo.out_w();
        Eigen::Map<const Mat> gout(g.data(), n * ho * wo, geo.out_c);
        if (t.needs_grad(weight)) t.accumulate(weight, cols.transpose() * gout);
        if (t.needs_grad(bias)) t.accumulate(bias, gout.colwise().sum());
        if (!t.needs_grad(x)) return;
        Mat gcols = gout * weight.value().transpose();
        Mat& gx = t.grad_buffer(x);
        for (Index img = 0; img < n; ++img) {
          for (Index oy = 0; oy < ho; ++oy) {
            for (Index ox = 0; ox < wo; ++ox) {
              const Index row = (img * ho + oy) * wo + ox;
              for (Index ky = 0; ky < geo.kernel; ++ky) {
                const Index iy = oy * geo.stride + ky - geo.pad;
                if (iy < 0 || iy >= geo.in_h) continue;
                for (Index kx = 0; kx < geo.kernel; ++kx) {
                  const Index ix = ox * geo.stride + kx - geo.pad;
                  if (ix < 0 || ix >= geo.in_w) continue;
                  gx.row(img).segment((iy * geo.in_w + ix) * geo.in_c, geo.in_c) +=
                      gcols.row(row).segment((ky * geo.kernel + kx) * geo.in_c, geo.in_c);
                }
              }
            }
          }
        }
      });
}

// Mean over the width axis of an HWC feature map: [N x H*W*C] -> [N*H x C].
inline Var mean_over_width(const Var& x, Index h, Index w, Index c) {
  if (x.cols() != h * w * c) throw ShapeError("mean_over_width: feature map shape mismatch");
  const Index n = x.rows();
  Mat y = Mat::Zero(n * h, c);
  const double inv = 1.0 / static_cast<double>(w);
  for (Index img = 0; img < n; ++img) {
    for (Index r = 0; r < h; ++r) {
      for (Index col = 0; col < w; ++col) y.row(img * h + r) += x.value().row(img).segment((r * w + col) * c, c);
    }
  }
  y *= inv;
  return x.tape()->record(std::move(y), {x}, [x, h, w, c, inv](Tape& t, const Mat& g) {
    if (!t.needs_grad(x)) return;
    Mat& gx = t.grad_buffer(x);
    for (Index img = 0; img < x.rows(); ++img) {
      for (Index r = 0; r < h; ++r) {
        for (Index col = 0; col < w; ++col) gx.row(img).segment((r * w + col) * c, c) += g.row(img * h + r) * inv;
      }
    }
  });
}

}  // namespace star::nn
