#pragma once

// Differentiable operations on star::ad::Var. Every op checks its shapes,
// computes the forward value eagerly, and registers a backward closure.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "star/autograd.hpp"

namespace star::ad {

namespace detail {

inline std::string shape_str(const Var& v) {
  return "[" + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) + "]";
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Mat y = a.value().unaryExpr(f);
  Mat local = a.value().binaryExpr(y, df);
  return a.tape()->record(std::move(y), {a}, [a, local = std::move(local)](Tape& t, const Mat& g) {
    t.accumulate(a, g.cwiseProduct(local));
  });
}

}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + detail::shape_str(a) + " x " + detail::shape_str(b));
  }
  Mat y = a.value() * b.value();
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::same_shape(a, b, "add");
  Mat y = a.value() + b.value();
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_shape(a, b, "sub");
  Mat y = a.value() - b.value();
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

// Hadamard product.
inline Var mul(const Var& a, const Var& b) {
  detail::same_shape(a, b, "mul");
  Mat y = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(const Var& a, double s) {
  Mat y = a.value() * s;
  return a.tape()->record(std::move(y), {a}, [a, s](Tape& t, const Mat& g) { t.accumulate(a, g * s); });
}

inline Var add_scalar(const Var& a, double s) {
  Mat y = a.value().array() + s;
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Mat& g) { t.accumulate(a, g); });
}

// M + r with r a 1xC row broadcast over rows.
inline Var add_row(const Var& m, const Var& r) {
  if (r.rows() != 1 || r.cols() != m.cols()) {
    throw ShapeError("add_row: " + detail::shape_str(m) + " + " + detail::shape_str(r));
  }
  Mat y = m.value().rowwise() + r.value().row(0);
  return m.tape()->record(std::move(y), {m, r}, [m, r](Tape& t, const Mat& g) {
    t.accumulate(m, g);
    if (t.needs_grad(r)) t.accumulate(r, g.colwise().sum());
  });
}

// M ⊙ r with r a 1xC row broadcast over rows.
inline Var mul_row(const Var& m, const Var& r) {
  if (r.rows() != 1 || r.cols() != m.cols()) {
    throw ShapeError("mul_row: " + detail::shape_str(m) + " * " + detail::shape_str(r));
  }
  Mat y = m.value().array().rowwise() * r.value().row(0).array();
  return m.tape()->record(std::move(y), {m, r}, [m, r](Tape& t, const Mat& g) {
    if (t.needs_grad(m)) {
      Mat gm = g.array().rowwise() * r.value().row(0).array();
      t.accumulate(m, gm);
    }
    if (t.needs_grad(r)) t.accumulate(r, g.cwiseProduct(m.value()).colwise().sum());
  });
}

// Row i of M scaled by c(i, 0).
inline Var scale_rows(const Var& m, const Var& c) {
  if (c.cols() != 1 || c.rows() != m.rows()) {
    throw ShapeError("scale_rows: " + detail::shape_str(m) + " by " + detail::shape_str(c));
  }
  Mat y = m.value().array().colwise() * c.value().col(0).array();
  return m.tape()->record(std::move(y), {m, c}, [m, c](Tape& t, const Mat& g) {
    if (t.needs_grad(m)) {
      Mat gm = g.array().colwise() * c.value().col(0).array();
      t.accumulate(m, gm);
    }
    if (t.needs_grad(c)) t.accumulate(c, g.cwiseProduct(m.value()).rowwise().sum());
  });
}

inline Var transpose(const Var& a) {
  Mat y = a.value().transpose();
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Mat& g) { t.accumulate(a, g.transpose()); });
}

// Row-major reinterpretation.
inline Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape: " + detail::shape_str(a) + " to " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  Mat y = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  const Index r0 = a.rows();
  const Index c0 = a.cols();
  return a.tape()->record(std::move(y), {a}, [a, r0, c0](Tape& t, const Mat& g) {
    t.accumulate(a, Eigen::Map<const Mat>(g.data(), r0, c0));
  });
}

// ---- elementwise nonlinearities -------------------------------------------

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var elu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

inline Var leaky_relu(const Var& a, double slope) {
  return detail::unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var pow_scalar(const Var& a, double e) {
  return detail::unary(
      a, [e](double x) { return std::pow(x, e); }, [e](double x, double) { return e * std::pow(x, e - 1.0); });
}

// max(a, lo); gradient passes only where a > lo.
inline Var clamp_min(const Var& a, double lo) {
  return detail::unary(
      a, [lo](double x) { return x > lo ? x : lo; }, [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

// ---- reductions -----------------------------------------------------------

inline Var sum_all(const Var& a) {
  Mat y(1, 1);
  y(0, 0) = a.value().sum();
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape()->record(std::move(y), {a}, [a, r, c](Tape& t, const Mat& g) {
    t.accumulate(a, Mat::Constant(r, c, g(0, 0)));
  });
}

inline Var mean_all(const Var& a) {
  if (a.value().size() == 0) throw EmptyInputError("mean_all: empty input");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

// Column means: [R x C] -> [1 x C].
inline Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw EmptyInputError("mean_rows: empty input");
  const double inv = 1.0 / static_cast<double>(a.rows());
  Mat y = a.value().colwise().sum() * inv;
  const Index r = a.rows();
  return a.tape()->record(std::move(y), {a}, [a, r, inv](Tape& t, const Mat& g) {
    t.accumulate(a, g.replicate(r, 1) * inv);
  });
}

// Row sums: [R x C] -> [R x 1].
inline Var sum_cols(const Var& a) {
  Mat y = a.value().rowwise().sum();
  const Index c = a.cols();
  return a.tape()->record(std::move(y), {a}, [a, c](Tape& t, const Mat& g) {
    t.accumulate(a, g.replicate(1, c));
  });
}

// Euclidean norm of each row, sqrt(|r|^2 + eps): [R x C] -> [R x 1].
inline Var row_norm(const Var& a, double eps = 1e-12) {
  Mat y = (a.value().rowwise().squaredNorm().array() + eps).sqrt().matrix();
  Mat yc = y;
  return a.tape()->record(std::move(y), {a}, [a, yc = std::move(yc)](Tape& t, const Mat& g) {
    Mat coef = g.array() / yc.array();
    Mat ga = a.value().array().colwise() * coef.col(0).array();
    t.accumulate(a, ga);
  });
}

// ---- softmax family -------------------------------------------------------

inline Var softmax_rows(const Var& a) {
  const Mat& x = a.value();
  Mat y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  Mat yc = y;
  return a.tape()->record(std::move(y), {a}, [a, yc = std::move(yc)](Tape& t, const Mat& g) {
    Mat dot = g.cwiseProduct(yc).rowwise().sum();
    Mat ga = yc.array() * (g.array() - dot.replicate(1, g.cols()).array());
    t.accumulate(a, ga);
  });
}

inline Var log_softmax_rows(const Var& a) {
  const Mat& x = a.value();
  Mat y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    y.row(i) = x.row(i).array() - lse;
  }
  Mat prob = y.array().exp();
  return a.tape()->record(std::move(y), {a}, [a, prob = std::move(prob)](Tape& t, const Mat& g) {
    Mat gsum = g.rowwise().sum();
    Mat ga = g.array() - prob.array() * gsum.replicate(1, g.cols()).array();
    t.accumulate(a, ga);
  });
}

// Softmax of a column of logits within segments: entries e with seg[e] == s
// are normalized together. Used for neighbourhood attention.
inline Var segment_softmax(const Var& logits, const std::vector<int>& seg, int num_segments) {
  if (logits.cols() != 1 || static_cast<std::size_t>(logits.rows()) != seg.size()) {
    throw ShapeError("segment_softmax: logits must be [E x 1] matching the segment list");
  }
  const Mat& x = logits.value();
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < seg.size(); ++e) mx[seg[e]] = std::max(mx[seg[e]], x(e, 0));
  Mat y(x.rows(), 1);
  std::vector<double> den(num_segments, 0.0);
  for (std::size_t e = 0; e < seg.size(); ++e) {
    y(e, 0) = std::exp(x(e, 0) - mx[seg[e]]);
    den[seg[e]] += y(e, 0);
  }
  for (std::size_t e = 0; e < seg.size(); ++e) y(e, 0) /= den[seg[e]];
  Mat yc = y;
  return logits.tape()->record(std::move(y), {logits},
                               [logits, seg, num_segments, yc = std::move(yc)](Tape& t, const Mat& g) {
                                 std::vector<double> dot(num_segments, 0.0);
                                 for (std::size_t e = 0; e < seg.size(); ++e) dot[seg[e]] += g(e, 0) * yc(e, 0);
                                 Mat ga(yc.rows(), 1);
                                 for (std::size_t e = 0; e < seg.size(); ++e) {
                                   ga(e, 0) = yc(e, 0) * (g(e, 0) - dot[seg[e]]);
                                 }
                                 t.accumulate(logits, ga);
                               });
}

// ---- structural -----------------------------------------------------------

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no inputs");
  const Index r = parts.front().rows();
  Index c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
    c += p.cols();
  }
  Mat y(r, c);
  Index off = 0;
  for (const Var& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts.front().tape()->record(std::move(y), parts, [parts](Tape& t, const Mat& g) {
    Index o = 0;
    for (const Var& p : parts) {
      t.accumulate(p, g.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no inputs");
  const Index c = parts.front().cols();
  Index r = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
    r += p.rows();
  }
  Mat y(r, c);
  Index off = 0;
  for (const Var& p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return parts.front().tape()->record(std::move(y), parts, [parts](Tape& t, const Mat& g) {
    Index o = 0;
    for (const Var& p : parts) {
      t.accumulate(p, g.middleRows(o, p.rows()));
      o += p.rows();
    }
  });
}

inline Var slice_rows(const Var& a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) throw ShapeError("slice_rows: out of range");
  Mat y = a.value().middleRows(start, n);
  return a.tape()->record(std::move(y), {a}, [a, start, n](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.grad_buffer(a).middleRows(start, n) += g;
  });
}

inline Var slice_cols(const Var& a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw ShapeError("slice_cols: out of range");
  Mat y = a.value().middleCols(start, n);
  return a.tape()->record(std::move(y), {a}, [a, start, n](Tape& t, const Mat& g) {
    if (t.needs_grad(a)) t.grad_buffer(a).middleCols(start, n) += g;
  });
}

// y.row(k) = a.row(idx[k]).
inline Var gather_rows(const Var& a, std::vector<int> idx) {
  Mat y(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    y.row(static_cast<Index>(k)) = a.value().row(idx[k]);
  }
  return a.tape()->record(std::move(y), {a}, [a, idx = std::move(idx)](Tape& t, const Mat& g) {
    if (!t.needs_grad(a)) return;
    Mat& ga = t.grad_buffer(a);
    for (std::size_t k = 0; k < idx.size(); ++k) ga.row(idx[k]) += g.row(static_cast<Index>(k));
  });
}

// y.row(idx[k]) += a.row(k); y has `rows` rows.
inline Var scatter_add_rows(const Var& a, std::vector<int> idx, Index rows) {
  if (static_cast<Index>(idx.size()) != a.rows()) throw ShapeError("scatter_add_rows: index count mismatch");
  Mat y = Mat::Zero(rows, a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= rows) throw ShapeError("scatter_add_rows: index out of range");
    y.row(idx[k]) += a.value().row(static_cast<Index>(k));
  }
  return a.tape()->record(std::move(y), {a}, [a, idx = std::move(idx)](Tape& t, const Mat& g) {
    if (!t.needs_grad(a)) return;
    Mat ga(static_cast<Index>(idx.size()), g.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) ga.row(static_cast<Index>(k)) = g.row(idx[k]);
    t.accumulate(a, ga);
  });
}

// Column of selected entries a(r_k, c_k).
inline Var pick(const Var& a, std::vector<std::pair<Index, Index>> at) {
  Mat y(static_cast<Index>(at.size()), 1);
  for (std::size_t k = 0; k < at.size(); ++k) y(static_cast<Index>(k), 0) = a.value()(at[k].first, at[k].second);
  return a.tape()->record(std::move(y), {a}, [a, at = std::move(at)](Tape& t, const Mat& g) {
    if (!t.needs_grad(a)) return;
    Mat& ga = t.grad_buffer(a);
    for (std::size_t k = 0; k < at.size(); ++k) ga(at[k].first, at[k].second) += g(static_cast<Index>(k), 0);
  });
}

// Pairwise Euclidean distances between rows: [B x D] -> [B x B]. Squared
// distances are clamped at 1e-12 before the root (zero gradient there).
inline Var pairwise_distance(const Var& e) {
  const Mat& x = e.value();
  const Index b = x.rows();
  Mat sq(b, b);
  for (Index i = 0; i < b; ++i) {
    for (Index j = 0; j < b; ++j) sq(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  }
  constexpr double kFloor = 1e-12;
  Mat y = sq.cwiseMax(kFloor).cwiseSqrt();
  Mat yc = y;
  return e.tape()->record(std::move(y), {e}, [e, sq = std::move(sq), yc = std::move(yc)](Tape& t, const Mat& g) {
    const Mat& x = e.value();
    Mat ge = Mat::Zero(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = 0; j < x.rows(); ++j) {
        if (sq(i, j) <= kFloor) continue;
        const double c = g(i, j) / yc(i, j);
        ge.row(i) += c * (x.row(i) - x.row(j));
        ge.row(j) -= c * (x.row(i) - x.row(j));
      }
    }
    t.accumulate(e, ge);
  });
}

// ---- pooling primitives ---------------------------------------------------

// Generalized mean over row groups, per column:
//   y(g, c) = ( mean_{i in groups[g]} max(|x(i, c)|, floor)^p )^(1/p)
inline Var gem_groups(const Var& x, std::vector<std::vector<int>> groups, double p, double floor = 1e-6) {
  if (!(p > 0.0)) throw ConfigError("gem: p must be positive, got " + std::to_string(p));
  const Mat& v = x.value();
  const Index cols = v.cols();
  Mat y(static_cast<Index>(groups.size()), cols);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& rows = groups[gi];
    if (rows.empty()) throw EmptyInputError("gem: empty pooling group");
    for (Index c = 0; c < cols; ++c) {
      // Scale by the group max so large p cannot overflow.
      double m = floor;
      for (int r : rows) m = std::max(m, std::abs(v(r, c)));
      double acc = 0.0;
      for (int r : rows) acc += std::pow(std::max(std::abs(v(r, c)), floor) / m, p);
      y(static_cast<Index>(gi), c) = m * std::pow(acc / static_cast<double>(rows.size()), 1.0 / p);
    }
  }
  Mat yc = y;
  return x.tape()->record(
      std::move(y), {x}, [x, groups = std::move(groups), p, floor, yc = std::move(yc)](Tape& t, const Mat& g) {
        if (!t.needs_grad(x)) return;
        const Mat& v = x.value();
        Mat& gx = t.grad_buffer(x);
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          const auto& rows = groups[gi];
          const double inv_n = 1.0 / static_cast<double>(rows.size());
          for (Index c = 0; c < v.cols(); ++c) {
            const double out = yc(static_cast<Index>(gi), c);
            // d out / d a_i = inv_n * (a_i / out)^(p-1)
            const double head = g(static_cast<Index>(gi), c) * inv_n;
            for (int r : rows) {
              const double a = std::abs(v(r, c));
              if (a <= floor) continue;
              const double sign = v(r, c) > 0.0 ? 1.0 : -1.0;
              gx(r, c) += head * std::pow(a / out, p - 1.0) * sign;
            }
          }
        }
      });
}

}  // namespace star::ad
