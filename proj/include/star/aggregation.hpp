#pragma once

// Generalized-mean pooling, multi-p pooling, and skeleton-weighted sequence
// aggregation of corrected stripe tokens into one track embedding.

#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "star/nn.hpp"
#include "star/skeleton.hpp"

namespace star::agg {

using ad::Index;
using ad::Mat;
using ad::Tape;
using ad::Var;

struct PoolingConfig {
  std::vector<double> p_values{0.5, 2.0, 3.0, 5.0};

  void validate() const {
    if (p_values.empty()) throw ConfigError("pooling: p_values must not be empty");
    for (double p : p_values) {
      if (!(p > 0.0)) throw ConfigError("pooling: every p must be positive, got " + std::to_string(p));
    }
  }
};

// ((1/N) sum_i |f_i|^p)^(1/p) per channel, |f| clamped at 1e-6. [N x D] -> [1 x D]
inline Var gem_pool(const Var& feats, double p) {
  if (feats.rows() == 0) throw EmptyInputError("gem_pool: no features");
  std::vector<int> all(static_cast<std::size_t>(feats.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return ad::gem_groups(feats, {std::move(all)}, p);
}

inline Mat gem_pool(const Mat& feats, double p) {
  if (feats.rows() == 0) throw EmptyInputError("gem_pool: no features");
  Tape t;
  return gem_pool(t.constant(feats), p).value();
}

// Concatenates GeM over each p (in order) for every row group and projects
// [G x |P|*D] -> [G x D'].
inline Var multi_p_pool(const Var& feats, const std::vector<std::vector<int>>& groups, const PoolingConfig& cfg,
                        const Var& projection) {
  cfg.validate();
  if (projection.rows() != static_cast<Index>(cfg.p_values.size()) * feats.cols()) {
    throw ShapeError("multi_p_pool: projection expects " + std::to_string(projection.rows()) + " inputs, have " +
                     std::to_string(cfg.p_values.size() * feats.cols()));
  }
  std::vector<Var> pooled;
  pooled.reserve(cfg.p_values.size());
  for (double p : cfg.p_values) pooled.push_back(ad::gem_groups(feats, groups, p));
  Var cat = pooled.size() == 1 ? pooled.front() : ad::concat_cols(pooled);
  return ad::matmul(cat, projection);
}

inline Mat multi_p_pool(const Mat& feats, const PoolingConfig& cfg, const Mat& projection) {
  if (feats.rows() == 0) throw EmptyInputError("multi_p_pool: no features");
  Tape t;
  std::vector<int> all(static_cast<std::size_t>(feats.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return multi_p_pool(t.constant(feats), {all}, cfg, t.constant(projection)).value();
}

// Block-averaging initialization for the [|P|*D x D] projection.
inline Mat averaging_projection(std::size_t num_p, Index dim) {
  Mat m(static_cast<Index>(num_p) * dim, dim);
  for (std::size_t k = 0; k < num_p; ++k) {
    m.middleRows(static_cast<Index>(k) * dim, dim) = Mat::Identity(dim, dim) / static_cast<double>(num_p);
  }
  return m;
}

enum class AggregationMode {
  kPartWeighted,    // g_n(t) pooled over each part's stripes, weighted by alpha(t, n)
  kGlobalWeighted,  // one g(t) over all stripes, weighted by sum_n alpha(t, n)
  kTemporalAverage  // plain mean over frames of g(t); no skeleton weights
};

struct SequenceInput {
  Var tokens;  // [S*T x D], stripe-major
  int frames = 0;
  int stripes = 0;
};

// G = (1/T) sum_t sum_n alpha(t, n) g_n(t). `weights` is [T x parts] and is
// ignored in kTemporalAverage mode. Returns [1 x D'].
inline Var aggregate_sequence(const SequenceInput& in, const Var* weights, const skeleton::PartStripeMap& stripes,
                              const PoolingConfig& cfg, const Var& projection, AggregationMode mode) {
  const int frames = in.frames;
  const int num_stripes = in.stripes;
  if (frames < 1 || num_stripes < 1 || in.tokens.rows() != static_cast<Index>(frames) * num_stripes) {
    throw ShapeError("aggregate_sequence: token rows do not match T x S");
  }
  auto row = [&](int t, int s) { return s * frames + t; };

  if (mode != AggregationMode::kPartWeighted) {
    std::vector<std::vector<int>> per_frame(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t) {
      for (int s = 0; s < num_stripes; ++s) per_frame[t].push_back(row(t, s));
    }
    Var g = multi_p_pool(in.tokens, per_frame, cfg, projection);  // [T x D]
    if (mode == AggregationMode::kTemporalAverage) return ad::mean_rows(g);
    if (weights == nullptr || weights->rows() != frames) throw ShapeError("aggregate_sequence: weights must be [T x parts]");
    return ad::mean_rows(ad::scale_rows(g, ad::sum_cols(*weights)));
  }

  if (weights == nullptr) throw ShapeError("aggregate_sequence: part-weighted mode needs weights");
  const Index parts = weights->cols();
  if (weights->rows() != frames || static_cast<int>(stripes.size()) != frames) {
    throw ShapeError("aggregate_sequence: weights and stripe map must cover every frame");
  }
  std::vector<std::vector<int>> groups;
  groups.reserve(static_cast<std::size_t>(frames * parts));
  for (int t = 0; t < frames; ++t) {
    if (static_cast<Index>(stripes[t].size()) != parts) throw ShapeError("aggregate_sequence: part count mismatch");
    for (Index n = 0; n < parts; ++n) {
      std::vector<int> rows;
      for (int s : stripes[t][n]) {
        if (s < 0 || s >= num_stripes) throw ShapeError("aggregate_sequence: stripe index out of range");
        rows.push_back(row(t, s));
      }
      if (rows.empty()) {
        spdlog::warn("aggregate_sequence: part {} has no stripes at frame {}; pooling all stripes", n, t);
        for (int s = 0; s < num_stripes; ++s) rows.push_back(row(t, s));
      }
      groups.push_back(std::move(rows));
    }
  }
  Var g = multi_p_pool(in.tokens, groups, cfg, projection);  // [(T*parts) x D], row t*parts + n
  Var flat = ad::reshape(*weights, 1, static_cast<Index>(frames) * parts);
  return ad::scale(ad::matmul(flat, g), 1.0 / frames);
}

// Track embedding plus its L2-normalized copy used for retrieval.
struct TrackEmbedding {
  Mat raw;         // [1 x D]
  Mat normalized;  // [1 x D], unit norm

  static TrackEmbedding from(const Mat& g) {
    TrackEmbedding e{g, g};
    const double n = g.norm();
    if (n > 0.0) e.normalized /= n;
    return e;
  }
};

}  // namespace star::agg
