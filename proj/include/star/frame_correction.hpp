#pragma once

// Skeleton-guided frame-level correction.
//
// Edge geometry is embedded per frame and run through an LSTM to produce a
// guidance token per frame. Visual stripe tokens then attend over the
// guidance (time attention, gated by squeeze-and-excitation) and the
// guidance attends over each stripe's visual tokens (visual attention). The
// two enhanced streams are fused by a feed-forward block, gated, and added
// back onto the visual tokens together with a constant epsilon.
//
// Clip tensors are stored stripe-major: token (t, s) lives in row s * T + t.

#include <cmath>
#include <string>
#include <vector>

#include "star/nn.hpp"
#include "star/skeleton.hpp"

namespace star::frame {

using ad::Index;
using ad::Mat;
using ad::Tape;
using ad::Var;

// Visual tokens [T x S x D], stored as [S*T x D].
struct ClipFeatures {
  int frames = 0;
  int stripes = 0;
  Mat tokens;

  Index dim() const { return tokens.cols(); }
  auto token(int t, int s) { return tokens.row(static_cast<Index>(s) * frames + t); }
  auto token(int t, int s) const { return tokens.row(static_cast<Index>(s) * frames + t); }

  static ClipFeatures zeros(int frames, int stripes, Index dim) {
    return {frames, stripes, Mat::Zero(static_cast<Index>(frames) * stripes, dim)};
  }
};

struct CorrectionConfig {
  Index edge_inputs = 48;  // 3 per edge
  Index dim = 64;
  Index heads = 4;
  Index se_ratio = 4;
  double epsilon = 1e-3;
};

struct CorrectionParams {
  nn::Linear edge_fc;
  nn::Lstm lstm;
  nn::MultiHeadAttention time_attn;
  nn::MultiHeadAttention visual_attn;
  nn::SqueezeExcite se;
  nn::FeedForward ffn;
  double epsilon = 1e-3;

  static CorrectionParams create(nn::ParamStore& ps, const std::string& prefix, const CorrectionConfig& cfg,
                                 nn::Rng& rng) {
    CorrectionParams p;
    p.edge_fc = nn::Linear::create(ps, prefix + ".edge_fc", cfg.edge_inputs, cfg.dim, rng);
    p.lstm = nn::Lstm::create(ps, prefix + ".lstm", cfg.dim, cfg.dim, rng);
    p.time_attn = nn::MultiHeadAttention::create(ps, prefix + ".time_attn", cfg.dim, cfg.heads, rng);
    p.visual_attn = nn::MultiHeadAttention::create(ps, prefix + ".visual_attn", cfg.dim, cfg.heads, rng);
    p.se = nn::SqueezeExcite::create(ps, prefix + ".se", cfg.dim, cfg.se_ratio, rng);
    p.ffn = nn::FeedForward::create(ps, prefix + ".ffn", 2 * cfg.dim, 4 * cfg.dim, cfg.dim, rng);
    p.epsilon = cfg.epsilon;
    return p;
  }

  Index dim() const { return edge_fc.out(); }
};

// Per-frame FC input: (scale * d / image_height, sin theta, cos theta) for
// each edge. Bone lengths are a small fraction of the image height; the
// scale brings them to the range of the angle channels.
inline constexpr double kDefaultDistanceScale = 10.0;

inline Mat edge_inputs(const skeleton::EdgeFeatureSequence& edges, double image_height,
                       double distance_scale = kDefaultDistanceScale) {
  Mat m(edges.frames(), 3 * edges.edges());
  for (int t = 0; t < edges.frames(); ++t) {
    for (int e = 0; e < edges.edges(); ++e) {
      m(t, 3 * e) = distance_scale * edges.distance(t, e) / image_height;
      m(t, 3 * e + 1) = std::sin(edges.angle(t, e));
      m(t, 3 * e + 2) = std::cos(edges.angle(t, e));
    }
  }
  return m;
}

// Batched over tracks of equal length: inputs[b] is [T x 3E]. Returns the
// per-track guidance [T x D] (LSTM hidden state at every step).
inline std::vector<Var> encode_edges(Tape& t, const std::vector<Var>& inputs, const CorrectionParams& p) {
  if (inputs.empty()) return {};
  const Index frames = inputs.front().rows();
  if (frames == 0) throw EmptyInputError("encode_edges: no frames");
  for (const Var& in : inputs) {
    if (in.rows() != frames) throw ShapeError("encode_edges: tracks in a batch must share T");
    if (in.cols() != p.edge_fc.in()) {
      throw ShapeError("encode_edges: expected " + std::to_string(p.edge_fc.in()) + " edge inputs, got " +
                       std::to_string(in.cols()));
    }
  }
  const Index batch = static_cast<Index>(inputs.size());
  // Frame-major stack: row t * B + b.
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(frames * batch));
  for (Index f = 0; f < frames; ++f) {
    for (Index b = 0; b < batch; ++b) order.push_back(static_cast<int>(b * frames + f));
  }
  Var stacked = ad::gather_rows(ad::concat_rows(inputs), order);
  Var embedded = p.edge_fc(t, stacked);
  std::vector<Var> steps;
  steps.reserve(static_cast<std::size_t>(frames));
  for (Index f = 0; f < frames; ++f) steps.push_back(ad::slice_rows(embedded, f * batch, batch));
  std::vector<Var> hidden = p.lstm(t, steps);
  // Back to track-major: track b, frame f at row b * T + f.
  Var all = ad::concat_rows(hidden);
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (Index b = 0; b < batch; ++b) {
    std::vector<int> rows;
    for (Index f = 0; f < frames; ++f) rows.push_back(static_cast<int>(f * batch + b));
    out.push_back(ad::gather_rows(all, rows));
  }
  return out;
}

inline Mat encode_edges(const skeleton::EdgeFeatureSequence& edges, double image_height, const CorrectionParams& p,
                        double distance_scale = kDefaultDistanceScale) {
  if (edges.frames() == 0) throw EmptyInputError("encode_edges: no frames");
  Tape t;
  return encode_edges(t, {t.constant(edge_inputs(edges, image_height, distance_scale))}, p).front().value();
}

namespace detail {

inline void check_clip(const Var& x, const Var& guidance, int stripes, Index dim) {
  if (stripes < 1 || x.rows() % stripes != 0) throw ShapeError("clip: row count not divisible by stripe count");
  if (x.rows() / stripes != guidance.rows()) {
    throw ShapeError("clip: visual tokens have " + std::to_string(x.rows() / stripes) + " frames, guidance " +
                     std::to_string(guidance.rows()));
  }
  if (x.cols() != dim || guidance.cols() != dim) throw ShapeError("clip: feature width mismatch");
}

}  // namespace detail

struct TimeAttention {
  Var enhanced;  // [S*T x D]
  Var weights;   // [1 x D], shared by every frame
};

// Stripe tokens query the guidance sequence; SE gates come from the
// stripe-averaged result pooled over time.
inline TimeAttention time_attention(Tape& t, const Var& x, const Var& guidance, int stripes, const CorrectionParams& p,
                                    std::vector<Mat>* probs = nullptr) {
  detail::check_clip(x, guidance, stripes, p.dim());
  const Index frames = guidance.rows();
  Var enhanced = p.time_attn(t, x, guidance, guidance, probs);
  // Mean over stripes -> [T x D]; the SE block then averages over time.
  std::vector<Var> per_stripe;
  for (int s = 0; s < stripes; ++s) per_stripe.push_back(ad::slice_rows(enhanced, s * frames, frames));
  Var stripe_mean = per_stripe.front();
  for (std::size_t s = 1; s < per_stripe.size(); ++s) stripe_mean = ad::add(stripe_mean, per_stripe[s]);
  stripe_mean = ad::scale(stripe_mean, 1.0 / stripes);
  return {enhanced, p.se(t, stripe_mean)};
}

// The guidance sequence queries each stripe's visual tokens over time.
inline Var visual_attention(Tape& t, const Var& guidance, const Var& x, int stripes, const CorrectionParams& p,
                            std::vector<Mat>* probs = nullptr) {
  detail::check_clip(x, guidance, stripes, p.dim());
  const Index frames = guidance.rows();
  const auto& a = p.visual_attn;
  Var qp = a.q(t, guidance);
  Var kp = a.k(t, x);
  Var vp = a.v(t, x);
  std::vector<Var> ctx;
  ctx.reserve(static_cast<std::size_t>(stripes));
  for (int s = 0; s < stripes; ++s) {
    ctx.push_back(
        a.attend_projected(qp, ad::slice_rows(kp, s * frames, frames), ad::slice_rows(vp, s * frames, frames), probs));
  }
  return a.o(t, ad::concat_rows(ctx));
}

// Y = FFN([H_visual; H_time]) * W + X + epsilon.
inline Var correct(Tape& t, const Var& x, const Var& guidance, int stripes, const CorrectionParams& p) {
  TimeAttention ta = time_attention(t, x, guidance, stripes, p);
  Var ho = visual_attention(t, guidance, x, stripes, p);
  Var fused = p.ffn(t, ad::concat_cols({ho, ta.enhanced}));
  return ad::add_scalar(ad::add(ad::mul_row(fused, ta.weights), x), p.epsilon);
}

inline ClipFeatures correct(const ClipFeatures& x, const Mat& guidance, const CorrectionParams& p) {
  Tape t;
  Var y = correct(t, t.constant(x.tokens), t.constant(guidance), x.stripes, p);
  return {x.frames, x.stripes, y.value()};
}

}  // namespace star::frame
