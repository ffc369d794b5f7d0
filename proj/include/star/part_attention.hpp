#pragma once

// Graph attention over the spatial-temporal skeleton graph and per-frame
// body-part contribution weights.

#include <string>
#include <vector>

#include "star/nn.hpp"
#include "star/skeleton.hpp"

namespace star::parts {

using ad::Index;
using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;
using skeleton::DirectedEdges;

// Single-head GAT layer: weight W [in x out], attention vector a [2*out x 1]
// split as (a_dst, a_src).
struct GatLayer {
  Parameter* weight = nullptr;
  Parameter* attn = nullptr;
  double slope = 0.2;

  static GatLayer create(nn::ParamStore& ps, const std::string& name, Index in, Index out, double slope,
                         nn::Rng& rng) {
    GatLayer l;
    l.weight = &ps.add(name + ".weight", nn::uniform_mat(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))));
    l.attn = &ps.add(name + ".attn", nn::uniform_mat(rng, 2 * out, 1, 1.0 / std::sqrt(static_cast<double>(out))));
    l.slope = slope;
    return l;
  }

  Index out() const { return weight->value.cols(); }
};

struct GatConfig {
  Index joint_embedding = 8;
  Index hidden = 32;
  double slope = 0.2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  // Small output scale keeps the initial part weights close to uniform.
  double bn_gamma_init = 0.1;
};

struct GatParams {
  Parameter* joint_embedding = nullptr;  // [J x E]
  GatLayer layer1;
  GatLayer layer2;
  nn::BatchNorm bn;

  static GatParams create(nn::ParamStore& ps, const std::string& prefix, int joints, const GatConfig& cfg,
                          nn::Rng& rng) {
    GatParams p;
    p.joint_embedding = &ps.add(prefix + ".joint_embedding", nn::uniform_mat(rng, joints, cfg.joint_embedding, 1.0));
    p.layer1 = GatLayer::create(ps, prefix + ".gat1", 3 + cfg.joint_embedding, cfg.hidden, cfg.slope, rng);
    p.layer2 = GatLayer::create(ps, prefix + ".gat2", cfg.hidden, cfg.hidden, cfg.slope, rng);
    p.bn = nn::BatchNorm::create(ps, prefix + ".bn", cfg.hidden);
    p.bn.momentum = cfg.bn_momentum;
    p.bn.eps = cfg.bn_eps;
    p.bn.gamma->value.setConstant(cfg.bn_gamma_init);
    return p;
  }
};

struct GatOutput {
  Var h;     // [N x out]
  Var attn;  // [E x 1], one coefficient per directed edge
};

// alpha_e = softmax over incoming edges of dst(e) of
//   LeakyReLU(a_dst . W h_dst + a_src . W h_src);
// h'_i = ELU(sum_e alpha_e W h_src(e)).
inline GatOutput gat_layer(Tape& t, const Var& x, const DirectedEdges& edges, const GatLayer& layer) {
  if (x.rows() != edges.num_nodes) throw ShapeError("gat_layer: node count mismatch with graph");
  edges.check_incoming();
  const Index f = layer.out();
  Var wh = ad::matmul(x, t.param(*layer.weight));
  Var a = t.param(*layer.attn);
  Var score_dst = ad::matmul(wh, ad::slice_rows(a, 0, f));
  Var score_src = ad::matmul(wh, ad::slice_rows(a, f, f));
  Var logits = ad::leaky_relu(ad::add(ad::gather_rows(score_dst, edges.dst), ad::gather_rows(score_src, edges.src)),
                              layer.slope);
  Var alpha = ad::segment_softmax(logits, edges.dst, edges.num_nodes);
  Var messages = ad::scale_rows(ad::gather_rows(wh, edges.src), alpha);
  Var h = ad::elu(ad::scatter_add_rows(messages, edges.dst, edges.num_nodes));
  return {h, alpha};
}

// (x / width, y / height, conf) concatenated with the learned joint embedding.
inline Var node_input(Tape& t, const Mat& raw, const std::vector<int>& joint_ids, const GatParams& p) {
  if (raw.rows() != static_cast<Index>(joint_ids.size()) || raw.cols() != 3) {
    throw ShapeError("node_input: expected [N x 3] raw features with one joint id per node");
  }
  Var emb = ad::gather_rows(t.param(*p.joint_embedding), joint_ids);
  return ad::concat_cols({t.constant(raw), emb});
}

// layer1 -> layer2 -> BN. Returns the normalized node features and the
// layer-2 attention coefficients.
inline GatOutput gat_forward(Tape& t, const Var& input, const DirectedEdges& edges, const GatParams& p, bool training,
                             bool update_stats = true) {
  GatOutput l1 = gat_layer(t, input, edges, p.layer1);
  GatOutput l2 = gat_layer(t, l1.h, edges, p.layer2);
  return {p.bn(t, l2.h, training, update_stats), l2.attn};
}

// For a graph made of `tracks` consecutive blocks of T*J nodes, scores each
// (track, frame, part) by the mean over the part's joints of
// || sum_j alpha_ij h_j ||_2 and normalizes across parts with a softmax.
// Result is [(tracks * T) x parts], row b * T + t.
inline Var part_weights(Tape& t, const Var& h, const Var& attn, const DirectedEdges& edges,
                        const skeleton::Topology& topo, int frames, int joints) {
  if (joints != topo.joints()) throw ConfigError("part_weights: joint count mismatch with topology");
  const int per_track = frames * joints;
  if (per_track == 0 || edges.num_nodes % per_track != 0 || h.rows() != edges.num_nodes) {
    throw ShapeError("part_weights: node count is not a whole number of tracks");
  }
  if (attn.rows() != static_cast<Index>(edges.size())) throw ShapeError("part_weights: one coefficient per edge");
  const int parts = topo.num_parts();
  const auto members = topo.part_members();
  for (int n = 0; n < parts; ++n) {
    if (members[n].empty()) throw ConfigError("part_weights: empty body part '" + topo.part_names[n] + "'");
  }
  const int tracks = edges.num_nodes / per_track;
  Var aggregated = ad::scatter_add_rows(ad::scale_rows(ad::gather_rows(h, edges.src), attn), edges.dst, edges.num_nodes);
  Var norms = ad::row_norm(aggregated);
  std::vector<int> group(static_cast<std::size_t>(edges.num_nodes));
  const Index groups = static_cast<Index>(tracks) * frames * parts;
  Mat inv_count(groups, 1);
  for (int b = 0; b < tracks; ++b) {
    for (int f = 0; f < frames; ++f) {
      for (int j = 0; j < joints; ++j) {
        group[static_cast<std::size_t>(b * per_track + f * joints + j)] = (b * frames + f) * parts + topo.part_of[j];
      }
      for (int n = 0; n < parts; ++n) {
        inv_count((b * frames + f) * parts + n, 0) = 1.0 / static_cast<double>(members[n].size());
      }
    }
  }
  Var scores = ad::mul(ad::scatter_add_rows(norms, group, groups), t.constant(inv_count));
  return ad::softmax_rows(ad::reshape(scores, static_cast<Index>(tracks) * frames, parts));
}

}  // namespace star::parts
