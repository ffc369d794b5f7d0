#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "star/gradcheck.hpp"
#include "star/part_attention.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace star;
using ad::Mat;
using ad::Tape;
using ad::Var;
using skeleton::DirectedEdges;
using star::testing::random_mat;
using star::testing::five_joint_topology;

namespace {

parts::GatLayer make_layer(nn::ParamStore& ps, ad::Index in, ad::Index out, std::uint64_t seed) {
  nn::Rng rng(seed);
  return parts::GatLayer::create(ps, "gat", in, out, 0.2, rng);
}

// Random graph with self-loops plus `extra` random directed edges.
DirectedEdges random_graph(std::mt19937_64& rng, int nodes, int extra) {
  DirectedEdges g;
  g.num_nodes = nodes;
  for (int n = 0; n < nodes; ++n) {
    g.src.push_back(n);
    g.dst.push_back(n);
  }
  std::uniform_int_distribution<int> pick(0, nodes - 1);
  for (int e = 0; e < extra; ++e) {
    g.src.push_back(pick(rng));
    g.dst.push_back(pick(rng));
  }
  return g;
}

double elu(double x) { return x > 0 ? x : std::expm1(x); }

}  // namespace

TEST(GatLayer, SingletonSelfLoop) {
  nn::ParamStore ps;
  auto layer = make_layer(ps, 3, 4, 1);
  DirectedEdges g{1, {0}, {0}};
  Mat x(1, 3);
  x << 0.3, -0.2, 0.9;
  Tape t;
  auto out = parts::gat_layer(t, t.constant(x), g, layer);
  EXPECT_DOUBLE_EQ(out.attn.value()(0, 0), 1.0);
  Mat wh = x * layer.weight->value;
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(out.h.value()(0, c), elu(wh(0, c)), 1e-15);
}

TEST(GatLayer, IdenticalNodesSplitEvenly) {
  nn::ParamStore ps;
  auto layer = make_layer(ps, 3, 4, 2);
  DirectedEdges g{2, {0, 1, 0, 1}, {0, 0, 1, 1}};
  Mat x = Mat::Constant(2, 3, 0.7);
  Tape t;
  auto out = parts::gat_layer(t, t.constant(x), g, layer);
  for (int e = 0; e < 4; ++e) EXPECT_DOUBLE_EQ(out.attn.value()(e, 0), 0.5);
}

TEST(GatLayer, NodeWithoutIncomingEdgesIsGraphError) {
  nn::ParamStore ps;
  auto layer = make_layer(ps, 3, 4, 3);
  DirectedEdges g{2, {0}, {0}};
  Tape t;
  EXPECT_THROW(parts::gat_layer(t, t.constant(Mat::Zero(2, 3)), g, layer), GraphError);
}

TEST(GatLayer, IncomingAttentionSumsToOne) {
  nn::ParamStore ps;
  auto layer = make_layer(ps, 5, 6, 4);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int nodes = 2 + trial % 20;
    auto g = random_graph(rng, nodes, 3 * nodes);
    Tape t;
    auto out = parts::gat_layer(t, t.constant(random_mat(rng, nodes, 5, -3, 3)), g, layer);
    std::vector<double> sums(nodes, 0.0);
    for (std::size_t e = 0; e < g.size(); ++e) sums[g.dst[e]] += out.attn.value()(static_cast<ad::Index>(e), 0);
    for (double s : sums) EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(GatLayer, PermutationEquivariance) {
  nn::ParamStore ps;
  auto layer = make_layer(ps, 4, 5, 6);
  std::mt19937_64 rng(7);
  const int nodes = 9;
  auto g = random_graph(rng, nodes, 20);
  Mat x = random_mat(rng, nodes, 4);
  std::vector<int> perm(nodes);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);  // old node i -> new node perm[i]
  DirectedEdges gp{nodes, {}, {}};
  for (std::size_t e = 0; e < g.size(); ++e) {
    gp.src.push_back(perm[g.src[e]]);
    gp.dst.push_back(perm[g.dst[e]]);
  }
  Mat xp(nodes, 4);
  for (int i = 0; i < nodes; ++i) xp.row(perm[i]) = x.row(i);
  Tape t;
  auto a = parts::gat_layer(t, t.constant(x), g, layer);
  auto b = parts::gat_layer(t, t.constant(xp), gp, layer);
  for (int i = 0; i < nodes; ++i) {
    EXPECT_LT((a.h.value().row(i) - b.h.value().row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
  }
  for (std::size_t e = 0; e < g.size(); ++e) {
    const auto k = static_cast<ad::Index>(e);
    EXPECT_NEAR(a.attn.value()(k, 0), b.attn.value()(k, 0), 1e-12);
  }
}

TEST(GatLayer, SoftmaxShiftInvariance) {
  std::mt19937_64 rng(8);
  auto g = random_graph(rng, 6, 14);
  Mat logits = random_mat(rng, static_cast<ad::Index>(g.size()), 1, -4, 4);
  Mat shifted = logits;
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::vector<double> shift(6);
  for (double& s : shift) s = u(rng);
  for (std::size_t e = 0; e < g.size(); ++e) shifted(static_cast<ad::Index>(e), 0) += shift[g.dst[e]];
  Tape t;
  Mat a = ad::segment_softmax(t.constant(logits), g.dst, 6).value();
  Mat b = ad::segment_softmax(t.constant(shifted), g.dst, 6).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(GatForward, ShapeForSixFramesOfCoco) {
  nn::ParamStore ps;
  nn::Rng rng(1);
  auto p = parts::GatParams::create(ps, "gat", 17, {}, rng);
  std::mt19937_64 r2(2);
  skeleton::SkeletonSequence s(6, 17);
  for (int t = 0; t < 6; ++t) {
    for (int j = 0; j < 17; ++j) {
      s.x(t, j) = 32 * nn::uniform(rng, 0, 1);
      s.y(t, j) = 64 * nn::uniform(rng, 0, 1);
      s.conf(t, j) = 1.0;
    }
  }
  auto g = skeleton::build_st_graph(s, skeleton::Topology::coco17(), 32, 64);
  Tape t;
  auto out = parts::gat_forward(t, parts::node_input(t, g.node_feats, g.joint_ids, p), g.directed(), p, true);
  EXPECT_EQ(out.h.rows(), 102);
  EXPECT_EQ(out.h.cols(), 32);
  EXPECT_EQ(out.attn.rows(), static_cast<ad::Index>(g.directed().size()));
}

TEST(GatForward, EvalBatchNormIdentity) {
  nn::ParamStore ps;
  nn::Rng rng(3);
  parts::GatConfig cfg;
  cfg.bn_eps = 0.0;
  cfg.bn_gamma_init = 1.0;
  auto p = parts::GatParams::create(ps, "gat", 5, cfg, rng);
  std::mt19937_64 r2(4);
  auto g = random_graph(r2, 10, 15);
  std::vector<int> ids(10);
  for (int i = 0; i < 10; ++i) ids[i] = i % 5;
  Mat raw = random_mat(r2, 10, 3, 0, 1);
  Tape t;
  Var in = parts::node_input(t, raw, ids, p);
  auto out = parts::gat_forward(t, in, g, p, /*training=*/false);
  auto l2 = parts::gat_layer(t, parts::gat_layer(t, in, g, p.layer1).h, g, p.layer2);
  EXPECT_TRUE(out.h.value() == l2.h.value());
}

TEST(GatForward, GradientMatchesFiniteDifferences) {
  nn::ParamStore ps;
  nn::Rng rng(5);
  parts::GatConfig cfg;
  cfg.joint_embedding = 3;
  cfg.hidden = 6;
  auto p = parts::GatParams::create(ps, "gat", 5, cfg, rng);
  std::mt19937_64 r2(6);
  auto g = random_graph(r2, 10, 20);
  std::vector<int> ids(10);
  for (int i = 0; i < 10; ++i) ids[i] = i % 5;
  Mat raw = random_mat(r2, 10, 3, 0, 1);
  Mat w = random_mat(r2, 10, 6);
  auto rep = gradcheck::check(ps, [&](Tape& t) {
    auto out = parts::gat_forward(t, parts::node_input(t, raw, ids, p), g, p, true, false);
    return ad::sum_all(ad::mul(ad::tanh(out.h), t.constant(w)));
  });
  EXPECT_EQ(rep.tensors.size(), 7u);
  for (const auto& e : rep.tensors) EXPECT_LT(e.relative_error, 1e-4) << e.name;
}

TEST(PartWeights, UniformUnderSymmetry) {
  skeleton::Topology topo;
  topo.joint_names = {"a", "b", "c", "d"};
  topo.edges = {{0, 1}, {1, 2}, {2, 3}};
  topo.part_names = {"p0", "p1"};
  topo.part_of = {0, 0, 1, 1};
  skeleton::SkeletonSequence s(3, 4);
  auto g = skeleton::build_st_graph(s, topo, 32, 64);
  auto edges = g.directed();
  Tape t;
  Var h = t.constant(Mat::Constant(g.num_nodes, 5, 0.4));
  // Uniform attention per destination.
  std::vector<int> in(g.num_nodes, 0);
  for (int d : edges.dst) ++in[d];
  Mat attn(static_cast<ad::Index>(edges.size()), 1);
  for (std::size_t e = 0; e < edges.size(); ++e) attn(static_cast<ad::Index>(e), 0) = 1.0 / in[edges.dst[e]];
  Mat w = parts::part_weights(t, h, t.constant(attn), edges, topo, 3, 4).value();
  EXPECT_LT((w.array() - 0.5).abs().maxCoeff(), 1e-12);
}

TEST(PartWeights, DominantPartGetsLargerWeight) {
  const auto topo = five_joint_topology();
  std::mt19937_64 rng(9);
  const int frames = 4;
  skeleton::SkeletonSequence s(frames, 5);
  auto g = skeleton::build_st_graph(s, topo, 32, 64);
  auto edges = g.directed();
  Mat h = random_mat(rng, g.num_nodes, 6, -1e-3, 1e-3);
  for (int n = 0; n < g.num_nodes; ++n) {
    if (topo.part_of[g.joint_ids[n]] == 1) h.row(n) = random_mat(rng, 1, 6) * 10.0;
  }
  Tape t;
  Var hv = t.constant(h);
  Var attn = ad::segment_softmax(t.constant(random_mat(rng, static_cast<ad::Index>(edges.size()), 1)), edges.dst,
                                 g.num_nodes);
  Mat w = parts::part_weights(t, hv, attn, edges, topo, frames, 5).value();
  // Direct computation of the scores for comparison.
  Mat agg = Mat::Zero(g.num_nodes, 6);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    agg.row(edges.dst[e]) += attn.value()(static_cast<ad::Index>(e), 0) * h.row(edges.src[e]);
  }
  for (int f = 0; f < frames; ++f) {
    EXPECT_GT(w(f, 1), 1.0 / 3.0);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(3);
    for (int j = 0; j < 5; ++j) score(topo.part_of[j]) += agg.row(f * 5 + j).norm() / (j == 0 ? 1.0 : 2.0);
    Eigen::VectorXd e = (score.array() - score.maxCoeff()).exp();
    e /= e.sum();
    for (int n = 0; n < 3; ++n) EXPECT_NEAR(w(f, n), e(n), 1e-9);  // row_norm carries a 1e-12 floor
  }
}

TEST(PartWeights, RowsAreDistributionsAndBatched) {
  nn::ParamStore ps;
  nn::Rng rng(10);
  const auto topo = five_joint_topology();
  parts::GatConfig cfg;
  cfg.hidden = 8;
  auto p = parts::GatParams::create(ps, "gat", 5, cfg, rng);
  std::mt19937_64 r2(11);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<skeleton::DirectedEdges> graphs;
    Mat raw(0, 3);
    std::vector<int> ids;
    const int tracks = 1 + trial % 3;
    const int frames = 1 + trial % 4;
    for (int b = 0; b < tracks; ++b) {
      skeleton::SkeletonSequence s(frames, 5);
      auto g = skeleton::build_st_graph(s, topo, 32, 64);
      graphs.push_back(g.directed());
      Mat r = random_mat(r2, g.num_nodes, 3, 0, 1);
      Mat grown(raw.rows() + r.rows(), 3);
      grown << raw, r;
      raw = grown;
      ids.insert(ids.end(), g.joint_ids.begin(), g.joint_ids.end());
    }
    auto edges = DirectedEdges::disjoint_union(graphs);
    Tape t;
    auto out = parts::gat_forward(t, parts::node_input(t, raw, ids, p), edges, p, tracks * frames * 5 > 1, false);
    Mat w = parts::part_weights(t, out.h, out.attn, edges, topo, frames, 5).value();
    ASSERT_EQ(w.rows(), tracks * frames);
    EXPECT_GE(w.minCoeff(), 0.0);
    for (ad::Index r = 0; r < w.rows(); ++r) EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-6);
  }
}

TEST(PartWeights, EmptyPartIsConfigError) {
  auto topo = five_joint_topology();
  topo.part_names.push_back("ghost");
  skeleton::SkeletonSequence s(1, 5);
  auto g = skeleton::build_st_graph(s, topo, 32, 64);
  auto edges = g.directed();
  Tape t;
  Var h = t.constant(Mat::Ones(g.num_nodes, 2));
  Var a = t.constant(Mat::Ones(static_cast<ad::Index>(edges.size()), 1));
  EXPECT_THROW(parts::part_weights(t, h, a, edges, topo, 1, 5), ConfigError);
}
