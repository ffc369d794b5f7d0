#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "star/skeleton.hpp"

using namespace star;
using namespace star::skeleton;

namespace {

SkeletonSequence random_skeleton(std::mt19937_64& rng, int frames, int joints, double w = 32, double h = 64) {
  std::uniform_real_distribution<double> ux(0.0, w);
  std::uniform_real_distribution<double> uy(0.0, h);
  std::uniform_real_distribution<double> uc(0.0, 1.0);
  SkeletonSequence s(frames, joints);
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < joints; ++j) {
      s.x(t, j) = ux(rng);
      s.y(t, j) = uy(rng);
      s.conf(t, j) = uc(rng);
    }
  }
  return s;
}

double wrap(double a) {
  while (a <= -std::numbers::pi) a += 2 * std::numbers::pi;
  while (a > std::numbers::pi) a -= 2 * std::numbers::pi;
  return a;
}

}  // namespace

TEST(Topology, Coco17IsValidTree) {
  const auto topo = Topology::coco17();
  EXPECT_NO_THROW(topo.validate());
  EXPECT_EQ(topo.joints(), 17);
  EXPECT_EQ(topo.num_edges(), 16);
  EXPECT_EQ(topo.num_parts(), 5);
}

TEST(Topology, RejectsBrokenGraphs) {
  auto t = Topology::coco17();
  t.edges.pop_back();  // ankle disconnected
  EXPECT_THROW(t.validate(), ConfigError);
  t = Topology::coco17();
  t.edges.push_back(t.edges.front());
  EXPECT_THROW(t.validate(), ConfigError);
  t = Topology::coco17();
  t.edges.push_back({3, 3});
  EXPECT_THROW(t.validate(), ConfigError);
  t = Topology::coco17();
  t.part_of[9] = 7;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Topology, JsonRoundTrip) {
  const auto topo = Topology::coco17();
  const auto back = Topology::from_json(topo.to_json());
  EXPECT_EQ(back.edges, topo.edges);
  EXPECT_EQ(back.part_of, topo.part_of);
  EXPECT_EQ(back.part_names, topo.part_names);
  nlohmann::json bad = topo.to_json();
  bad["parts"][0]["joints"].push_back(5);  // joint 5 already in torso
  EXPECT_THROW(Topology::from_json(bad), ConfigError);
}

TEST(EdgeFeatures, ThreeFourFiveTriangle) {
  Topology topo;
  topo.joint_names = {"a", "b"};
  topo.edges = {{0, 1}};
  topo.part_names = {"all"};
  topo.part_of = {0, 0};
  SkeletonSequence s(1, 2);
  s.x(0, 1) = 3.0;
  s.y(0, 1) = 4.0;
  const auto f = edge_features(s, topo);
  EXPECT_DOUBLE_EQ(f.distance(0, 0), 5.0);
  EXPECT_NEAR(f.angle(0, 0), 0.9273, 1e-4);
  EXPECT_DOUBLE_EQ(f.angle(0, 0), std::atan2(4.0, 3.0));
}

TEST(EdgeFeatures, CoincidentJointsAreZero) {
  Topology topo;
  topo.joint_names = {"a", "b"};
  topo.edges = {{0, 1}};
  topo.part_names = {"all"};
  topo.part_of = {0, 0};
  SkeletonSequence s(1, 2);
  s.x(0, 0) = s.x(0, 1) = 2.0;
  s.y(0, 0) = s.y(0, 1) = 2.0;
  const auto f = edge_features(s, topo);
  EXPECT_EQ(f.distance(0, 0), 0.0);
  EXPECT_EQ(f.angle(0, 0), 0.0);
}

TEST(EdgeFeatures, AngleRangeIsHalfOpen) {
  EXPECT_DOUBLE_EQ(edge_angle(-1.0, -0.0), std::numbers::pi);
  EXPECT_DOUBLE_EQ(edge_angle(-1.0, 0.0), std::numbers::pi);
  EXPECT_EQ(edge_angle(-0.0, -0.0), 0.0);
}

TEST(EdgeFeatures, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(42);
  const auto topo = Topology::coco17();
  const auto s = random_skeleton(rng, 10, 17);
  const auto f = edge_features(s, topo);
  for (int t = 0; t < 10; ++t) {
    for (int e = 0; e < topo.num_edges(); ++e) {
      const int i = topo.edges[e].first;
      const int j = topo.edges[e].second;
      const double dx = s.x(t, j) - s.x(t, i);
      const double dy = s.y(t, j) - s.y(t, i);
      EXPECT_NEAR(f.distance(t, e), std::sqrt(dx * dx + dy * dy), 1e-12);
      EXPECT_NEAR(f.angle(t, e), std::atan2(dy, dx), 1e-12);
    }
  }
}

TEST(EdgeFeatures, AllPairsMode) {
  std::mt19937_64 rng(1);
  const auto topo = Topology::coco17();
  const auto f = edge_features(random_skeleton(rng, 2, 17), topo, EdgeSet::kAllPairs);
  EXPECT_EQ(f.edges(), 17 * 16 / 2);
}

TEST(EdgeFeatures, MismatchedJointsIsConfigError) {
  SkeletonSequence s(2, 5);
  EXPECT_THROW(edge_features(s, Topology::coco17()), ConfigError);
}

TEST(EdgeFeatures, TranslationAndRotationProperties) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::uniform_real_distribution<double> ua(-std::numbers::pi, std::numbers::pi);
  const auto topo = Topology::coco17();
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_skeleton(rng, 3, 17);
    const auto base = edge_features(s, topo);
    const double dx = u(rng), dy = u(rng), phi = ua(rng), cx = u(rng), cy = u(rng);
    SkeletonSequence shifted = s;
    SkeletonSequence rotated = s;
    for (int t = 0; t < 3; ++t) {
      for (int j = 0; j < 17; ++j) {
        shifted.x(t, j) += dx;
        shifted.y(t, j) += dy;
        const double px = s.x(t, j) - cx, py = s.y(t, j) - cy;
        rotated.x(t, j) = cx + std::cos(phi) * px - std::sin(phi) * py;
        rotated.y(t, j) = cy + std::sin(phi) * px + std::cos(phi) * py;
      }
    }
    const auto fs = edge_features(shifted, topo);
    const auto fr = edge_features(rotated, topo);
    for (int t = 0; t < 3; ++t) {
      for (int e = 0; e < topo.num_edges(); ++e) {
        EXPECT_NEAR(fs.distance(t, e), base.distance(t, e), 1e-9);
        EXPECT_NEAR(wrap(fs.angle(t, e) - base.angle(t, e)), 0.0, 1e-9);
        EXPECT_NEAR(fr.distance(t, e), base.distance(t, e), 1e-9);
        EXPECT_NEAR(wrap(fr.angle(t, e) - base.angle(t, e) - phi), 0.0, 1e-9);
      }
    }
  }
}

TEST(StGraph, CountsForSingleAndSixFrames) {
  const auto topo = Topology::coco17();
  std::mt19937_64 rng(3);
  const auto g1 = build_st_graph(random_skeleton(rng, 1, 17), topo, 32, 64);
  EXPECT_EQ(g1.spatial_edges.size(), 16u);
  EXPECT_EQ(g1.temporal_edges.size(), 0u);
  const auto g6 = build_st_graph(random_skeleton(rng, 6, 17), topo, 32, 64);
  EXPECT_EQ(g6.spatial_edges.size(), 96u);
  EXPECT_EQ(g6.temporal_edges.size(), 85u);
  EXPECT_EQ(g6.num_nodes, 102);
  EXPECT_EQ(g6.node(2, 5), 2 * 17 + 5);
}

TEST(StGraph, CountFormulaSweepAndUniqueness) {
  std::mt19937_64 rng(5);
  for (int joints = 2; joints <= 9; ++joints) {
    Topology topo;
    for (int j = 0; j < joints; ++j) topo.joint_names.push_back("j" + std::to_string(j));
    for (int j = 1; j < joints; ++j) topo.edges.emplace_back(j - 1, j);
    topo.part_names = {"p"};
    topo.part_of.assign(joints, 0);
    for (int frames = 1; frames <= 7; ++frames) {
      const auto g = build_st_graph(random_skeleton(rng, frames, joints), topo, 32, 64);
      EXPECT_EQ(g.spatial_edges.size(), static_cast<std::size_t>(frames * (joints - 1)));
      EXPECT_EQ(g.temporal_edges.size(), static_cast<std::size_t>((frames - 1) * joints));
      std::set<std::pair<int, int>> uni;
      for (auto e : g.spatial_edges) uni.insert({std::min(e.first, e.second), std::max(e.first, e.second)});
      for (auto e : g.temporal_edges) uni.insert({std::min(e.first, e.second), std::max(e.first, e.second)});
      EXPECT_EQ(uni.size(), g.spatial_edges.size() + g.temporal_edges.size());
      const auto d = g.directed();
      EXPECT_EQ(d.size(), 2 * uni.size() + static_cast<std::size_t>(g.num_nodes));
      EXPECT_NO_THROW(d.check_incoming());
    }
  }
}

TEST(StGraph, EmptyInput) {
  SkeletonSequence s(0, 17);
  EXPECT_THROW(build_st_graph(s, Topology::coco17(), 32, 64), EmptyInputError);
}

TEST(StGraph, NodeFeaturesNormalized) {
  SkeletonSequence s(1, 17);
  s.x(0, 3) = 16.0;
  s.y(0, 3) = 48.0;
  s.conf(0, 3) = 0.5;
  const auto g = build_st_graph(s, Topology::coco17(), 32, 64);
  EXPECT_DOUBLE_EQ(g.node_feats(3, 0), 0.5);
  EXPECT_DOUBLE_EQ(g.node_feats(3, 1), 0.75);
  EXPECT_DOUBLE_EQ(g.node_feats(3, 2), 0.5);
  EXPECT_EQ(g.joint_ids[3], 3);
}

TEST(PartStripes, HeadInTopStripe) {
  const auto topo = Topology::coco17();
  SkeletonSequence s(1, 17);
  for (int j = 0; j < 17; ++j) s.y(0, j) = 40.0;
  for (int j = 0; j < 5; ++j) s.y(0, j) = 1.0 + j;  // y < 64 / 8
  const auto m = part_stripe_map(s, topo, 8, 64);
  EXPECT_EQ(m[0][0], std::vector<int>{0});
}

TEST(PartStripes, FullHeightPartCoversAllStripes) {
  const auto topo = Topology::coco17();
  SkeletonSequence s(1, 17);
  for (int j = 0; j < 17; ++j) s.y(0, j) = 30.0;
  s.y(0, 13) = 0.0;
  s.y(0, 16) = 64.0;
  const auto m = part_stripe_map(s, topo, 8, 64);
  EXPECT_EQ(m[0][4], (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST(PartStripes, CoverageOracle) {
  std::mt19937_64 rng(9);
  const auto topo = Topology::coco17();
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_skeleton(rng, 4, 17);
    const auto m = part_stripe_map(s, topo, 8, 64);
    for (int t = 0; t < 4; ++t) {
      std::set<int> covered;
      for (const auto& part : m[t]) {
        EXPECT_FALSE(part.empty());
        for (int st : part) {
          EXPECT_GE(st, 0);
          EXPECT_LT(st, 8);
          covered.insert(st);
        }
      }
      for (int j = 0; j < 17; ++j) EXPECT_TRUE(covered.count(stripe_of(s.y(t, j), 8, 64))) << "joint " << j;
    }
  }
}

TEST(SkeletonSequence, ValidationAndClamp) {
  SkeletonSequence s(2, 3);
  s.conf(0, 0) = 1.5;
  EXPECT_THROW(s.validate(), DataError);
  s.conf(0, 0) = 1.0;
  s.x(1, 2) = -4.0;
  s.y(1, 2) = 90.0;
  s.clamp_to(32, 64);
  EXPECT_EQ(s.x(1, 2), 0.0);
  EXPECT_EQ(s.y(1, 2), 64.0);
  EXPECT_NO_THROW(s.validate());
  const auto back = SkeletonSequence::from_json(s.to_json());
  EXPECT_EQ(back.raw(), s.raw());
}
