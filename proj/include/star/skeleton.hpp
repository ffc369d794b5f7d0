#pragma once

// Skeleton data types, joint topology, per-edge geometry, spatial-temporal
// graph construction, and the body-part to feature-stripe bridge.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/autograd.hpp"
#include "star/error.hpp"

namespace star::skeleton {

using ad::Mat;

// [T x J x 3] of (x px, y px, confidence).
class SkeletonSequence {
 public:
  SkeletonSequence() = default;
  SkeletonSequence(int frames, int joints) : frames_(frames), joints_(joints), data_(size_(frames, joints), 0.0) {}

  int frames() const { return frames_; }
  int joints() const { return joints_; }

  double& x(int t, int j) { return data_[idx(t, j)]; }
  double& y(int t, int j) { return data_[idx(t, j) + 1]; }
  double& conf(int t, int j) { return data_[idx(t, j) + 2]; }
  double x(int t, int j) const { return data_[idx(t, j)]; }
  double y(int t, int j) const { return data_[idx(t, j) + 1]; }
  double conf(int t, int j) const { return data_[idx(t, j) + 2]; }

  const std::vector<double>& raw() const { return data_; }

  // Throws ConfigError if T < 1, J < 2, anything is non-finite, or a
  // confidence lies outside [0, 1].
  void validate() const {
    if (frames_ < 1) throw EmptyInputError("skeleton: sequence has no frames");
    if (joints_ < 2) throw ConfigError("skeleton: need at least two joints");
    for (int t = 0; t < frames_; ++t) {
      for (int j = 0; j < joints_; ++j) {
        if (!std::isfinite(x(t, j)) || !std::isfinite(y(t, j)) || !std::isfinite(conf(t, j))) {
          throw DataError("skeleton: non-finite coordinate at frame " + std::to_string(t));
        }
        if (conf(t, j) < 0.0 || conf(t, j) > 1.0) throw DataError("skeleton: confidence outside [0, 1]");
      }
    }
  }

  void clamp_to(double width, double height) {
    for (int t = 0; t < frames_; ++t) {
      for (int j = 0; j < joints_; ++j) {
        x(t, j) = std::clamp(x(t, j), 0.0, width);
        y(t, j) = std::clamp(y(t, j), 0.0, height);
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json frames = nlohmann::json::array();
    for (int t = 0; t < frames_; ++t) {
      nlohmann::json joints = nlohmann::json::array();
      for (int j = 0; j < joints_; ++j) joints.push_back({x(t, j), y(t, j), conf(t, j)});
      frames.push_back(std::move(joints));
    }
    return frames;
  }

  static SkeletonSequence from_json(const nlohmann::json& js) {
    if (!js.is_array() || js.empty()) throw DataError("skeleton json: expected a non-empty [T][J][3] array");
    const int t_count = static_cast<int>(js.size());
    const int j_count = static_cast<int>(js.front().size());
    SkeletonSequence s(t_count, j_count);
    for (int t = 0; t < t_count; ++t) {
      if (!js[t].is_array() || static_cast<int>(js[t].size()) != j_count) {
        throw DataError("skeleton json: ragged joint array at frame " + std::to_string(t));
      }
      for (int j = 0; j < j_count; ++j) {
        const auto& p = js[t][j];
        if (!p.is_array() || p.size() != 3) throw DataError("skeleton json: joint entries must be [x, y, conf]");
        s.x(t, j) = p[0].get<double>();
        s.y(t, j) = p[1].get<double>();
        s.conf(t, j) = p[2].get<double>();
      }
    }
    return s;
  }

 private:
  static std::size_t size_(int frames, int joints) {
    return static_cast<std::size_t>(std::max(frames, 0)) * static_cast<std::size_t>(std::max(joints, 0)) * 3;
  }
  std::size_t idx(int t, int j) const {
    return (static_cast<std::size_t>(t) * static_cast<std::size_t>(joints_) + static_cast<std::size_t>(j)) * 3;
  }

  int frames_ = 0;
  int joints_ = 0;
  std::vector<double> data_;
};

using Edge = std::pair<int, int>;

struct Topology {
  std::vector<std::string> joint_names;
  std::vector<Edge> edges;  // i < j
  std::vector<std::string> part_names;
  std::vector<int> part_of;  // joint -> part id

  int joints() const { return static_cast<int>(joint_names.size()); }
  int num_parts() const { return static_cast<int>(part_names.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }

  std::vector<std::vector<int>> part_members() const {
    std::vector<std::vector<int>> m(part_names.size());
    for (int j = 0; j < joints(); ++j) m[part_of[j]].push_back(j);
    return m;
  }

  // Edges connected, no self loops or duplicates, i < j, every joint in
  // exactly one non-empty part.
  void validate() const {
    const int j_count = joints();
    if (j_count < 2) throw ConfigError("topology: need at least two joints");
    std::set<Edge> seen;
    for (const auto& [a, b] : edges) {
      if (a < 0 || b < 0 || a >= j_count || b >= j_count) throw ConfigError("topology: edge references unknown joint");
      if (a == b) throw ConfigError("topology: self-loop on joint " + std::to_string(a));
      if (a > b) throw ConfigError("topology: edges must be ordered (i < j)");
      if (!seen.insert({a, b}).second) {
        throw ConfigError("topology: duplicate edge (" + std::to_string(a) + ", " + std::to_string(b) + ")");
      }
    }
    std::vector<std::vector<int>> adj(j_count);
    for (const auto& [a, b] : edges) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::vector<char> visited(j_count, 0);
    std::queue<int> q;
    q.push(0);
    visited[0] = 1;
    int reached = 1;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : adj[u]) {
        if (!visited[v]) {
          visited[v] = 1;
          ++reached;
          q.push(v);
        }
      }
    }
    if (reached != j_count) throw ConfigError("topology: skeleton graph is not connected");
    if (static_cast<int>(part_of.size()) != j_count) throw ConfigError("topology: part map must cover every joint");
    if (part_names.empty()) throw ConfigError("topology: no body parts");
    std::vector<int> count(part_names.size(), 0);
    for (int p : part_of) {
      if (p < 0 || p >= num_parts()) throw ConfigError("topology: joint assigned to unknown part");
      ++count[p];
    }
    for (std::size_t p = 0; p < count.size(); ++p) {
      if (count[p] == 0) throw ConfigError("topology: empty body part '" + part_names[p] + "'");
    }
  }

  // Every unordered joint pair, for the all-pairs edge-feature mode.
  std::vector<Edge> all_pairs() const {
    std::vector<Edge> out;
    for (int a = 0; a < joints(); ++a) {
      for (int b = a + 1; b < joints(); ++b) out.emplace_back(a, b);
    }
    return out;
  }

  // COCO-17 keypoints as a 16-bone tree and five parts.
  static Topology coco17() {
    Topology t;
    t.joint_names = {"nose",       "left_eye",    "right_eye",      "left_ear",  "right_ear",  "left_shoulder",
                     "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip",
                     "right_hip",  "left_knee",   "right_knee",     "left_ankle", "right_ankle"};
    t.edges = {{0, 1},  {0, 2},  {1, 3},   {2, 4},   {0, 5},   {0, 6},   {5, 7},   {7, 9},
               {6, 8},  {8, 10}, {5, 11},  {6, 12},  {11, 13}, {13, 15}, {12, 14}, {14, 16}};
    t.part_names = {"head", "torso", "left_arm", "right_arm", "legs"};
    t.part_of = {0, 0, 0, 0, 0, 1, 1, 2, 3, 2, 3, 1, 1, 4, 4, 4, 4};
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json parts = nlohmann::json::array();
    const auto members = part_members();
    for (int p = 0; p < num_parts(); ++p) parts.push_back({{"name", part_names[p]}, {"joints", members[p]}});
    nlohmann::json e = nlohmann::json::array();
    for (const auto& [a, b] : edges) e.push_back({a, b});
    return {{"joints", joint_names}, {"edges", e}, {"parts", parts}};
  }

  // {"joints": [names], "edges": [[i, j], ...], "parts": [{"name", "joints"}]}
  static Topology from_json(const nlohmann::json& js) {
    Topology t;
    try {
      t.joint_names = js.at("joints").get<std::vector<std::string>>();
      for (const auto& e : js.at("edges")) {
        int a = e.at(0).get<int>();
        int b = e.at(1).get<int>();
        t.edges.emplace_back(std::min(a, b), std::max(a, b));
      }
      t.part_of.assign(t.joint_names.size(), -1);
      for (const auto& p : js.at("parts")) {
        t.part_names.push_back(p.at("name").get<std::string>());
        for (int j : p.at("joints").get<std::vector<int>>()) {
          if (j < 0 || j >= t.joints()) throw ConfigError("topology: part references unknown joint");
          if (t.part_of[j] != -1) throw ConfigError("topology: joint " + std::to_string(j) + " in two parts");
          t.part_of[j] = t.num_parts() - 1;
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("topology json: ") + e.what());
    }
    for (int p : t.part_of) {
      if (p < 0) throw ConfigError("topology: joint without a body part");
    }
    t.validate();
    return t;
  }
};

// [T x E x 2] of (distance px, angle rad in (-pi, pi]).
class EdgeFeatureSequence {
 public:
  EdgeFeatureSequence() = default;
  EdgeFeatureSequence(int frames, int edges)
      : frames_(frames), edges_(edges), data_(static_cast<std::size_t>(frames) * edges * 2, 0.0) {}

  int frames() const { return frames_; }
  int edges() const { return edges_; }
  double& distance(int t, int e) { return data_[(static_cast<std::size_t>(t) * edges_ + e) * 2]; }
  double& angle(int t, int e) { return data_[(static_cast<std::size_t>(t) * edges_ + e) * 2 + 1]; }
  double distance(int t, int e) const { return data_[(static_cast<std::size_t>(t) * edges_ + e) * 2]; }
  double angle(int t, int e) const { return data_[(static_cast<std::size_t>(t) * edges_ + e) * 2 + 1]; }

 private:
  int frames_ = 0;
  int edges_ = 0;
  std::vector<double> data_;
};

// Angle of the vector (dx, dy); the zero vector maps to 0 and the result is
// folded into (-pi, pi].
inline double edge_angle(double dx, double dy) {
  if (dx == 0.0 && dy == 0.0) return 0.0;
  const double a = std::atan2(dy, dx);
  return a <= -std::numbers::pi ? std::numbers::pi : a;
}

enum class EdgeSet { kAnatomical, kAllPairs };

inline EdgeFeatureSequence edge_features(const SkeletonSequence& skel, const Topology& topo,
                                         EdgeSet set = EdgeSet::kAnatomical) {
  if (skel.joints() != topo.joints()) {
    throw ConfigError("edge_features: skeleton has " + std::to_string(skel.joints()) + " joints, topology " +
                      std::to_string(topo.joints()));
  }
  if (skel.frames() < 1) throw EmptyInputError("edge_features: no frames");
  const std::vector<Edge> edges = set == EdgeSet::kAnatomical ? topo.edges : topo.all_pairs();
  EdgeFeatureSequence out(skel.frames(), static_cast<int>(edges.size()));
  for (int t = 0; t < skel.frames(); ++t) {
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [i, j] = edges[e];
      const double dx = skel.x(t, j) - skel.x(t, i);
      const double dy = skel.y(t, j) - skel.y(t, i);
      out.distance(t, static_cast<int>(e)) = std::hypot(dx, dy);
      out.angle(t, static_cast<int>(e)) = edge_angle(dx, dy);
    }
  }
  return out;
}

// Directed edge list for neighbourhood attention: messages flow src -> dst.
struct DirectedEdges {
  int num_nodes = 0;
  std::vector<int> src;
  std::vector<int> dst;

  std::size_t size() const { return src.size(); }

  void check_incoming() const {
    std::vector<int> in(num_nodes, 0);
    for (int d : dst) ++in[d];
    for (int n = 0; n < num_nodes; ++n) {
      if (in[n] == 0) throw GraphError("graph: node " + std::to_string(n) + " has no incoming edges");
    }
  }

  static DirectedEdges disjoint_union(const std::vector<DirectedEdges>& parts) {
    DirectedEdges u;
    for (const auto& p : parts) {
      for (std::size_t e = 0; e < p.size(); ++e) {
        u.src.push_back(p.src[e] + u.num_nodes);
        u.dst.push_back(p.dst[e] + u.num_nodes);
      }
      u.num_nodes += p.num_nodes;
    }
    return u;
  }
};

// Node (t, j) has index t * J + j.
struct SpatioTemporalGraph {
  int frames = 0;
  int joints = 0;
  int num_nodes = 0;
  std::vector<Edge> spatial_edges;   // undirected pairs within a frame
  std::vector<Edge> temporal_edges;  // undirected pairs (t, j) -- (t + 1, j)
  Mat node_feats;                    // [N x 3]: x / width, y / height, conf
  std::vector<int> joint_ids;        // node -> joint index

  int node(int t, int j) const { return t * joints + j; }

  // Both directions of every edge plus one self-loop per node.
  DirectedEdges directed() const {
    DirectedEdges d;
    d.num_nodes = num_nodes;
    const std::size_t count = 2 * (spatial_edges.size() + temporal_edges.size()) + static_cast<std::size_t>(num_nodes);
    d.src.reserve(count);
    d.dst.reserve(count);
    auto both = [&](const Edge& e) {
      d.src.push_back(e.first);
      d.dst.push_back(e.second);
      d.src.push_back(e.second);
      d.dst.push_back(e.first);
    };
    for (const auto& e : spatial_edges) both(e);
    for (const auto& e : temporal_edges) both(e);
    for (int n = 0; n < num_nodes; ++n) {
      d.src.push_back(n);
      d.dst.push_back(n);
    }
    return d;
  }
};

inline SpatioTemporalGraph build_st_graph(const SkeletonSequence& skel, const Topology& topo, double image_width,
                                          double image_height) {
  if (skel.frames() < 1) throw EmptyInputError("build_st_graph: no frames");
  if (skel.joints() != topo.joints()) throw ConfigError("build_st_graph: joint count mismatch with topology");
  SpatioTemporalGraph g;
  g.frames = skel.frames();
  g.joints = skel.joints();
  g.num_nodes = g.frames * g.joints;
  g.spatial_edges.reserve(static_cast<std::size_t>(g.frames) * topo.edges.size());
  for (int t = 0; t < g.frames; ++t) {
    for (const auto& [i, j] : topo.edges) g.spatial_edges.emplace_back(g.node(t, i), g.node(t, j));
  }
  for (int t = 0; t + 1 < g.frames; ++t) {
    for (int j = 0; j < g.joints; ++j) g.temporal_edges.emplace_back(g.node(t, j), g.node(t + 1, j));
  }
  g.node_feats.resize(g.num_nodes, 3);
  g.joint_ids.resize(g.num_nodes);
  for (int t = 0; t < g.frames; ++t) {
    for (int j = 0; j < g.joints; ++j) {
      const int n = g.node(t, j);
      g.node_feats(n, 0) = skel.x(t, j) / image_width;
      g.node_feats(n, 1) = skel.y(t, j) / image_height;
      g.node_feats(n, 2) = skel.conf(t, j);
      g.joint_ids[n] = j;
    }
  }
  return g;
}

// stripes[t][part] = sorted stripe indices overlapping the part's vertical
// extent at frame t.
using PartStripeMap = std::vector<std::vector<std::vector<int>>>;

inline int stripe_of(double y, int num_stripes, double image_height) {
  const int s = static_cast<int>(std::floor(y * num_stripes / image_height));
  return std::clamp(s, 0, num_stripes - 1);
}

inline PartStripeMap part_stripe_map(const SkeletonSequence& skel, const Topology& topo, int num_stripes,
                                     double image_height) {
  if (num_stripes < 1) throw ConfigError("part_stripe_map: need at least one stripe");
  if (skel.joints() != topo.joints()) throw ConfigError("part_stripe_map: joint count mismatch with topology");
  const auto members = topo.part_members();
  PartStripeMap out(skel.frames(), std::vector<std::vector<int>>(topo.num_parts()));
  for (int t = 0; t < skel.frames(); ++t) {
    for (int p = 0; p < topo.num_parts(); ++p) {
      double lo = image_height;
      double hi = 0.0;
      for (int j : members[p]) {
        lo = std::min(lo, skel.y(t, j));
        hi = std::max(hi, skel.y(t, j));
      }
      const int a = stripe_of(lo, num_stripes, image_height);
      const int b = stripe_of(hi, num_stripes, image_height);
      for (int s = a; s <= b; ++s) out[t][p].push_back(s);
    }
  }
  return out;
}

}  // namespace star::skeleton
