#pragma once

// Deterministic synthetic cross-modal gait dataset.
//
// Each identity gets a body (bone lengths, stroke thickness, head size), a
// gait (frequency, phase, per-joint swing amplitude) and a visible-light
// colour per body part. Tracks run forward kinematics over the COCO-17 tree,
// place the figure in the frame with per-camera and per-track jitter, and
// render anti-aliased strokes. Visible tracks use the identity's colours;
// infrared tracks share one intensity profile for everybody and add
// Gaussian noise, so only body shape and motion carry across modalities.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "star/error.hpp"
#include "star/skeleton.hpp"
#include "star/tensor_io.hpp"

namespace star::synth {

using skeleton::SkeletonSequence;
using skeleton::Topology;
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Modality { kVisible, kInfrared };

inline std::string to_string(Modality m) { return m == Modality::kVisible ? "VIS" : "IR"; }

inline Modality modality_from_string(const std::string& s) {
  if (s == "VIS") return Modality::kVisible;
  if (s == "IR") return Modality::kInfrared;
  throw DataError("unknown modality '" + s + "'");
}

inline constexpr int kCamerasPerModality = 3;

// splitmix64 finalizer; combines values into well-spread seeds.
inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix(seed);
  for (auto k : keys) h = mix(h ^ mix(k));
  return h;
}

struct GaitParams {
  int identity_id = 0;
  double height = 0.0;                // nominal body scale, pixels
  std::vector<double> limb_lengths;   // per topology bone, pixels
  double gait_frequency = 0.0;        // cycles per frame
  double phase = 0.0;                 // radians
  std::vector<double> amplitude;      // per joint, swing of the bone ending there
  double thickness = 0.0;             // stroke width, pixels
  double head_radius = 0.0;           // pixels
  double shoulder_angle = 0.0;        // spread of the neck-to-shoulder bones
  std::vector<std::array<double, 3>> colors;  // per body part, visible light

  bool operator==(const GaitParams&) const = default;
};

namespace detail {

// Rest angle of the bone ending at each joint (0 points down, positive to
// image +x) and the phase offset of its swing.
struct Rest {
  double angle;
  double offset;
};

inline const std::array<Rest, 17>& coco_rest() {
  constexpr double pi = std::numbers::pi;
  static const std::array<Rest, 17> r = {{
      {0.0, 0.0},                // nose (root)
      {pi - 0.5, 0.0},           // left eye
      {-(pi - 0.5), 0.0},        // right eye
      {pi / 2 + 0.3, 0.0},       // left ear
      {-(pi / 2 + 0.3), 0.0},    // right ear
      {0.9, 0.0},                // left shoulder (scaled by shoulder_angle)
      {-0.9, 0.0},               // right shoulder
      {0.15, 0.0},               // left elbow
      {-0.15, pi},               // right elbow
      {0.05, 0.3},               // left wrist
      {-0.05, pi + 0.3},         // right wrist
      {-0.12, 0.0},              // left hip
      {0.12, 0.0},               // right hip
      {0.04, pi},                // left knee
      {-0.04, 0.0},              // right knee
      {0.0, pi + 0.6},           // left ankle
      {0.0, 0.6},                // right ankle
  }};
  return r;
}

// Bone length as a fraction of height, indexed by child joint.
inline const std::array<double, 17>& coco_proportions() {
  static const std::array<double, 17> p = {0.0,  0.045, 0.045, 0.045, 0.045, 0.17, 0.17, 0.17, 0.17,
                                           0.15, 0.15,  0.31,  0.31,  0.24,  0.24, 0.24, 0.24};
  return p;
}

// Proportion group shared by left and right: 0 head, 1 neck, 2 upper arm,
// 3 forearm, 4 trunk, 5 thigh, 6 shin.
inline const std::array<int, 17>& coco_length_group() {
  static const std::array<int, 17> g = {0, 0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6};
  return g;
}

// Every COCO bone is stored as (parent, child) with the nose as root.
inline void require_coco(const Topology& topo) {
  if (topo.joints() != 17 || topo.edges != Topology::coco17().edges) {
    throw ConfigError("synthdata: the renderer drives the 17-joint, 16-bone COCO tree");
  }
}

}  // namespace detail

// Deterministic in (seed, identity_id).
inline GaitParams generate_identity(std::uint64_t seed, int identity_id, const Topology& topo = Topology::coco17()) {
  detail::require_coco(topo);
  std::mt19937_64 rng(derive_seed(seed, {0x1d, static_cast<std::uint64_t>(identity_id)}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  GaitParams g;
  g.identity_id = identity_id;
  g.height = range(38.0, 54.0);
  std::array<double, 7> group_scale;
  for (double& s : group_scale) s = range(0.75, 1.25);
  const auto& prop = detail::coco_proportions();
  const auto& group = detail::coco_length_group();
  g.limb_lengths.resize(topo.edges.size());
  for (std::size_t e = 0; e < topo.edges.size(); ++e) {
    const int child = topo.edges[e].second;
    g.limb_lengths[e] = g.height * prop[child] * group_scale[group[child]];
  }
  g.gait_frequency = range(0.04, 0.16);
  g.phase = range(0.0, 2.0 * std::numbers::pi);
  const double arm = range(0.15, 0.6);
  const double fore = range(0.0, 0.35);
  const double leg = range(0.1, 0.5);
  const double shin = range(0.0, 0.4);
  const double head = range(0.0, 0.12);
  g.amplitude = {0.0, head, head, head, head, 0.05, 0.05, arm, arm, arm + fore, arm + fore,
                 0.04, 0.04, leg, leg, leg + shin, leg + shin};
  g.thickness = range(1.2, 3.0);
  g.head_radius = range(2.0, 4.0);
  g.shoulder_angle = range(0.75, 1.25);
  g.colors.resize(static_cast<std::size_t>(topo.num_parts()));
  for (auto& c : g.colors) {
    for (double& ch : c) ch = range(0.2, 1.0);
  }
  return g;
}

struct NoiseConfig {
  double vis_sigma = 0.02;     // pixel noise on visible frames
  double ir_sigma = 0.08;      // pixel noise on infrared frames
  double joint_sigma = 0.5;    // pose-estimate jitter, pixels
  bool occlusion = true;
  int max_occluded_frames = 3;
  double occlusion_prob = 0.6;  // per frame, until the cap is reached
  int band_min = 10;
  int band_max = 24;
  bool colored_occluders = true;  // flat random color (gray in IR); false blanks to 0

  void validate() const {
    if (vis_sigma < 0 || ir_sigma < 0 || joint_sigma < 0) throw ConfigError("noise: sigmas must be >= 0");
    if (max_occluded_frames < 0 || band_min < 1 || band_max < band_min) throw ConfigError("noise: bad occlusion band");
    if (occlusion_prob < 0 || occlusion_prob > 1) throw ConfigError("noise: occlusion_prob outside [0, 1]");
  }
};

struct OcclusionBand {
  int frame = 0;
  int y0 = 0;  // first blanked row
  int y1 = 0;  // one past the last blanked row

  bool contains(double y) const { return y >= y0 && y < y1; }
  bool operator==(const OcclusionBand&) const = default;
};

struct TrackRecord {
  int identity_id = 0;
  Modality modality = Modality::kVisible;
  int camera_id = 0;
  int track_id = 0;
  int height = 0;
  int width = 0;
  MatF frames;  // [T x H*W*3], row-major HWC per frame, values in [0, 1]
  SkeletonSequence skeleton;
  std::vector<OcclusionBand> occlusions;

  int num_frames() const { return static_cast<int>(frames.rows()); }
};

struct TrackSpec {
  Modality modality = Modality::kVisible;
  int camera_id = 0;
  int frames = 6;
  int height = 64;
  int width = 32;
  std::uint64_t seed = 0;  // per-track randomness (timing, jitter, noise)
  std::uint64_t camera_seed = 0;
};

namespace detail {

struct Point {
  double x, y;
};

inline double segment_distance(double px, double py, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

// Shared infrared intensity per body part (head, torso, arms, legs).
inline double ir_intensity(int part) {
  static const std::array<double, 5> level = {0.95, 0.85, 0.75, 0.75, 0.7};
  return level[static_cast<std::size_t>(std::clamp(part, 0, 4))];
}

}  // namespace detail

// Forward kinematics for frame index `tau` with the root at the origin.
inline std::vector<detail::Point> pose_at(const GaitParams& g, const Topology& topo, double tau) {
  const auto& rest = detail::coco_rest();
  std::vector<detail::Point> p(static_cast<std::size_t>(topo.joints()), {0.0, 0.0});
  const double omega = 2.0 * std::numbers::pi * g.gait_frequency;
  p[0] = {0.0, 0.8 * std::sin(2.0 * (omega * tau + g.phase))};  // vertical bob at twice the step rate
  // Edges are listed parent-first in BFS order, so one pass suffices.
  for (std::size_t e = 0; e < topo.edges.size(); ++e) {
    const auto [parent, child] = topo.edges[e];
    double base = rest[child].angle;
    if (child == 5 || child == 6) base *= g.shoulder_angle;
    const double a = base + g.amplitude[child] * std::sin(omega * tau + g.phase + rest[child].offset);
    const double len = g.limb_lengths[e];
    p[child] = {p[parent].x + len * std::sin(a), p[parent].y + len * std::cos(a)};
  }
  return p;
}

inline TrackRecord synthesize_track(const GaitParams& g, const TrackSpec& spec, const NoiseConfig& noise,
                                    const Topology& topo = Topology::coco17()) {
  detail::require_coco(topo);
  noise.validate();
  if (spec.frames < 1) throw ConfigError("synthesize_track: need at least one frame");
  const int T = spec.frames, H = spec.height, W = spec.width;
  std::mt19937_64 rng(spec.seed);
  std::mt19937_64 cam_rng(spec.camera_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);

  // Camera: fixed zoom and background per camera id.
  const double cam_scale = 0.9 + 0.12 * u(cam_rng);
  std::array<double, 3> cam_bg;
  for (double& c : cam_bg) c = 0.05 + 0.2 * u(cam_rng);

  const double start = std::floor(40.0 * u(rng));
  const double track_scale = cam_scale * (0.96 + 0.08 * u(rng));
  const double shift_x = 1.5 * n01(rng);
  const double shift_y = 1.5 * n01(rng);

  std::vector<std::vector<detail::Point>> pose(static_cast<std::size_t>(T));
  double min_x = 1e9, max_x = -1e9, min_y = 1e9, max_y = -1e9;
  for (int t = 0; t < T; ++t) {
    pose[t] = pose_at(g, topo, start + t);
    for (const auto& p : pose[t]) {
      min_x = std::min(min_x, p.x);
      max_x = std::max(max_x, p.x);
      min_y = std::min(min_y, p.y - g.head_radius);
      max_y = std::max(max_y, p.y);
    }
  }
  // Fit the whole track inside the frame with a 2-pixel margin.
  const double margin = 2.0;
  const double fit = std::min((W - 2 * margin) / std::max(max_x - min_x, 1e-6),
                              (H - 2 * margin) / std::max(max_y - min_y, 1e-6));
  const double scale = std::min(track_scale, fit);
  const double span_x = (max_x - min_x) * scale, span_y = (max_y - min_y) * scale;
  const double off_x = std::clamp(0.5 * (W - span_x) + shift_x, margin, W - margin - span_x) - min_x * scale;
  const double off_y = std::clamp(0.5 * (H - span_y) + shift_y, margin, H - margin - span_y) - min_y * scale;
  for (auto& frame : pose) {
    for (auto& p : frame) p = {p.x * scale + off_x, p.y * scale + off_y};
  }

  TrackRecord rec;
  rec.modality = spec.modality;
  rec.camera_id = spec.camera_id;
  rec.height = H;
  rec.width = W;
  rec.identity_id = g.identity_id;
  rec.frames = MatF::Zero(T, static_cast<Eigen::Index>(H) * W * 3);
  rec.skeleton = SkeletonSequence(T, topo.joints());

  const bool vis = spec.modality == Modality::kVisible;
  const double sigma = vis ? noise.vis_sigma : noise.ir_sigma;
  const double thick = g.thickness * scale;
  const double head_r = g.head_radius * scale;
  std::vector<double> img(static_cast<std::size_t>(H) * W * 3);
  for (int t = 0; t < T; ++t) {
    const auto& p = pose[t];
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        std::array<double, 3> c;
        for (int ch = 0; ch < 3; ++ch) c[ch] = vis ? cam_bg[ch] : 0.1;
        auto blend = [&](double cover, int part) {
          if (cover <= 0.0) return;
          for (int ch = 0; ch < 3; ++ch) {
            const double v = vis ? g.colors[static_cast<std::size_t>(part)][ch] : detail::ir_intensity(part);
            c[ch] = c[ch] * (1.0 - cover) + v * cover;
          }
        };
        for (auto [a, b] : topo.edges) {
          const double d = detail::segment_distance(px, py, p[a], p[b]);
          blend(std::clamp(0.5 * thick + 0.5 - d, 0.0, 1.0), topo.part_of[b]);
        }
        const double dh = std::hypot(px - p[0].x, py - p[0].y);
        blend(std::clamp(head_r + 0.5 - dh, 0.0, 1.0), topo.part_of[0]);
        for (int ch = 0; ch < 3; ++ch) {
          img[(static_cast<std::size_t>(y) * W + x) * 3 + ch] = c[ch];
        }
      }
    }
    // Sensor noise: independent per channel for visible light, one value
    // replicated over channels for infrared.
    for (std::size_t px = 0; px < img.size(); px += 3) {
      if (vis) {
        for (int ch = 0; ch < 3; ++ch) img[px + ch] += sigma * n01(rng);
      } else {
        const double v = img[px] + sigma * n01(rng);
        img[px] = img[px + 1] = img[px + 2] = v;
      }
    }
    for (std::size_t i = 0; i < img.size(); ++i) {
      rec.frames(t, static_cast<Eigen::Index>(i)) = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
    }
    for (int j = 0; j < topo.joints(); ++j) {
      rec.skeleton.x(t, j) = p[j].x + noise.joint_sigma * n01(rng);
      rec.skeleton.y(t, j) = p[j].y + noise.joint_sigma * n01(rng);
      rec.skeleton.conf(t, j) = vis ? 0.75 + 0.25 * u(rng) : 0.6 + 0.35 * u(rng);
    }
  }
  rec.skeleton.clamp_to(W, H);

  if (noise.occlusion) {
    std::uniform_int_distribution<int> band(noise.band_min, noise.band_max);
    for (int t = 0; t < T && static_cast<int>(rec.occlusions.size()) < noise.max_occluded_frames; ++t) {
      if (u(rng) >= noise.occlusion_prob) continue;
      const int h = std::min(band(rng), H);
      const int y0 = std::uniform_int_distribution<int>(0, H - h)(rng);
      const OcclusionBand b{t, y0, y0 + h};
      std::array<float, 3> fill{0.0f, 0.0f, 0.0f};
      if (noise.colored_occluders) {
        for (auto& f : fill) f = static_cast<float>(u(rng));
        if (!vis) fill[1] = fill[2] = fill[0];
      }
      for (int y = b.y0; y < b.y1; ++y) {
        for (int x = 0; x < W; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            rec.frames(t, (static_cast<Eigen::Index>(y) * W + x) * 3 + ch) = fill[ch];
          }
        }
      }
      for (int j = 0; j < topo.joints(); ++j) {
        if (b.contains(rec.skeleton.y(t, j))) rec.skeleton.conf(t, j) = 0.0;
      }
      rec.occlusions.push_back(b);
    }
  }
  return rec;
}

struct DatasetConfig {
  std::uint64_t seed = 0;
  int train_identities = 40;
  int test_identities = 20;
  int tracks_per = 4;  // per identity and modality
  int frames = 6;
  int height = 64;
  int width = 32;
  NoiseConfig noise;

  int identities() const { return train_identities + test_identities; }

  void validate() const {
    if (train_identities < 1 || test_identities < 1) throw ConfigError("dataset: need train and test identities");
    if (tracks_per < 1) throw ConfigError("dataset: tracks_per must be >= 1");
    if (frames < 1) throw ConfigError("dataset: frames must be >= 1");
    if (height < 8 || width < 8) throw ConfigError("dataset: image must be at least 8x8");
    noise.validate();
  }
};

inline nlohmann::json to_json(const NoiseConfig& n) {
  return {{"vis_sigma", n.vis_sigma},           {"ir_sigma", n.ir_sigma},
          {"joint_sigma", n.joint_sigma},       {"occlusion", n.occlusion},
          {"max_occluded_frames", n.max_occluded_frames}, {"occlusion_prob", n.occlusion_prob},
          {"band_min", n.band_min},             {"band_max", n.band_max},
          {"colored_occluders", n.colored_occluders}};
}

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"seed", c.seed},     {"train_identities", c.train_identities}, {"test_identities", c.test_identities},
          {"tracks_per", c.tracks_per}, {"frames", c.frames}, {"height", c.height},
          {"width", c.width},   {"noise", to_json(c.noise)}};
}

inline NoiseConfig noise_from_json(const nlohmann::json& j) {
  NoiseConfig n;
  n.vis_sigma = j.at("vis_sigma").get<double>();
  n.ir_sigma = j.at("ir_sigma").get<double>();
  n.joint_sigma = j.at("joint_sigma").get<double>();
  n.occlusion = j.at("occlusion").get<bool>();
  n.max_occluded_frames = j.at("max_occluded_frames").get<int>();
  n.occlusion_prob = j.at("occlusion_prob").get<double>();
  n.band_min = j.at("band_min").get<int>();
  n.band_max = j.at("band_max").get<int>();
  n.colored_occluders = j.at("colored_occluders").get<bool>();
  return n;
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.train_identities = j.at("train_identities").get<int>();
  c.test_identities = j.at("test_identities").get<int>();
  c.tracks_per = j.at("tracks_per").get<int>();
  c.frames = j.at("frames").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.noise = noise_from_json(j.at("noise"));
  return c;
}

struct Dataset {
  DatasetConfig config;
  Topology topology = Topology::coco17();
  std::vector<TrackRecord> train;
  std::vector<TrackRecord> test;

  std::vector<int> train_ids() const { return ids(train); }
  std::vector<int> test_ids() const { return ids(test); }

 private:
  static std::vector<int> ids(const std::vector<TrackRecord>& tracks) {
    std::vector<int> out;
    for (const auto& t : tracks) out.push_back(t.identity_id);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
};

// Identities [0, train) train, [train, train + test) test. Tracks of one
// identity and modality cycle over that modality's cameras.
inline Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  for (int id = 0; id < cfg.identities(); ++id) {
    const GaitParams g = generate_identity(cfg.seed, id, ds.topology);
    auto& split = id < cfg.train_identities ? ds.train : ds.test;
    for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
      for (int k = 0; k < cfg.tracks_per; ++k) {
        TrackSpec spec;
        spec.modality = m;
        spec.camera_id = (m == Modality::kVisible ? 0 : kCamerasPerModality) + k % kCamerasPerModality;
        spec.frames = cfg.frames;
        spec.height = cfg.height;
        spec.width = cfg.width;
        spec.seed = derive_seed(cfg.seed, {0x7a, static_cast<std::uint64_t>(id),
                                           static_cast<std::uint64_t>(m == Modality::kVisible ? 0 : 1),
                                           static_cast<std::uint64_t>(k)});
        spec.camera_seed = derive_seed(cfg.seed, {0xca, static_cast<std::uint64_t>(spec.camera_id)});
        TrackRecord rec = synthesize_track(g, spec, cfg.noise, ds.topology);
        rec.track_id = k;
        split.push_back(std::move(rec));
      }
    }
  }
  return ds;
}

namespace detail {

inline std::string track_dir(const std::string& split, const TrackRecord& r) {
  char id[16];
  std::snprintf(id, sizeof(id), "%04d", r.identity_id);
  char tr[16];
  std::snprintf(tr, sizeof(tr), "%02d", r.track_id);
  return split + "/" + id + "/" + to_string(r.modality) + "/" + tr;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError(path.string() + ": cannot open");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  os << text;
  if (!os) throw DataError(path.string() + ": write failed");
}

}  // namespace detail

inline void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  nlohmann::json tracks = nlohmann::json::array();
  auto emit = [&](const std::string& split, const std::vector<TrackRecord>& recs) {
    for (const auto& r : recs) {
      const std::string rel = detail::track_dir(split, r);
      const fs::path dir = root / rel;
      fs::create_directories(dir);
      const std::vector<std::uint32_t> dims = {static_cast<std::uint32_t>(r.num_frames()),
                                               static_cast<std::uint32_t>(r.height),
                                               static_cast<std::uint32_t>(r.width), 3u};
      io::write_tensor_file(dir / "frames.bin", dims, r.frames.data());
      detail::write_text(dir / "skeleton.json", r.skeleton.to_json().dump() + "\n");
      nlohmann::json occ = nlohmann::json::array();
      for (const auto& b : r.occlusions) occ.push_back({b.frame, b.y0, b.y1});
      tracks.push_back({{"split", split},
                        {"identity", r.identity_id},
                        {"modality", to_string(r.modality)},
                        {"camera", r.camera_id},
                        {"track_id", r.track_id},
                        {"path", rel},
                        {"occlusions", occ}});
    }
  };
  emit("train", ds.train);
  emit("test", ds.test);
  nlohmann::json meta = {
      {"format", "star-synthetic"},
      {"version", 1},
      {"config", to_json(ds.config)},
      {"seeds", {{"dataset", ds.config.seed}}},
      {"topology", ds.topology.to_json()},
      {"splits", {{"train", ds.train_ids()}, {"test", ds.test_ids()}}},
      {"protocols",
       {{"i2v", {{"query", "test/IR"}, {"gallery", "test/VIS"}}}, {"v2i", {{"query", "test/VIS"}, {"gallery", "test/IR"}}}}},
      {"tracks", tracks}};
  detail::write_text(root / "meta.json", meta.dump(2) + "\n");
}

inline Dataset read_dataset(const std::filesystem::path& root) {
  const auto meta_path = root / "meta.json";
  const nlohmann::json meta = detail::read_json(meta_path);
  Dataset ds;
  try {
    if (meta.at("format") != "star-synthetic") throw DataError(meta_path.string() + ": unknown dataset format");
    ds.config = dataset_config_from_json(meta.at("config"));
    ds.topology = Topology::from_json(meta.at("topology"));
    for (const auto& t : meta.at("tracks")) {
      TrackRecord r;
      const std::string split = t.at("split").get<std::string>();
      r.identity_id = t.at("identity").get<int>();
      r.modality = modality_from_string(t.at("modality").get<std::string>());
      r.camera_id = t.at("camera").get<int>();
      r.track_id = t.at("track_id").get<int>();
      for (const auto& b : t.at("occlusions")) r.occlusions.push_back({b.at(0), b.at(1), b.at(2)});
      const auto dir = root / t.at("path").get<std::string>();
      const auto raw = io::read_tensor_file(dir / "frames.bin");
      if (raw.dims.size() != 4 || raw.dims[3] != 3) throw DataError((dir / "frames.bin").string() + ": expected [T,H,W,3]");
      r.height = static_cast<int>(raw.dims[1]);
      r.width = static_cast<int>(raw.dims[2]);
      const auto values = raw.as<float>();
      r.frames = Eigen::Map<const MatF>(values.data(), raw.dims[0], static_cast<Eigen::Index>(raw.dims[1]) * raw.dims[2] * 3);
      try {
        r.skeleton = SkeletonSequence::from_json(detail::read_json(dir / "skeleton.json"));
        r.skeleton.validate();
      } catch (const DataError& e) {
        throw DataError((dir / "skeleton.json").string() + ": " + e.what());
      }
      if (r.skeleton.frames() != r.num_frames()) {
        throw DataError(dir.string() + ": skeleton and frames disagree on T");
      }
      if (split == "train") {
        ds.train.push_back(std::move(r));
      } else if (split == "test") {
        ds.test.push_back(std::move(r));
      } else {
        throw DataError(meta_path.string() + ": unknown split '" + split + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta_path.string() + ": malformed metadata (" + e.what() + ")");
  }
  return ds;
}

}  // namespace star::synth
