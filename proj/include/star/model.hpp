#pragma once

// End-to-end track encoder: convolutional stripe backbone, skeleton-guided
// frame correction, graph attention part weights, multi-p sequence
// aggregation, and the training objective.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/aggregation.hpp"
#include "star/frame_correction.hpp"
#include "star/objectives.hpp"
#include "star/part_attention.hpp"
#include "star/synthdata.hpp"

namespace star::model {

using ad::Index;
using ad::Mat;
using ad::Tape;
using ad::Var;

struct ModelConfig {
  int image_height = 64;
  int image_width = 32;
  std::vector<int> channels{8, 16, 32};
  Index dim = 64;
  Index heads = 4;
  Index se_ratio = 4;
  double epsilon = 1e-3;
  double distance_scale = frame::kDefaultDistanceScale;
  parts::GatConfig gat;
  agg::PoolingConfig pooling;
  agg::AggregationMode guided_mode = agg::AggregationMode::kPartWeighted;
  skeleton::EdgeSet edge_set = skeleton::EdgeSet::kAnatomical;
  bool frame_guidance = true;
  bool sequence_guidance = true;
  loss::KlMode kl_mode = loss::KlMode::kAllSteps;
  double margin = 0.3;
  double smoothing = 0.1;
  int num_classes = 40;
  skeleton::Topology topology = skeleton::Topology::coco17();

  // Stripe count left after the stride-2 convolutions.
  int stripes() const {
    int h = image_height;
    for (std::size_t i = 0; i < channels.size(); ++i) h = (h + 2 - 3) / 2 + 1;
    return h;
  }

  int edge_count() const {
    const int j = topology.joints();
    return edge_set == skeleton::EdgeSet::kAnatomical ? topology.num_edges() : j * (j - 1) / 2;
  }

  void validate() const {
    if (image_height < 1 || image_width < 1) throw ConfigError("model: image size must be positive");
    if (channels.empty()) throw ConfigError("model: need at least one convolution block");
    for (int c : channels) {
      if (c < 1) throw ConfigError("model: channel counts must be positive");
    }
    if (dim < 1 || heads < 1 || dim % heads != 0) throw ConfigError("model: dim must be a positive multiple of heads");
    if (num_classes < 2) throw ConfigError("model: need at least two training classes");
    if (margin < 0 || smoothing < 0 || smoothing >= 1) throw ConfigError("model: bad margin or smoothing");
    pooling.validate();
    topology.validate();
  }
};

inline std::string to_string(agg::AggregationMode m) {
  switch (m) {
    case agg::AggregationMode::kPartWeighted: return "part";
    case agg::AggregationMode::kGlobalWeighted: return "global";
    case agg::AggregationMode::kTemporalAverage: return "average";
  }
  return "part";
}

inline agg::AggregationMode aggregation_mode_from_string(const std::string& s) {
  if (s == "part") return agg::AggregationMode::kPartWeighted;
  if (s == "global") return agg::AggregationMode::kGlobalWeighted;
  if (s == "average") return agg::AggregationMode::kTemporalAverage;
  throw ConfigError("unknown aggregation mode '" + s + "' (expected part, global or average)");
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_height", c.image_height},
          {"image_width", c.image_width},
          {"channels", c.channels},
          {"dim", c.dim},
          {"heads", c.heads},
          {"se_ratio", c.se_ratio},
          {"epsilon", c.epsilon},
          {"distance_scale", c.distance_scale},
          {"gat_joint_embedding", c.gat.joint_embedding},
          {"gat_hidden", c.gat.hidden},
          {"gat_slope", c.gat.slope},
          {"bn_momentum", c.gat.bn_momentum},
          {"bn_eps", c.gat.bn_eps},
          {"gat_bn_gamma_init", c.gat.bn_gamma_init},
          {"p_values", c.pooling.p_values},
          {"guided_mode", to_string(c.guided_mode)},
          {"all_pairs_edges", c.edge_set == skeleton::EdgeSet::kAllPairs},
          {"frame_guidance", c.frame_guidance},
          {"sequence_guidance", c.sequence_guidance},
          {"kl_last_step", c.kl_mode == loss::KlMode::kLastStep},
          {"margin", c.margin},
          {"smoothing", c.smoothing},
          {"num_classes", c.num_classes},
          {"topology", c.topology.to_json()}};
}

// Reads every key present in `j` over the defaults in `base`; unknown keys
// are reported together.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  static const std::vector<std::string> known = {
      "image_height", "image_width", "channels", "dim", "heads", "se_ratio", "epsilon", "distance_scale",
      "gat_joint_embedding", "gat_hidden", "gat_slope", "bn_momentum", "bn_eps", "gat_bn_gamma_init", "p_values", "guided_mode", "all_pairs_edges",
      "frame_guidance", "sequence_guidance", "kl_last_step", "margin", "smoothing", "num_classes", "topology"};
  std::string unknown;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) unknown += (unknown.empty() ? "" : ", ") + it.key();
  }
  if (!unknown.empty()) throw ConfigError("model config: unknown keys: " + unknown);
  ModelConfig c = std::move(base);
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("image_height", c.image_height);
    get("image_width", c.image_width);
    get("channels", c.channels);
    get("dim", c.dim);
    get("heads", c.heads);
    get("se_ratio", c.se_ratio);
    get("epsilon", c.epsilon);
    get("distance_scale", c.distance_scale);
    get("gat_joint_embedding", c.gat.joint_embedding);
    get("gat_hidden", c.gat.hidden);
    get("gat_slope", c.gat.slope);
    get("bn_momentum", c.gat.bn_momentum);
    get("bn_eps", c.gat.bn_eps);
    get("gat_bn_gamma_init", c.gat.bn_gamma_init);
    get("p_values", c.pooling.p_values);
    if (j.contains("guided_mode")) c.guided_mode = aggregation_mode_from_string(j.at("guided_mode").get<std::string>());
    if (j.contains("all_pairs_edges")) {
      c.edge_set = j.at("all_pairs_edges").get<bool>() ? skeleton::EdgeSet::kAllPairs : skeleton::EdgeSet::kAnatomical;
    }
    get("frame_guidance", c.frame_guidance);
    get("sequence_guidance", c.sequence_guidance);
    if (j.contains("kl_last_step")) c.kl_mode = j.at("kl_last_step").get<bool>() ? loss::KlMode::kLastStep : loss::KlMode::kAllSteps;
    get("margin", c.margin);
    get("smoothing", c.smoothing);
    get("num_classes", c.num_classes);
    if (j.contains("topology")) c.topology = skeleton::Topology::from_json(j.at("topology"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

struct ConvBlock {
  nn::ConvGeometry geo;
  ad::Parameter* weight = nullptr;
  ad::Parameter* bias = nullptr;
};

struct Forward {
  Var embeddings;               // [B x D], raw track embeddings G
  Var features;                 // [B x D], batch-normalized G used for retrieval
  Var logits;                   // [B x classes], from `features`
  Var kl;                       // scalar, invalid when skeleton consistency is off
  std::vector<Var> guidance;    // per track [T x D], frame guidance only
  Var part_weights;             // [(B*T) x parts], sequence guidance only
};

// Extra objective term, e.g. an augmentation loss from a different
// backbone. Returns a scalar on the same tape.
using ExtraLoss = std::function<Var(Tape&, const Forward&, const std::vector<int>&)>;

class Model {
 public:
  explicit Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    nn::Rng rng(seed);
    int h = cfg_.image_height, w = cfg_.image_width, c = 3;
    for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
      ConvBlock b;
      b.geo = {h, w, c, cfg_.channels[i], 3, 2, 1};
      // He-uniform for the ReLU stack.
      const double bound = std::sqrt(6.0 / static_cast<double>(b.geo.patch()));
      const std::string name = "backbone.conv" + std::to_string(i);
      b.weight = &ps_.add(name + ".weight", nn::uniform_mat(rng, b.geo.patch(), b.geo.out_c, bound));
      b.bias = &ps_.add(name + ".bias", nn::uniform_mat(rng, 1, b.geo.out_c, bound));
      h = static_cast<int>(b.geo.out_h());
      w = static_cast<int>(b.geo.out_w());
      c = cfg_.channels[i];
      convs_.push_back(b);
    }
    stripe_proj_ = nn::Linear::create(ps_, "backbone.stripe_proj", c, cfg_.dim, rng);
    for (auto& p : ps_.all()) p.backbone = true;

    if (cfg_.frame_guidance) {
      frame::CorrectionConfig fc;
      fc.edge_inputs = 3 * cfg_.edge_count();
      fc.dim = cfg_.dim;
      fc.heads = cfg_.heads;
      fc.se_ratio = cfg_.se_ratio;
      fc.epsilon = cfg_.epsilon;
      correction_ = frame::CorrectionParams::create(ps_, "frame", fc, rng);
    }
    if (cfg_.sequence_guidance) {
      gat_ = parts::GatParams::create(ps_, "parts", cfg_.topology.joints(), cfg_.gat, rng);
    }
    if (kl_active()) joint_fc_ = nn::Linear::create(ps_, "consistency.joint_fc", cfg_.gat.hidden, cfg_.dim, rng);
    projection_ = &ps_.add("pool.projection", agg::averaging_projection(cfg_.pooling.p_values.size(), cfg_.dim));
    neck_ = nn::BatchNorm::create(ps_, "neck", cfg_.dim);
    classifier_ = nn::Linear::create(ps_, "classifier", cfg_.dim, cfg_.num_classes, rng, false);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  bool kl_active() const { return cfg_.frame_guidance && cfg_.sequence_guidance; }

  // Visual stripe tokens per track, [S*T x D] stripe-major.
  std::vector<Var> backbone(Tape& t, const std::vector<const synth::TrackRecord*>& tracks, int frames) const {
    const Index pixels = static_cast<Index>(cfg_.image_height) * cfg_.image_width * 3;
    const Index batch = static_cast<Index>(tracks.size());
    Mat images(batch * frames, pixels);
    for (Index b = 0; b < batch; ++b) {
      const auto& f = tracks[static_cast<std::size_t>(b)]->frames;
      if (f.cols() != pixels) throw ShapeError("model: frame size does not match the configured image size");
      // Pixels in [0, 1] -> roughly zero mean, unit scale.
      images.middleRows(b * frames, frames) = ((f.cast<double>().array() - 0.5) * 4.0).matrix();
    }
    Var x = t.constant(std::move(images));
    for (const auto& blk : convs_) x = ad::relu(nn::conv2d(x, t.param(*blk.weight), t.param(*blk.bias), blk.geo));
    const auto& last = convs_.back().geo;
    const Index stripes = last.out_h();
    Var rows = stripe_proj_(t, nn::mean_over_width(x, last.out_h(), last.out_w(), last.out_c));
    // rows: image (b*T + f), stripe s at (b*T + f)*S + s -> per-track s*T + f.
    std::vector<Var> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (Index b = 0; b < batch; ++b) {
      std::vector<int> order;
      order.reserve(static_cast<std::size_t>(stripes * frames));
      for (Index s = 0; s < stripes; ++s) {
        for (Index f = 0; f < frames; ++f) order.push_back(static_cast<int>((b * frames + f) * stripes + s));
      }
      out.push_back(ad::gather_rows(rows, order));
    }
    return out;
  }

  // `training` selects batch statistics in the GAT batch norm; running
  // statistics are updated only when `update_stats` is also set.
  Forward forward(Tape& t, const std::vector<const synth::TrackRecord*>& tracks, bool training,
                  bool update_stats = true) const {
    if (tracks.empty()) throw EmptyInputError("model: empty batch");
    const int frames = tracks.front()->num_frames();
    if (frames < 1) throw EmptyInputError("model: tracks have no frames");
    for (const auto* r : tracks) {
      if (r->num_frames() != frames || r->skeleton.frames() != frames) {
        throw ShapeError("model: tracks in one batch must share T");
      }
      if (r->skeleton.joints() != cfg_.topology.joints()) throw ConfigError("model: skeleton joint count mismatch");
    }
    const int stripes = cfg_.stripes();
    const auto& topo = cfg_.topology;
    Forward out;
    std::vector<Var> tokens = backbone(t, tracks, frames);

    if (cfg_.frame_guidance) {
      std::vector<Var> inputs;
      for (const auto* r : tracks) {
        inputs.push_back(t.constant(
            frame::edge_inputs(skeleton::edge_features(r->skeleton, topo, cfg_.edge_set), cfg_.image_height,
                                cfg_.distance_scale)));
      }
      out.guidance = frame::encode_edges(t, inputs, correction_);
      for (std::size_t b = 0; b < tracks.size(); ++b) {
        tokens[b] = frame::correct(t, tokens[b], out.guidance[b], stripes, correction_);
      }
    }

    Var proj = t.param(*projection_);
    std::vector<Var> embeddings;
    embeddings.reserve(tracks.size());
    if (cfg_.sequence_guidance) {
      std::vector<skeleton::DirectedEdges> graphs;
      Mat raw(0, 3);
      std::vector<int> joint_ids;
      std::vector<Mat> feats;
      for (const auto* r : tracks) {
        auto g = skeleton::build_st_graph(r->skeleton, topo, cfg_.image_width, cfg_.image_height);
        graphs.push_back(g.directed());
        feats.push_back(std::move(g.node_feats));
        joint_ids.insert(joint_ids.end(), g.joint_ids.begin(), g.joint_ids.end());
      }
      raw.resize(static_cast<Index>(joint_ids.size()), 3);
      Index row = 0;
      for (const auto& f : feats) {
        raw.middleRows(row, f.rows()) = f;
        row += f.rows();
      }
      const auto edges = skeleton::DirectedEdges::disjoint_union(graphs);
      const bool batch_stats = training && raw.rows() > 1;
      auto gat = parts::gat_forward(t, parts::node_input(t, raw, joint_ids, gat_), edges, gat_, batch_stats,
                                    update_stats);
      out.part_weights = parts::part_weights(t, gat.h, gat.attn, edges, topo, frames, topo.joints());
      for (std::size_t b = 0; b < tracks.size(); ++b) {
        Var w = ad::slice_rows(out.part_weights, static_cast<Index>(b) * frames, frames);
        const auto map = skeleton::part_stripe_map(tracks[b]->skeleton, topo, stripes, cfg_.image_height);
        embeddings.push_back(
            agg::aggregate_sequence({tokens[b], frames, stripes}, &w, map, cfg_.pooling, proj, cfg_.guided_mode));
      }
      if (kl_active()) out.kl = consistency(t, gat.h, out, static_cast<int>(tracks.size()), frames);
    } else {
      for (std::size_t b = 0; b < tracks.size(); ++b) {
        embeddings.push_back(agg::aggregate_sequence({tokens[b], frames, stripes}, nullptr, {}, cfg_.pooling, proj,
                                                     agg::AggregationMode::kTemporalAverage));
      }
    }
    out.embeddings = embeddings.size() == 1 ? embeddings.front() : ad::concat_rows(embeddings);
    out.features = neck_(t, out.embeddings, training && tracks.size() > 1, update_stats);
    out.logits = classifier_(t, out.features);
    return out;
  }

  // Identity + triplet + skeleton consistency (+ optional extra term).
  Var loss(Tape& t, const Forward& f, const std::vector<int>& labels, loss::LossReport* report = nullptr,
           const ExtraLoss& extra = {}) const {
    Var id = loss::id_loss(f.logits, labels, cfg_.smoothing);
    Var tri = loss::triplet_loss(f.embeddings, labels, cfg_.margin);
    Var total = ad::add(id, tri);
    double kl = 0.0, sad = 0.0;
    if (f.kl.valid()) {
      total = ad::add(total, f.kl);
      kl = f.kl.scalar();
    }
    if (extra) {
      Var s = extra(t, f, labels);
      total = ad::add(total, s);
      sad = s.scalar();
    }
    if (report != nullptr) *report = loss::total_loss(id.scalar(), tri.scalar(), kl, sad);
    return total;
  }

 private:
  // Mean over tracks of the symmetric KL between the edge guidance and the
  // part-weighted joint features (per frame, projected to D).
  Var consistency(Tape& t, const Var& h, const Forward& out, int batch, int frames) const {
    const auto& topo = cfg_.topology;
    const int joints = topo.joints();
    const int parts = topo.num_parts();
    const auto members = topo.part_members();
    std::vector<int> weight_row;
    std::vector<int> frame_row;
    Mat inv_size(static_cast<Index>(batch) * frames * joints, 1);
    for (int b = 0; b < batch; ++b) {
      for (int f = 0; f < frames; ++f) {
        for (int j = 0; j < joints; ++j) {
          const int part = topo.part_of[j];
          const Index n = (static_cast<Index>(b) * frames + f) * joints + j;
          weight_row.push_back((b * frames + f) * parts + part);
          frame_row.push_back(b * frames + f);
          inv_size(n, 0) = 1.0 / static_cast<double>(members[part].size());
        }
      }
    }
    Var flat = ad::reshape(out.part_weights, static_cast<Index>(batch) * frames * parts, 1);
    Var node_w = ad::mul(ad::gather_rows(flat, weight_row), t.constant(std::move(inv_size)));
    Var joint = ad::scatter_add_rows(ad::scale_rows(h, node_w), frame_row, batch * frames);
    Var stream = joint_fc_(t, joint);  // [(B*T) x D]
    Var total;
    for (int b = 0; b < batch; ++b) {
      Var kl = loss::kl_consistency(out.guidance[b], ad::slice_rows(stream, static_cast<Index>(b) * frames, frames),
                                    cfg_.kl_mode);
      total = b == 0 ? kl : ad::add(total, kl);
    }
    return ad::scale(total, 1.0 / batch);
  }

  ModelConfig cfg_;
  nn::ParamStore ps_;
  std::vector<ConvBlock> convs_;
  nn::Linear stripe_proj_;
  frame::CorrectionParams correction_;
  parts::GatParams gat_;
  nn::Linear joint_fc_;
  ad::Parameter* projection_ = nullptr;
  nn::BatchNorm neck_;
  nn::Linear classifier_;
};

}  // namespace star::model
