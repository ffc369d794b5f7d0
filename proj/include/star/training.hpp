#pragma once

// Optimization: learning-rate schedule, P x K cross-modality batch sampler,
// SGD step, checkpoints, and the epoch loop.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "star/model.hpp"
#include "star/synthdata.hpp"
#include "star/tensor_io.hpp"

namespace star::train {

namespace fs = std::filesystem;
using model::Model;
using model::ModelConfig;

struct TrainConfig {
  int epochs = 30;
  double base_lr = 0.01;
  int warmup_epochs = 3;
  std::vector<int> decay_epochs{15, 25};
  double decay_factor = 0.1;
  double backbone_lr_ratio = 0.1;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  int identities_per_batch = 4;   // P
  int tracks_per_modality = 2;    // K
  int steps_per_epoch = 0;        // 0: train identities / P
  std::uint64_t seed = 0;
  bool frame_guidance = true;
  bool sequence_guidance = true;

  // The published schedule; the epoch total is not stated there, 120 is assumed.
  static TrainConfig paper_schedule() {
    TrainConfig c;
    c.epochs = 120;
    c.base_lr = 0.1;
    c.warmup_epochs = 10;
    c.decay_epochs = {60, 100};
    return c;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be positive");
    if (!(base_lr >= 0.0) || warmup_epochs < 0) throw ConfigError("train: bad base_lr or warmup_epochs");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
      if (decay_epochs[i] >= epochs || decay_epochs[i] < 0 || (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])) {
        throw ConfigError("train: decay epochs must be ascending and below the epoch count");
      }
    }
    if (identities_per_batch < 2 || tracks_per_modality < 1) {
      throw ConfigError("train: need P >= 2 identities and K >= 1 tracks per modality");
    }
    if (steps_per_epoch < 0 || momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0) {
      throw ConfigError("train: bad steps_per_epoch, momentum or weight_decay");
    }
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"base_lr", c.base_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"decay_epochs", c.decay_epochs},
          {"decay_factor", c.decay_factor},
          {"backbone_lr_ratio", c.backbone_lr_ratio},
          {"weight_decay", c.weight_decay},
          {"momentum", c.momentum},
          {"identities_per_batch", c.identities_per_batch},
          {"tracks_per_modality", c.tracks_per_modality},
          {"steps_per_epoch", c.steps_per_epoch},
          {"seed", c.seed},
          {"frame_guidance", c.frame_guidance},
          {"sequence_guidance", c.sequence_guidance}};
}

namespace detail {

inline std::vector<std::string> unknown_keys(const nlohmann::json& j, const nlohmann::json& known,
                                             const std::string& section) {
  std::vector<std::string> out;
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) out.push_back(section + "." + it.key());
  }
  return out;
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  const auto unknown = detail::unknown_keys(j, to_json(base), "train");
  if (!unknown.empty()) {
    std::string msg = "train config: unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  nlohmann::json merged = to_json(base);
  merged.update(j);
  TrainConfig c;
  try {
    c.epochs = merged.at("epochs").get<int>();
    c.base_lr = merged.at("base_lr").get<double>();
    c.warmup_epochs = merged.at("warmup_epochs").get<int>();
    c.decay_epochs = merged.at("decay_epochs").get<std::vector<int>>();
    c.decay_factor = merged.at("decay_factor").get<double>();
    c.backbone_lr_ratio = merged.at("backbone_lr_ratio").get<double>();
    c.weight_decay = merged.at("weight_decay").get<double>();
    c.momentum = merged.at("momentum").get<double>();
    c.identities_per_batch = merged.at("identities_per_batch").get<int>();
    c.tracks_per_modality = merged.at("tracks_per_modality").get<int>();
    c.steps_per_epoch = merged.at("steps_per_epoch").get<int>();
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.frame_guidance = merged.at("frame_guidance").get<bool>();
    c.sequence_guidance = merged.at("sequence_guidance").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

// Model + optimization settings, as stored in config files and checkpoints:
// {"preset": "paper-schedule"?, "model": {...}, "train": {...}}.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;

  // Model config with the ablation flags applied.
  ModelConfig resolved_model() const {
    ModelConfig m = model;
    m.frame_guidance = train.frame_guidance;
    m.sequence_guidance = train.sequence_guidance;
    return m;
  }

  void validate() const {
    train.validate();
    resolved_model().validate();
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"model", model::to_json(c.model)}, {"train", to_json(c.train)}};
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  std::vector<std::string> unknown;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "model" && it.key() != "train" && it.key() != "preset") unknown.push_back(it.key());
  }
  ExperimentConfig c;
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset == "paper-schedule") {
      c.train = TrainConfig::paper_schedule();
    } else if (preset != "desk") {
      throw ConfigError("config: unknown preset '" + preset + "' (expected desk or paper-schedule)");
    }
  }
  if (j.contains("train")) {
    auto more = detail::unknown_keys(j.at("train"), to_json(c.train), "train");
    unknown.insert(unknown.end(), more.begin(), more.end());
  }
  if (j.contains("model")) {
    auto more = detail::unknown_keys(j.at("model"), model::to_json(c.model), "model");
    unknown.insert(unknown.end(), more.begin(), more.end());
  }
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"), c.model);
  c.validate();
  return c;
}

inline ExperimentConfig read_experiment_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path.string() + ": cannot open config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

struct LearningRates {
  double global = 0.0;
  double backbone = 0.0;
};

// Linear warmup base/W, 2 base/W, ..., base, then decay_factor at each
// decay epoch.
inline LearningRates lr_at(int epoch, const TrainConfig& cfg) {
  double lr = cfg.base_lr;
  if (epoch < cfg.warmup_epochs) {
    lr = cfg.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  }
  for (int d : cfg.decay_epochs) {
    if (epoch >= d) lr *= cfg.decay_factor;
  }
  return {lr, lr * cfg.backbone_lr_ratio};
}

// Tracks of a split grouped by identity and modality.
class TrackIndex {
 public:
  explicit TrackIndex(const std::vector<synth::TrackRecord>& tracks) : tracks_(&tracks) {
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      auto& e = by_id_[tracks[i].identity_id];
      (tracks[i].modality == synth::Modality::kVisible ? e.first : e.second).push_back(i);
    }
    for (const auto& [id, e] : by_id_) ids_.push_back(id);
  }

  const std::vector<int>& ids() const { return ids_; }
  int num_identities() const { return static_cast<int>(ids_.size()); }
  const synth::TrackRecord& track(std::size_t i) const { return (*tracks_)[i]; }

  const std::vector<std::size_t>& of(int id, synth::Modality m) const {
    const auto& e = by_id_.at(id);
    return m == synth::Modality::kVisible ? e.first : e.second;
  }

  // Dense class index of an identity (its rank among ids()).
  int label(int id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) throw DataError("unknown identity " + std::to_string(id));
    return static_cast<int>(it - ids_.begin());
  }

 private:
  const std::vector<synth::TrackRecord>* tracks_;
  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_id_;
  std::vector<int> ids_;
};

struct Batch {
  std::vector<const synth::TrackRecord*> tracks;
  std::vector<int> labels;
};

// P random identities, each with K VIS then K IR tracks drawn without
// replacement.
inline Batch sample_batch(const TrackIndex& index, const TrainConfig& cfg, std::mt19937_64& rng) {
  const int p = cfg.identities_per_batch;
  const int k = cfg.tracks_per_modality;
  for (int id : index.ids()) {
    for (auto m : {synth::Modality::kVisible, synth::Modality::kInfrared}) {
      if (static_cast<int>(index.of(id, m).size()) < k) {
        throw SamplingError("identity " + std::to_string(id) + " has " + std::to_string(index.of(id, m).size()) +
                            " " + synth::to_string(m) + " tracks, batch needs " + std::to_string(k));
      }
    }
  }
  if (index.num_identities() < p) {
    throw SamplingError("batch needs " + std::to_string(p) + " identities, split has " +
                        std::to_string(index.num_identities()));
  }
  std::vector<int> ids = index.ids();
  // Partial Fisher-Yates with explicit draws keeps the sequence independent
  // of the standard library's shuffle implementation.
  auto draw = [&rng](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  for (int i = 0; i < p; ++i) std::swap(ids[i], ids[i + draw(ids.size() - i)]);
  Batch b;
  for (int i = 0; i < p; ++i) {
    for (auto m : {synth::Modality::kVisible, synth::Modality::kInfrared}) {
      std::vector<std::size_t> pool = index.of(ids[i], m);
      for (int j = 0; j < k; ++j) {
        std::swap(pool[j], pool[j + draw(pool.size() - j)]);
        b.tracks.push_back(&index.track(pool[j]));
        b.labels.push_back(index.label(ids[i]));
      }
    }
  }
  return b;
}

namespace detail {

inline nlohmann::json describe_batch(const Batch& b) {
  nlohmann::json tracks = nlohmann::json::array();
  for (const auto* r : b.tracks) {
    tracks.push_back({{"identity", r->identity_id},
                      {"modality", synth::to_string(r->modality)},
                      {"camera", r->camera_id},
                      {"track", r->track_id},
                      {"frames_finite", r->frames.allFinite()},
                      {"skeleton_finite", std::all_of(r->skeleton.raw().begin(), r->skeleton.raw().end(),
                                                      [](double v) { return std::isfinite(v); })}});
  }
  return tracks;
}

}  // namespace detail

// Forward, backward and one momentum SGD update:
//   v <- mu v + (g + wd w);  w <- w - lr v.
// On a non-finite loss or gradient, nothing is updated; a description of
// the batch is written to `dump_dir` (if given) and NumericError is thrown.
inline loss::LossReport train_step(Model& m, const Batch& batch, const LearningRates& lr, const TrainConfig& cfg,
                                   const model::ExtraLoss& extra = {}, const fs::path& dump_dir = {}) {
  auto& ps = m.params();
  ps.zero_grad();
  loss::LossReport rep;
  // BN running stats are applied only once the step is known to be finite.
  std::vector<std::pair<ad::Parameter*, ad::Mat>> buffers;
  for (auto& p : ps.all()) {
    if (!p.trainable) buffers.emplace_back(&p, p.value);
  }
  {
    ad::Tape t;
    auto f = m.forward(t, batch.tracks, true);
    ad::Var total = m.loss(t, f, batch.labels, &rep, extra);
    if (rep.finite()) t.backward(total);
  }
  bool grads_finite = rep.finite();
  std::string bad_param;
  for (const auto& p : ps.all()) {
    if (grads_finite && p.trainable && !p.grad.allFinite()) {
      grads_finite = false;
      bad_param = p.name;
    }
  }
  if (!grads_finite) {
    for (auto& [p, v] : buffers) p->value = v;
    nlohmann::json dump = {{"loss", {{"id", rep.l_id}, {"triplet", rep.l_tri}, {"kl", rep.l_kl}, {"sad", rep.l_sad}}},
                           {"first_nonfinite_grad", bad_param},
                           {"lr", lr.global},
                           {"tracks", detail::describe_batch(batch)}};
    std::string where;
    if (!dump_dir.empty()) {
      fs::create_directories(dump_dir);
      const auto path = dump_dir / "nonfinite_batch.json";
      std::ofstream(path) << dump.dump(2) << "\n";
      where = "; batch dumped to " + path.string();
    }
    throw NumericError("non-finite " + std::string(rep.finite() ? "gradient in " + bad_param : "loss") +
                       " (total " + std::to_string(rep.total) + ")" + where);
  }
  for (auto& p : ps.all()) {
    if (!p.trainable) continue;
    const double rate = p.backbone ? lr.backbone : lr.global;
    p.velocity = cfg.momentum * p.velocity + p.grad + cfg.weight_decay * p.value;
    p.value -= rate * p.velocity;
  }
  return rep;
}

// ---- checkpoints ------------------------------------------------------------
//
// <dir>/manifest.json  format, version, config, epoch, rng state, tensor list
// <dir>/tensors.bin    one f64 container per listed tensor, in order

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  int epoch = 0;               // completed epochs
  std::string rng_state;       // sampler engine, textual form
  std::map<std::string, ad::Mat> tensors;  // "<param>" and "<param>#velocity"
};

inline std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw CheckpointError("checkpoint: corrupt sampler state");
  return rng;
}

inline void save_checkpoint(const fs::path& dir, const Model& m, const ExperimentConfig& cfg, int epoch,
                            const std::mt19937_64& rng) {
  fs::create_directories(dir);
  nlohmann::json list = nlohmann::json::array();
  std::ofstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw DataError((dir / "tensors.bin").string() + ": cannot open for writing");
  auto put = [&](const std::string& name, const ad::Mat& v) {
    list.push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}});
    io::write_tensor(bin, {static_cast<std::uint32_t>(v.rows()), static_cast<std::uint32_t>(v.cols())}, v.data());
  };
  for (const auto& p : m.params().all()) {
    put(p.name, p.value);
    if (p.trainable) put(p.name + "#velocity", p.velocity);
  }
  nlohmann::json manifest = {{"format", "star-checkpoint"},
                             {"version", kCheckpointVersion},
                             {"config", to_json(cfg)},
                             {"epoch", epoch},
                             {"rng_state", rng_to_string(rng)},
                             {"tensors", list}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

inline Checkpoint read_checkpoint(const fs::path& dir) {
  const auto mpath = dir / "manifest.json";
  std::ifstream ms(mpath);
  if (!ms) throw CheckpointError(mpath.string() + ": cannot open checkpoint manifest");
  Checkpoint c;
  try {
    const auto manifest = nlohmann::json::parse(ms);
    if (manifest.at("format") != "star-checkpoint") throw CheckpointError(mpath.string() + ": not a checkpoint");
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(mpath.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    c.config = experiment_config_from_json(manifest.at("config"));
    c.epoch = manifest.at("epoch").get<int>();
    c.rng_state = manifest.at("rng_state").get<std::string>();
    const auto bpath = dir / "tensors.bin";
    std::ifstream bin(bpath, std::ios::binary);
    if (!bin) throw CheckpointError(bpath.string() + ": cannot open");
    for (const auto& e : manifest.at("tensors")) {
      auto raw = io::read_tensor(bin, bpath.string());
      const auto rows = e.at("rows").get<ad::Index>();
      const auto cols = e.at("cols").get<ad::Index>();
      if (raw.dims.size() != 2 || raw.dims[0] != rows || raw.dims[1] != cols) {
        throw CheckpointError(bpath.string() + ": tensor '" + e.at("name").get<std::string>() +
                              "' does not match the manifest");
      }
      const auto data = raw.as<double>();
      c.tensors[e.at("name").get<std::string>()] = Eigen::Map<const ad::Mat>(data.data(), rows, cols);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(mpath.string() + ": " + e.what());
  }
  return c;
}

// Copies checkpoint tensors into `m`; every model tensor must be present
// with the same shape.
inline void restore(Model& m, const Checkpoint& c) {
  auto fetch = [&](const std::string& name, ad::Mat& dst) {
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) throw CheckpointError("checkpoint: missing tensor '" + name + "'");
    if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols()) {
      throw CheckpointError("checkpoint: tensor '" + name + "' is " + std::to_string(it->second.rows()) + "x" +
                            std::to_string(it->second.cols()) + ", model expects " + std::to_string(dst.rows()) +
                            "x" + std::to_string(dst.cols()));
    }
    dst = it->second;
  };
  std::size_t used = 0;
  for (auto& p : m.params().all()) {
    fetch(p.name, p.value);
    ++used;
    if (p.trainable) {
      fetch(p.name + "#velocity", p.velocity);
      ++used;
    }
  }
  if (used != c.tensors.size()) throw CheckpointError("checkpoint: holds tensors the model does not have");
}

// ---- epoch loop -------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  LearningRates lr;
  loss::LossReport mean;  // averaged over the epoch's steps
};

inline std::string csv_header() { return "epoch,lr,backbone_lr,l_id,l_tri,l_kl,l_sad,total"; }

inline std::string csv_row(const EpochLog& e) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", e.epoch, e.lr.global,
                e.lr.backbone, e.mean.l_id, e.mean.l_tri, e.mean.l_kl, e.mean.l_sad, e.mean.total);
  return buf;
}

class Trainer {
 public:
  Trainer(const std::vector<synth::TrackRecord>& train_tracks, ExperimentConfig cfg)
      : cfg_(std::move(cfg)), index_(train_tracks) {
    cfg_.model.num_classes = index_.num_identities();
    cfg_.validate();
    model_ = std::make_unique<Model>(cfg_.resolved_model(), synth::derive_seed(cfg_.train.seed, {0x30de1}));
    rng_.seed(synth::derive_seed(cfg_.train.seed, {0x5a3b1e}));
  }

  // Continues from a checkpoint written by save().
  Trainer(const std::vector<synth::TrackRecord>& train_tracks, const Checkpoint& ckpt)
      : Trainer(train_tracks, ckpt.config) {
    restore(*model_, ckpt);
    epoch_ = ckpt.epoch;
    rng_ = rng_from_string(ckpt.rng_state);
  }

  const ExperimentConfig& config() const { return cfg_; }
  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  int epoch() const { return epoch_; }
  bool done() const { return epoch_ >= cfg_.train.epochs; }
  void set_extra_loss(model::ExtraLoss f) { extra_ = std::move(f); }
  void set_dump_dir(fs::path d) { dump_dir_ = std::move(d); }

  int steps_per_epoch() const {
    if (cfg_.train.steps_per_epoch > 0) return cfg_.train.steps_per_epoch;
    return std::max(1, index_.num_identities() / cfg_.train.identities_per_batch);
  }

  Batch next_batch() { return sample_batch(index_, cfg_.train, rng_); }

  EpochLog run_epoch() {
    EpochLog log;
    log.epoch = epoch_;
    log.lr = lr_at(epoch_, cfg_.train);
    const int steps = steps_per_epoch();
    for (int s = 0; s < steps; ++s) {
      const auto rep = train_step(*model_, next_batch(), log.lr, cfg_.train, extra_, dump_dir_);
      log.mean.l_id += rep.l_id / steps;
      log.mean.l_tri += rep.l_tri / steps;
      log.mean.l_kl += rep.l_kl / steps;
      log.mean.l_sad += rep.l_sad / steps;
      log.mean.total += rep.total / steps;
    }
    ++epoch_;
    return log;
  }

  void save(const fs::path& dir) const { save_checkpoint(dir, *model_, cfg_, epoch_, rng_); }

 private:
  ExperimentConfig cfg_;
  TrackIndex index_;
  std::unique_ptr<Model> model_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  model::ExtraLoss extra_;
  fs::path dump_dir_;
};

}  // namespace star::train
