#pragma once

// Command implementations behind tools/star_cli.cpp. Every command writes
// one run_manifest.json into its output directory.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "star/experiment.hpp"
#include "star/plot.hpp"

#ifndef STAR_GIT_DESCRIBE
#define STAR_GIT_DESCRIBE "unknown"
#endif

namespace star::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::uint64_t seed = 0;
  std::string git_describe = STAR_GIT_DESCRIBE;
  std::vector<std::string> outputs;
  double wall_clock_seconds = 0.0;
  std::string started_at;

  json to_json() const {
    return {{"command", command},       {"argv", argv},
            {"config", config},         {"seed", seed},
            {"git_describe", git_describe}, {"outputs", outputs},
            {"wall_clock_seconds", wall_clock_seconds}, {"started_at", started_at}};
  }
};

inline std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Times one command and writes its manifest on success.
class ManifestScope {
 public:
  ManifestScope(std::string command, std::vector<std::string> argv, fs::path out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(out_dir_);
    m_.command = std::move(command);
    m_.argv = std::move(argv);
    m_.started_at = utc_now();
  }

  RunManifest& manifest() { return m_; }
  void output(const fs::path& p) { m_.outputs.push_back(p.string()); }

  fs::path finish() {
    m_.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const auto path = out_dir_ / "run_manifest.json";
    synth::detail::write_text(path, m_.to_json().dump(2) + "\n");
    return path;
  }

 private:
  RunManifest m_;
  fs::path out_dir_;
  std::chrono::steady_clock::time_point start_;
};

inline void write_file(const fs::path& p, const std::string& text) { synth::detail::write_text(p, text); }

inline bool non_empty_dir(const fs::path& p) {
  return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p));
}

// ---- generate ----------------------------------------------------------------

struct GenerateOptions {
  fs::path out;
  std::uint64_t seed = 0;
  int identities = 60;
  int train_identities = -1;  // default: two thirds
  int tracks_per = 4;
  int frames = 6;
  bool force = false;
};

inline synth::DatasetConfig dataset_config(const GenerateOptions& o) {
  synth::DatasetConfig c;
  c.seed = o.seed;
  if (o.identities < 2) throw ConfigError("generate: need at least two identities");
  c.train_identities = o.train_identities >= 0 ? o.train_identities : (2 * o.identities) / 3;
  c.test_identities = o.identities - c.train_identities;
  c.tracks_per = o.tracks_per;
  c.frames = o.frames;
  return c;
}

inline synth::Dataset cmd_generate(const GenerateOptions& o, const std::vector<std::string>& argv = {}) {
  if (o.out.empty()) throw ConfigError("generate: --out is required");
  if (non_empty_dir(o.out)) {
    if (!o.force) throw ConfigError("generate: " + o.out.string() + " exists and is not empty (use --force)");
    fs::remove_all(o.out);
  }
  ManifestScope scope("generate", argv, o.out);
  const auto cfg = dataset_config(o);
  auto ds = synth::generate_dataset(cfg);
  synth::write_dataset(o.out, ds);
  scope.manifest().config = synth::to_json(cfg);
  scope.manifest().seed = o.seed;
  scope.output(o.out / "meta.json");
  scope.finish();
  std::cout << "dataset " << o.out.string() << ": " << cfg.identities() << " identities (" << cfg.train_identities
            << " train, " << cfg.test_identities << " test), " << ds.train.size() << " train tracks, "
            << ds.test.size() << " test tracks, " << cfg.frames << " frames " << cfg.height << "x" << cfg.width
            << "\n";
  return ds;
}

// ---- train -------------------------------------------------------------------

struct TrainOptions {
  fs::path data;
  fs::path config;  // optional JSON experiment config
  fs::path out;
  bool no_frame_guidance = false;
  bool no_sequence_guidance = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

inline train::ExperimentConfig load_config(const fs::path& path) {
  return path.empty() ? train::ExperimentConfig{} : train::read_experiment_config(path);
}

// Overrides that change the schedule's length keep the decay points inside it.
inline void apply_epochs(train::ExperimentConfig& cfg, int epochs) {
  if (epochs < 1) throw ConfigError("--epochs must be positive");
  std::vector<int> decays;
  for (int d : cfg.train.decay_epochs) {
    const int scaled = static_cast<int>(static_cast<long>(d) * epochs / cfg.train.epochs);
    if (scaled > 0 && scaled < epochs && (decays.empty() || scaled > decays.back())) decays.push_back(scaled);
  }
  cfg.train.decay_epochs = decays;
  cfg.train.warmup_epochs = static_cast<int>(static_cast<long>(cfg.train.warmup_epochs) * epochs / cfg.train.epochs);
  cfg.train.epochs = epochs;
}

struct TrainOutcome {
  train::ExperimentConfig config;
  std::vector<train::EpochLog> epochs;
  fs::path checkpoint;
  fs::path loss_csv;
};

inline TrainOutcome cmd_train(const TrainOptions& o, const std::vector<std::string>& argv = {}) {
  if (o.data.empty() || o.out.empty()) throw ConfigError("train: --data and --out are required");
  auto cfg = load_config(o.config);
  if (o.no_frame_guidance) cfg.train.frame_guidance = false;
  if (o.no_sequence_guidance) cfg.train.sequence_guidance = false;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.epochs) apply_epochs(cfg, *o.epochs);
  const auto ds = synth::read_dataset(o.data);
  if (ds.config.height != cfg.model.image_height || ds.config.width != cfg.model.image_width) {
    throw ConfigError("train: model expects " + std::to_string(cfg.model.image_height) + "x" +
                      std::to_string(cfg.model.image_width) + " frames, dataset has " +
                      std::to_string(ds.config.height) + "x" + std::to_string(ds.config.width));
  }
  ManifestScope scope("train", argv, o.out);
  train::Trainer tr(ds.train, cfg);
  tr.set_dump_dir(o.out);
  TrainOutcome r;
  r.config = tr.config();
  r.loss_csv = o.out / "loss.csv";
  std::ofstream csv(r.loss_csv);
  if (!csv) throw DataError(r.loss_csv.string() + ": cannot open for writing");
  csv << train::csv_header() << "\n";
  spdlog::info("training {} ({} epochs, {} steps each, FG={}, SG={})", o.out.string(), cfg.train.epochs,
               tr.steps_per_epoch(), cfg.train.frame_guidance, cfg.train.sequence_guidance);
  while (!tr.done()) {
    const auto log = tr.run_epoch();
    csv << train::csv_row(log) << "\n" << std::flush;
    spdlog::info("epoch {:3d} lr {:.5f} id {:.4f} tri {:.4f} kl {:.4f} total {:.4f}", log.epoch, log.lr.global,
                 log.mean.l_id, log.mean.l_tri, log.mean.l_kl, log.mean.total);
    r.epochs.push_back(log);
  }
  r.checkpoint = o.out / "checkpoint";
  tr.save(r.checkpoint);
  scope.manifest().config = train::to_json(r.config);
  scope.manifest().seed = cfg.train.seed;
  scope.manifest().config["data"] = o.data.string();
  scope.output(r.checkpoint);
  scope.output(r.loss_csv);
  scope.finish();
  return r;
}

// ---- eval --------------------------------------------------------------------

struct EvalOptions {
  fs::path data;
  fs::path checkpoint;
  std::string protocol = "both";
  fs::path out;  // default: <checkpoint>/../eval
};

inline std::vector<eval::Protocol> protocols_from_string(const std::string& s) {
  if (s == "both") return {eval::Protocol::kI2V, eval::Protocol::kV2I};
  return {eval::protocol_from_string(s)};
}

// Model built from the checkpoint's own config; the dataset must match its
// frame size and skeleton topology.
inline std::map<eval::Protocol, eval::RetrievalResult> cmd_eval(const EvalOptions& o,
                                                                 const std::vector<std::string>& argv = {}) {
  if (o.data.empty() || o.checkpoint.empty()) throw ConfigError("eval: --data and --checkpoint are required");
  const auto protocols = protocols_from_string(o.protocol);
  const auto ckpt = train::read_checkpoint(o.checkpoint);
  const auto ds = synth::read_dataset(o.data);
  const auto mc = ckpt.config.resolved_model();
  if (ds.config.height != mc.image_height || ds.config.width != mc.image_width) {
    throw CheckpointError("eval: checkpoint expects " + std::to_string(mc.image_height) + "x" +
                          std::to_string(mc.image_width) + " frames, dataset has " + std::to_string(ds.config.height) +
                          "x" + std::to_string(ds.config.width));
  }
  if (ds.topology.joints() != mc.topology.joints()) {
    throw CheckpointError("eval: checkpoint topology has " + std::to_string(mc.topology.joints()) +
                          " joints, dataset has " + std::to_string(ds.topology.joints()));
  }
  const fs::path out = o.out.empty() ? o.checkpoint.parent_path() / "eval" : o.out;
  ManifestScope scope("eval", argv, out);
  model::Model m(mc, 0);
  train::restore(m, ckpt);
  const auto emb = eval::extract_embeddings(m, ds.test);
  std::map<eval::Protocol, eval::RetrievalResult> results;
  json j = json::object();
  for (auto p : protocols) {
    results[p] = eval::evaluate(emb, p);
    j[eval::to_string(p)] = eval::to_json(results[p]);
  }
  write_file(out / "metrics.json", j.dump(2) + "\n");
  std::cout << eval::format_table({{o.checkpoint.filename().string(), results}});
  scope.manifest().config = {{"data", o.data.string()}, {"checkpoint", o.checkpoint.string()}, {"protocol", o.protocol},
                             {"model", train::to_json(ckpt.config)}};
  scope.manifest().seed = ckpt.config.train.seed;
  scope.output(out / "metrics.json");
  scope.finish();
  return results;
}

// ---- ablate ------------------------------------------------------------------

struct AblateOptions {
  fs::path data;
  fs::path config;
  fs::path out;
  std::vector<int> seeds{0, 1, 2};
  std::vector<std::string> variants{"baseline", "fg", "sg", "full"};
  std::optional<int> epochs;
};

struct AblationRow {
  std::string variant;
  std::vector<experiment::RunResult> runs;  // one per seed
  double mean_map(eval::Protocol p) const {
    double s = 0.0;
    for (const auto& r : runs) s += r.map(p);
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
  }
};

inline std::vector<AblationRow> run_ablation(const synth::Dataset& ds, const train::ExperimentConfig& base,
                                             const std::vector<std::string>& variants, const std::vector<int>& seeds) {
  if (variants.empty() || seeds.empty()) throw ConfigError("ablate: need at least one variant and one seed");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) rows.push_back({experiment::variant_from_string(v).name, {}});
  for (auto& row : rows) row.runs.resize(seeds.size());
  const std::size_t n = variants.size() * seeds.size();
  experiment::parallel_for(n, experiment::num_workers(), [&](std::size_t i) {
    const auto& row_variant = experiment::variant_from_string(variants[i / seeds.size()]);
    const int seed = seeds[i % seeds.size()];
    auto r = experiment::run(ds, experiment::with_variant(base, row_variant, static_cast<std::uint64_t>(seed)));
    spdlog::info("{} seed {}: I2V mAP {:.2f}, V2I mAP {:.2f} ({:.0f} s)", row_variant.name, seed,
                 100 * r.map(eval::Protocol::kI2V), 100 * r.map(eval::Protocol::kV2I), r.seconds);
    rows[i / seeds.size()].runs[i % seeds.size()] = std::move(r);
  });
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows, const std::vector<int>& seeds) {
  std::string s = "variant,seed,i2v_rank1,i2v_map,v2i_rank1,v2i_map\n";
  char buf[256];
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.runs.size(); ++k) {
      const auto& m = row.runs[k].metrics;
      std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%.6f,%.6f\n", row.variant.c_str(), seeds[k],
                    100 * m.at(eval::Protocol::kI2V).rank.at(1), 100 * m.at(eval::Protocol::kI2V).map,
                    100 * m.at(eval::Protocol::kV2I).rank.at(1), 100 * m.at(eval::Protocol::kV2I).map);
      s += buf;
    }
  }
  return s;
}

inline std::vector<AblationRow> cmd_ablate(const AblateOptions& o, const std::vector<std::string>& argv = {}) {
  if (o.data.empty() || o.out.empty()) throw ConfigError("ablate: --data and --out are required");
  auto cfg = load_config(o.config);
  if (o.epochs) apply_epochs(cfg, *o.epochs);
  const auto ds = synth::read_dataset(o.data);
  ManifestScope scope("ablate", argv, o.out);
  auto rows = run_ablation(ds, cfg, o.variants, o.seeds);
  write_file(o.out / "ablation.csv", ablation_csv(rows, o.seeds));
  std::cout << "mean mAP over seeds:\n";
  for (const auto& row : rows) {
    std::printf("  %-9s I2V %6.2f  V2I %6.2f\n", row.variant.c_str(), 100 * row.mean_map(eval::Protocol::kI2V),
                100 * row.mean_map(eval::Protocol::kV2I));
  }
  scope.manifest().config = train::to_json(cfg);
  scope.manifest().config["data"] = o.data.string();
  scope.manifest().config["seeds"] = o.seeds;
  scope.manifest().seed = cfg.train.seed;
  scope.output(o.out / "ablation.csv");
  scope.finish();
  return rows;
}

// ---- sweep -------------------------------------------------------------------

struct SweepOptions {
  std::string axis;            // seqlen | p
  std::vector<double> values;
  fs::path data;
  fs::path config;
  fs::path out;
  std::vector<int> seeds{0, 1, 2};
  std::optional<int> epochs;
};

inline std::string sweep_csv(const std::string& axis, const std::vector<experiment::SweepRow>& rows) {
  std::string s = axis == "seqlen" ? "length,variant,i2v_rank1,i2v_map,v2i_rank1,v2i_map\n"
                                   : "below,above,p_values,i2v_rank1,i2v_map,v2i_rank1,v2i_map\n";
  char buf[256];
  for (const auto& r : rows) {
    if (axis == "seqlen") {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f\n", r.axis_value.c_str(), r.variant.c_str(),
                    100 * r.i2v_rank1, 100 * r.i2v_map, 100 * r.v2i_rank1, 100 * r.v2i_map);
    } else {
      std::snprintf(buf, sizeof(buf), "%d,%d,%s,%.6f,%.6f,%.6f,%.6f\n", r.below, r.above, r.axis_value.c_str(),
                    100 * r.i2v_rank1, 100 * r.i2v_map, 100 * r.v2i_rank1, 100 * r.v2i_map);
    }
    s += buf;
  }
  return s;
}

inline std::string seqlen_plot(const std::vector<experiment::SweepRow>& rows) {
  std::map<std::string, plot::Series> by;
  for (const auto& r : rows) {
    for (const char* proto : {"I2V", "V2I"}) {
      auto& s = by[r.variant + " " + proto];
      s.label = r.variant + " " + proto;
      s.x.push_back(std::stod(r.axis_value));
      s.y.push_back(100 * (std::string(proto) == "I2V" ? r.i2v_map : r.v2i_map));
    }
  }
  std::vector<plot::Series> series;
  for (auto& [k, s] : by) series.push_back(std::move(s));
  return plot::line_chart("mAP vs sequence length", "sequence length T", "mAP (%)", series);
}

inline std::vector<experiment::SweepRow> cmd_sweep(const SweepOptions& o, const std::vector<std::string>& argv = {}) {
  if (o.axis != "seqlen" && o.axis != "p") throw ConfigError("sweep: --axis must be seqlen or p");
  if (o.values.empty()) throw ConfigError("sweep: empty value list");
  if (o.data.empty() || o.out.empty()) throw ConfigError("sweep: --data and --out are required");
  auto cfg = load_config(o.config);
  if (o.epochs) apply_epochs(cfg, *o.epochs);
  const auto ds = synth::read_dataset(o.data);
  ManifestScope scope("sweep", argv, o.out);
  std::vector<experiment::SweepRow> rows;
  const fs::path csv = o.out / ("sweep_" + o.axis + ".csv");
  const fs::path svg = o.out / ("sweep_" + o.axis + ".svg");
  if (o.axis == "seqlen") {
    std::vector<int> lengths;
    for (double v : o.values) {
      if (v != std::floor(v)) throw ConfigError("sweep: sequence lengths must be integers");
      lengths.push_back(static_cast<int>(v));
    }
    rows = experiment::sequence_length_sweep(ds, lengths, cfg, o.seeds);
    write_file(svg, seqlen_plot(rows));
  } else {
    rows = experiment::p_sweep(ds, o.values, cfg, o.seeds);
    std::map<std::pair<int, int>, double> i2v;
    for (const auto& r : rows) i2v[{r.below, r.above}] = 100 * r.i2v_map;
    write_file(svg, plot::heatmap("I2V mAP by candidate set", "values of p below 1", "values of p above 1", i2v));
  }
  write_file(csv, sweep_csv(o.axis, rows));
  std::cout << sweep_csv(o.axis, rows);
  scope.manifest().config = train::to_json(cfg);
  scope.manifest().config["data"] = o.data.string();
  scope.manifest().config["axis"] = o.axis;
  scope.manifest().config["values"] = o.values;
  scope.manifest().config["seeds"] = o.seeds;
  scope.manifest().seed = cfg.train.seed;
  scope.output(csv);
  scope.output(svg);
  scope.finish();
  return rows;
}

}  // namespace star::cli
