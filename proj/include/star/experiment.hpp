#pragma once

// Train-then-evaluate runs, ablation variants, and the two sweeps
// (sequence length, multi-p candidate sets).

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "star/evaluation.hpp"
#include "star/training.hpp"

namespace star::experiment {

using eval::Protocol;

struct Variant {
  std::string name;
  bool frame_guidance = true;
  bool sequence_guidance = true;
};

inline const std::vector<Variant>& ablation_grid() {
  static const std::vector<Variant> v{
      {"baseline", false, false}, {"fg", true, false}, {"sg", false, true}, {"full", true, true}};
  return v;
}

inline Variant variant_from_string(const std::string& s) {
  for (const auto& v : ablation_grid()) {
    if (v.name == s) return v;
  }
  throw ConfigError("unknown variant '" + s + "' (expected baseline, fg, sg or full)");
}

struct RunResult {
  std::vector<train::EpochLog> epochs;
  std::map<Protocol, eval::RetrievalResult> metrics;
  double seconds = 0.0;

  double map(Protocol p) const { return metrics.at(p).map; }
};

inline std::map<Protocol, eval::RetrievalResult> evaluate_both(const model::Model& m,
                                                               const std::vector<synth::TrackRecord>& test) {
  const auto e = eval::extract_embeddings(m, test);
  return {{Protocol::kI2V, eval::evaluate(e, Protocol::kI2V)}, {Protocol::kV2I, eval::evaluate(e, Protocol::kV2I)}};
}

// Full training per `cfg`, then both protocols on the test split.
inline RunResult run(const synth::Dataset& ds, const train::ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  train::Trainer tr(ds.train, cfg);
  RunResult r;
  while (!tr.done()) r.epochs.push_back(tr.run_epoch());
  r.metrics = evaluate_both(tr.model(), ds.test);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline train::ExperimentConfig with_variant(train::ExperimentConfig cfg, const Variant& v, std::uint64_t seed) {
  cfg.train.frame_guidance = v.frame_guidance;
  cfg.train.sequence_guidance = v.sequence_guidance;
  cfg.train.seed = seed;
  return cfg;
}

// First `frames` frames of every track; occlusions past the cut are dropped.
inline synth::Dataset crop_frames(const synth::Dataset& ds, int frames) {
  if (frames < 1 || frames > ds.config.frames) {
    throw ConfigError("sequence length " + std::to_string(frames) + " outside [1, " +
                      std::to_string(ds.config.frames) + "]");
  }
  synth::Dataset out;
  out.config = ds.config;
  out.config.frames = frames;
  out.topology = ds.topology;
  auto crop = [&](const synth::TrackRecord& r) {
    synth::TrackRecord c = r;
    c.frames = r.frames.topRows(frames);
    c.skeleton = skeleton::SkeletonSequence(frames, r.skeleton.joints());
    for (int t = 0; t < frames; ++t) {
      for (int j = 0; j < r.skeleton.joints(); ++j) {
        c.skeleton.x(t, j) = r.skeleton.x(t, j);
        c.skeleton.y(t, j) = r.skeleton.y(t, j);
        c.skeleton.conf(t, j) = r.skeleton.conf(t, j);
      }
    }
    c.occlusions.clear();
    for (const auto& b : r.occlusions) {
      if (b.frame < frames) c.occlusions.push_back(b);
    }
    return c;
  };
  for (const auto& r : ds.train) out.train.push_back(crop(r));
  for (const auto& r : ds.test) out.test.push_back(crop(r));
  return out;
}

// ---- parallel execution ----------------------------------------------------

// STAR_NUM_WORKERS, default 1. Runs are independent and seeded, so the
// worker count never changes results.
inline int num_workers() {
  const char* v = std::getenv("STAR_NUM_WORKERS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("STAR_NUM_WORKERS must be a positive integer, got '") + v + "'");
  return static_cast<int>(n);
}

inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= n || error) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<int>(workers, static_cast<int>(n)); ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---- sweeps ----------------------------------------------------------------

struct SweepRow {
  std::string axis_value;  // "T=4" or the p set
  std::string variant;
  int below = 0;           // p sweep only
  int above = 0;
  std::vector<int> seeds;
  double i2v_map = 0.0;    // seed mean
  double v2i_map = 0.0;
  double i2v_rank1 = 0.0;
  double v2i_rank1 = 0.0;
};

struct Job {
  const synth::Dataset* data;
  train::ExperimentConfig cfg;
  std::size_t row;
};

inline void run_jobs(const std::vector<Job>& jobs, std::vector<SweepRow>& rows) {
  std::vector<RunResult> results(jobs.size());
  parallel_for(jobs.size(), num_workers(), [&](std::size_t i) { results[i] = run(*jobs[i].data, jobs[i].cfg); });
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& row = rows[jobs[i].row];
    const double w = 1.0 / static_cast<double>(row.seeds.size());
    row.i2v_map += w * results[i].map(Protocol::kI2V);
    row.v2i_map += w * results[i].map(Protocol::kV2I);
    row.i2v_rank1 += w * results[i].metrics.at(Protocol::kI2V).rank.at(1);
    row.v2i_rank1 += w * results[i].metrics.at(Protocol::kV2I).rank.at(1);
  }
}

// Baseline and full model at every length; data cropped from `ds`.
inline std::vector<SweepRow> sequence_length_sweep(const synth::Dataset& ds, const std::vector<int>& lengths,
                                                   const train::ExperimentConfig& base,
                                                   const std::vector<int>& seeds) {
  if (lengths.empty()) throw ConfigError("sweep: empty value list");
  if (seeds.empty()) throw ConfigError("sweep: need at least one seed");
  std::vector<synth::Dataset> cropped;
  cropped.reserve(lengths.size());
  for (int T : lengths) cropped.push_back(crop_frames(ds, T));
  std::vector<SweepRow> rows;
  std::vector<Job> jobs;
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    for (const char* name : {"baseline", "full"}) {
      SweepRow row;
      row.axis_value = std::to_string(lengths[li]);
      row.variant = name;
      row.seeds = seeds;
      rows.push_back(row);
      for (int s : seeds) {
        jobs.push_back({&cropped[li], with_variant(base, variant_from_string(name), static_cast<std::uint64_t>(s)),
                        rows.size() - 1});
      }
    }
  }
  run_jobs(jobs, rows);
  return rows;
}

// Candidate sets built from a pool: `below` values under 1 taken nearest-1
// first, `above` values over 1 taken ascending. Every (below, above) pair
// with at least one value is a cell.
struct PCell {
  int below = 0;
  int above = 0;
  std::vector<double> p_values;
};

inline std::vector<PCell> p_grid(const std::vector<double>& pool) {
  if (pool.empty()) throw ConfigError("sweep: empty value list");
  std::vector<double> lo, hi;
  for (double p : pool) {
    if (!(p > 0.0)) throw ConfigError("sweep: p values must be positive");
    if (p < 1.0) lo.push_back(p);
    if (p > 1.0) hi.push_back(p);
  }
  std::sort(lo.begin(), lo.end(), std::greater<>());
  std::sort(hi.begin(), hi.end());
  lo.erase(std::unique(lo.begin(), lo.end()), lo.end());
  hi.erase(std::unique(hi.begin(), hi.end()), hi.end());
  std::vector<PCell> cells;
  for (std::size_t b = 0; b <= lo.size(); ++b) {
    for (std::size_t a = 0; a <= hi.size(); ++a) {
      if (a + b == 0) continue;
      PCell c;
      c.below = static_cast<int>(b);
      c.above = static_cast<int>(a);
      c.p_values.assign(lo.begin(), lo.begin() + static_cast<std::ptrdiff_t>(b));
      std::reverse(c.p_values.begin(), c.p_values.end());
      c.p_values.insert(c.p_values.end(), hi.begin(), hi.begin() + static_cast<std::ptrdiff_t>(a));
      cells.push_back(std::move(c));
    }
  }
  return cells;
}

inline std::string join(const std::vector<double>& v, const char* sep) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%g", v[i]);
    out += (i ? sep : "") + std::string(buf);
  }
  return out;
}

// Full model per candidate set.
inline std::vector<SweepRow> p_sweep(const synth::Dataset& ds, const std::vector<double>& pool,
                                     const train::ExperimentConfig& base, const std::vector<int>& seeds) {
  if (seeds.empty()) throw ConfigError("sweep: need at least one seed");
  const auto cells = p_grid(pool);
  std::vector<SweepRow> rows;
  std::vector<Job> jobs;
  for (const auto& cell : cells) {
    SweepRow row;
    row.axis_value = join(cell.p_values, " ");
    row.variant = "full";
    row.below = cell.below;
    row.above = cell.above;
    row.seeds = seeds;
    rows.push_back(row);
    train::ExperimentConfig cfg = base;
    cfg.model.pooling.p_values = cell.p_values;
    for (int s : seeds) {
      jobs.push_back({&ds, with_variant(cfg, variant_from_string("full"), static_cast<std::uint64_t>(s)),
                      rows.size() - 1});
    }
  }
  run_jobs(jobs, rows);
  return rows;
}

}  // namespace star::experiment
