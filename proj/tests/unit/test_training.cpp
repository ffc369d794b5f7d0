#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "star/training.hpp"

using namespace star;
using train::ExperimentConfig;
using train::TrainConfig;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("star_train_" + name);
  fs::remove_all(p);
  return p;
}

// 10 identities, small frames, so a training step takes milliseconds.
const synth::Dataset& small_dataset() {
  static const synth::Dataset ds = [] {
    synth::DatasetConfig c;
    c.train_identities = 10;
    c.test_identities = 2;
    c.tracks_per = 3;
    c.frames = 3;
    c.height = 32;
    c.width = 16;
    return synth::generate_dataset(c);
  }();
  return ds;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.model.image_height = 32;
  c.model.image_width = 16;
  c.model.channels = {4, 8, 8};
  c.model.dim = 16;
  c.model.gat.hidden = 8;
  c.model.gat.joint_embedding = 4;
  c.train.epochs = 4;
  c.train.warmup_epochs = 1;
  c.train.decay_epochs = {3};
  c.train.steps_per_epoch = 3;
  c.train.identities_per_batch = 3;
  return c;
}

std::vector<ad::Mat> snapshot(const model::Model& m) {
  std::vector<ad::Mat> out;
  for (const auto& p : m.params().all()) out.push_back(p.value);
  return out;
}

bool bitwise_equal(const ad::Mat& a, const ad::Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST(LearningRate, PaperScheduleDecays) {
  const auto c = TrainConfig::paper_schedule();
  EXPECT_EQ(c.epochs, 120);
  EXPECT_DOUBLE_EQ(train::lr_at(59, c).global, 0.1);
  EXPECT_NEAR(train::lr_at(60, c).global, 0.01, 1e-15);
  EXPECT_NEAR(train::lr_at(99, c).global, 0.01, 1e-15);
  EXPECT_NEAR(train::lr_at(100, c).global, 0.001, 1e-15);
  EXPECT_NEAR(train::lr_at(0, c).global, 0.01, 1e-15);
  EXPECT_NEAR(train::lr_at(9, c).global, 0.1, 1e-15);
}

TEST(LearningRate, WarmupAndBackboneRatio) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(train::lr_at(0, c).global, 0.01 / 3);
  EXPECT_DOUBLE_EQ(train::lr_at(2, c).global, 0.01);
  for (int e = 0; e < c.epochs; ++e) {
    const auto lr = train::lr_at(e, c);
    EXPECT_DOUBLE_EQ(lr.backbone, lr.global / 10) << e;
  }
  EXPECT_NEAR(train::lr_at(15, c).global, 0.001, 1e-16);
  EXPECT_NEAR(train::lr_at(29, c).global, 0.0001, 1e-17);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  c.decay_epochs = {10, 30};
  EXPECT_THROW(c.validate(), ConfigError);
  c.decay_epochs = {20, 10};
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig::paper_schedule();
  c.seed = 77;
  c.frame_guidance = false;
  EXPECT_EQ(train::to_json(train::train_config_from_json(train::to_json(c))), train::to_json(c));
}

TEST(ExperimentConfig, UnknownKeysAreListed) {
  nlohmann::json j = {{"train", {{"epochz", 3}, {"seed", 1}}}, {"model", {{"dimension", 8}}}, {"extra", 1}};
  try {
    train::experiment_config_from_json(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("train.epochz"), std::string::npos) << msg;
    EXPECT_NE(msg.find("model.dimension"), std::string::npos) << msg;
    EXPECT_NE(msg.find("extra"), std::string::npos) << msg;
  }
}

TEST(ExperimentConfig, PresetAndOverrides) {
  auto c = train::experiment_config_from_json({{"preset", "paper-schedule"}, {"train", {{"epochs", 130}}}});
  EXPECT_EQ(c.train.epochs, 130);
  EXPECT_DOUBLE_EQ(c.train.base_lr, 0.1);
  EXPECT_THROW(train::experiment_config_from_json({{"preset", "fast"}}), ConfigError);
  auto back = train::experiment_config_from_json(train::to_json(c));
  EXPECT_EQ(train::to_json(back), train::to_json(c));
}

TEST(SampleBatch, ShapeAndBalance) {
  const auto& ds = small_dataset();
  train::TrackIndex index(ds.train);
  TrainConfig c;
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    auto b = train::sample_batch(index, c, rng);
    ASSERT_EQ(b.tracks.size(), 16u);
    std::map<int, int> per_id;
    std::map<int, std::set<const synth::TrackRecord*>> distinct;
    int vis = 0;
    for (std::size_t i = 0; i < b.tracks.size(); ++i) {
      ++per_id[b.tracks[i]->identity_id];
      distinct[b.tracks[i]->identity_id].insert(b.tracks[i]);
      vis += b.tracks[i]->modality == synth::Modality::kVisible;
      EXPECT_EQ(b.labels[i], index.label(b.tracks[i]->identity_id));
    }
    EXPECT_EQ(vis, 8);
    EXPECT_EQ(per_id.size(), 4u);
    for (const auto& [id, n] : per_id) {
      EXPECT_EQ(n, 4);
      EXPECT_EQ(distinct[id].size(), 4u);
    }
  }
}

TEST(SampleBatch, DeterministicUnderSeed) {
  train::TrackIndex index(small_dataset().train);
  std::mt19937_64 a(9), b(9);
  for (int rep = 0; rep < 5; ++rep) {
    EXPECT_EQ(train::sample_batch(index, {}, a).tracks, train::sample_batch(index, {}, b).tracks);
  }
}

TEST(SampleBatch, InsufficientTracksNamesIdentity) {
  auto tracks = small_dataset().train;
  // Identity 4 loses all but one infrared track.
  int kept = 0;
  std::erase_if(tracks, [&](const synth::TrackRecord& r) {
    return r.identity_id == 4 && r.modality == synth::Modality::kInfrared && kept++ > 0;
  });
  train::TrackIndex index(tracks);
  std::mt19937_64 rng(1);
  try {
    train::sample_batch(index, {}, rng);
    FAIL() << "expected SamplingError";
  } catch (const SamplingError& e) {
    EXPECT_NE(std::string(e.what()).find("identity 4"), std::string::npos) << e.what();
  }
  TrainConfig many;
  many.identities_per_batch = 11;
  train::TrackIndex full(small_dataset().train);
  EXPECT_THROW(train::sample_batch(full, many, rng), SamplingError);
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
  train::Trainer tr(small_dataset().train, small_config());
  const auto before = snapshot(tr.model());
  auto rep = train::train_step(tr.model(), tr.next_batch(), {0.0, 0.0}, tr.config().train);
  EXPECT_TRUE(rep.finite());
  const auto& params = tr.model().params().all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable) {
      EXPECT_TRUE(bitwise_equal(before[i], params[i].value)) << params[i].name;
    }
  }
}

TEST(TrainStep, DeterministicAcrossRuns) {
  auto run = [] {
    train::Trainer tr(small_dataset().train, small_config());
    auto rep = train::train_step(tr.model(), tr.next_batch(), {0.01, 0.001}, tr.config().train);
    return std::make_pair(rep.total, snapshot(tr.model()));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  for (std::size_t i = 0; i < a.second.size(); ++i) EXPECT_TRUE(bitwise_equal(a.second[i], b.second[i]));
}

TEST(TrainStep, NonFiniteLossDumpsBatchAndThrows) {
  auto tracks = small_dataset().train;
  for (auto& r : tracks) r.frames(0, 5) = std::numeric_limits<float>::quiet_NaN();
  train::Trainer tr(tracks, small_config());
  const auto before = snapshot(tr.model());
  const auto dir = temp_dir("nan");
  EXPECT_THROW(train::train_step(tr.model(), tr.next_batch(), {0.01, 0.001}, tr.config().train, {}, dir),
               NumericError);
  EXPECT_TRUE(fs::exists(dir / "nonfinite_batch.json"));
  const auto after = snapshot(tr.model());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(bitwise_equal(before[i], after[i]));
  fs::remove_all(dir);
}

TEST(TrainStep, LossDecreasesOverFiftySteps) {
  auto cfg = small_config();
  cfg.train.identities_per_batch = 4;
  train::Trainer tr(small_dataset().train, cfg);
  const auto fixed = tr.next_batch();
  auto eval_loss = [&] {
    ad::Tape t;
    auto f = tr.model().forward(t, fixed.tracks, true, false);
    return tr.model().loss(t, f, fixed.labels).scalar();
  };
  const double start = eval_loss();
  for (int s = 0; s < 50; ++s) train::train_step(tr.model(), tr.next_batch(), {0.01, 0.001}, cfg.train);
  EXPECT_LT(eval_loss(), start);
}

TEST(Checkpoint, SaveLoadIsBitExact) {
  train::Trainer tr(small_dataset().train, small_config());
  tr.run_epoch();
  const auto dir = temp_dir("ckpt");
  tr.save(dir);
  const auto ckpt = train::read_checkpoint(dir);
  EXPECT_EQ(ckpt.epoch, 1);
  model::Model fresh(ckpt.config.resolved_model(), 12345);
  train::restore(fresh, ckpt);
  const auto& a = tr.model().params().all();
  const auto& b = fresh.params().all();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(a[i].value, b[i].value)) << a[i].name;
    EXPECT_TRUE(bitwise_equal(a[i].velocity, b[i].velocity)) << a[i].name;
  }
  std::vector<const synth::TrackRecord*> batch;
  for (const auto& r : small_dataset().test) batch.push_back(&r);
  ad::Tape t1, t2;
  EXPECT_TRUE(bitwise_equal(tr.model().forward(t1, batch, false).features.value(),
                            fresh.forward(t2, batch, false).features.value()));
  fs::remove_all(dir);
}

TEST(Checkpoint, MismatchedWidthIsTypedError) {
  train::Trainer tr(small_dataset().train, small_config());
  const auto dir = temp_dir("ckpt_dim");
  tr.save(dir);
  auto other = small_config().resolved_model();
  other.dim = 8;
  other.num_classes = 10;
  model::Model m(other, 0);
  EXPECT_THROW(train::restore(m, train::read_checkpoint(dir)), CheckpointError);
  EXPECT_THROW(train::read_checkpoint(temp_dir("missing")), CheckpointError);
  fs::remove_all(dir);
}

TEST(Checkpoint, ResumeMatchesUninterruptedTraining) {
  const auto cfg = small_config();
  train::Trainer straight(small_dataset().train, cfg);
  std::vector<std::string> rows_a;
  rows_a.push_back(train::csv_row(straight.run_epoch()));
  rows_a.push_back(train::csv_row(straight.run_epoch()));

  train::Trainer first(small_dataset().train, cfg);
  std::vector<std::string> rows_b;
  rows_b.push_back(train::csv_row(first.run_epoch()));
  const auto dir = temp_dir("resume");
  first.save(dir);
  train::Trainer resumed(small_dataset().train, train::read_checkpoint(dir));
  EXPECT_EQ(resumed.epoch(), 1);
  rows_b.push_back(train::csv_row(resumed.run_epoch()));

  EXPECT_EQ(rows_a, rows_b);
  const auto& a = straight.model().params().all();
  const auto& b = resumed.model().params().all();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bitwise_equal(a[i].value, b[i].value)) << a[i].name;
  fs::remove_all(dir);
}

TEST(Trainer, CsvRowsHaveEveryLossTerm) {
  train::Trainer tr(small_dataset().train, small_config());
  const auto header = train::csv_header();
  const auto row = train::csv_row(tr.run_epoch());
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
  EXPECT_NE(header.find("l_id,l_tri,l_kl,l_sad"), std::string::npos);
  EXPECT_EQ(row.rfind("0,", 0), 0u);
}
