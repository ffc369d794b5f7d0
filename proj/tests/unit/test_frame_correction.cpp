#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "star/frame_correction.hpp"
#include "star/gradcheck.hpp"
#include "test_util.hpp"

using namespace star;
using ad::Mat;
using ad::Tape;
using ad::Var;
using star::testing::random_mat;

namespace {

struct Fixture {
  nn::ParamStore ps;
  frame::CorrectionParams p;

  explicit Fixture(ad::Index dim = 8, ad::Index edge_inputs = 6, std::uint64_t seed = 1) {
    nn::Rng rng(seed);
    frame::CorrectionConfig cfg;
    cfg.dim = dim;
    cfg.edge_inputs = edge_inputs;
    cfg.heads = 4;
    cfg.se_ratio = 4;
    p = frame::CorrectionParams::create(ps, "fc", cfg, rng);
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Independent single-step LSTM cell with zero initial state.
Mat lstm_cell_oracle(const Mat& x, const Mat& wi, const Mat& b, ad::Index h) {
  Mat z = x * wi + b;
  Mat out(1, h);
  for (ad::Index k = 0; k < h; ++k) {
    const double i = sigmoid(z(0, k));
    const double g = std::tanh(z(0, 2 * h + k));
    const double o = sigmoid(z(0, 3 * h + k));
    out(0, k) = o * std::tanh(i * g);
  }
  return out;
}

}  // namespace

TEST(EncodeEdges, ZeroInputsAndZeroWeightsGiveZero) {
  Fixture f;
  for (auto& prm : f.ps.all()) prm.value.setZero();
  f.p.lstm.bias->value.middleCols(f.p.lstm.hidden, f.p.lstm.hidden).setOnes();
  skeleton::EdgeFeatureSequence edges(5, 2);
  // d = 0, theta = 0 still gives cos = 1; zero the FC so the LSTM input is 0.
  Mat g = frame::encode_edges(edges, 64.0, f.p);
  EXPECT_EQ(g.rows(), 5);
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(EncodeEdges, SingleStepMatchesCellOracle) {
  Fixture f;
  std::mt19937_64 rng(4);
  Mat in = random_mat(rng, 1, 6);
  Tape t;
  Mat g = frame::encode_edges(t, {t.constant(in)}, f.p).front().value();
  Mat x = in * f.p.edge_fc.weight->value + f.p.edge_fc.bias->value;
  Mat expect = lstm_cell_oracle(x, f.p.lstm.w_input->value, f.p.lstm.bias->value, f.p.lstm.hidden);
  EXPECT_LT((g - expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(EncodeEdges, BatchedEqualsSingle) {
  Fixture f;
  std::mt19937_64 rng(5);
  Mat a = random_mat(rng, 4, 6);
  Mat b = random_mat(rng, 4, 6);
  Tape t;
  auto both = frame::encode_edges(t, {t.constant(a), t.constant(b)}, f.p);
  Tape t2;
  auto single = frame::encode_edges(t2, {t2.constant(b)}, f.p);
  EXPECT_LT((both[1].value() - single[0].value()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EncodeEdges, EmptyInputIsError) {
  Fixture f;
  skeleton::EdgeFeatureSequence edges(0, 2);
  EXPECT_THROW(frame::encode_edges(edges, 64.0, f.p), EmptyInputError);
}

TEST(EncodeEdges, GradientMatchesFiniteDifferences) {
  Fixture f;
  std::mt19937_64 rng(6);
  Mat in = random_mat(rng, 3, 6);
  std::vector<ad::Parameter*> params = {f.p.edge_fc.weight, f.p.edge_fc.bias, f.p.lstm.w_input, f.p.lstm.w_hidden,
                                        f.p.lstm.bias};
  auto rep = gradcheck::check(params, [&](Tape& t) {
    return ad::sum_all(frame::encode_edges(t, {t.constant(in)}, f.p).front());
  });
  for (const auto& e : rep.tensors) EXPECT_LT(e.relative_error, 1e-4) << e.name;
}

TEST(TimeAttention, SingleFrameReturnsProjectedValue) {
  Fixture f;
  std::mt19937_64 rng(7);
  Mat x = random_mat(rng, 3, 8);  // T = 1, S = 3
  Mat g = random_mat(rng, 1, 8);
  Tape t;
  auto ta = frame::time_attention(t, t.constant(x), t.constant(g), 3, f.p);
  const auto& a = f.p.time_attn;
  Mat v = g * a.v.weight->value + a.v.bias->value;
  Mat expect = v * a.o.weight->value + a.o.bias->value;
  for (int s = 0; s < 3; ++s) EXPECT_LT((ta.enhanced.value().row(s) - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(ta.weights.rows(), 1);
  EXPECT_EQ(ta.weights.cols(), 8);
}

TEST(TimeAttention, IdenticalGuidanceRowsGiveUniformAverage) {
  Fixture f;
  std::mt19937_64 rng(8);
  Mat x = random_mat(rng, 2 * 4, 8);
  Mat row = random_mat(rng, 1, 8);
  Mat g = row.replicate(4, 1);
  Tape t;
  std::vector<Mat> probs;
  auto ta = frame::time_attention(t, t.constant(x), t.constant(g), 2, f.p, &probs);
  for (const auto& p : probs) EXPECT_LT((p.array() - 0.25).abs().maxCoeff(), 1e-12);
  const auto& a = f.p.time_attn;
  Mat expect = (row * a.v.weight->value + a.v.bias->value) * a.o.weight->value + a.o.bias->value;
  for (ad::Index r = 0; r < 8; ++r) EXPECT_LT((ta.enhanced.value().row(r) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, ProbabilityRowsSumToOne) {
  Fixture f;
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Mat x = random_mat(rng, 3 * 5, 8, -1e3, 1e3);
    Mat g = random_mat(rng, 5, 8, -1e3, 1e3);
    Tape t;
    std::vector<Mat> probs;
    frame::time_attention(t, t.constant(x), t.constant(g), 3, f.p, &probs);
    frame::visual_attention(t, t.constant(g), t.constant(x), 3, f.p, &probs);
    EXPECT_EQ(probs.size(), 4u + 3u * 4u);
    for (const auto& p : probs) {
      EXPECT_TRUE(p.allFinite());
      for (ad::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
    }
  }
}

TEST(VisualAttention, SingleFrameReturnsProjectedStripe) {
  Fixture f;
  std::mt19937_64 rng(10);
  Mat x = random_mat(rng, 2, 8);
  Mat g = random_mat(rng, 1, 8);
  Tape t;
  Mat h = frame::visual_attention(t, t.constant(g), t.constant(x), 2, f.p).value();
  const auto& a = f.p.visual_attn;
  for (int s = 0; s < 2; ++s) {
    Mat expect = (x.row(s) * a.v.weight->value + a.v.bias->value) * a.o.weight->value + a.o.bias->value;
    EXPECT_LT((h.row(s) - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(VisualAttention, ScaledQueriesStillNormalize) {
  Fixture f;
  std::mt19937_64 rng(11);
  Mat x = random_mat(rng, 2 * 4, 8);
  Mat g = random_mat(rng, 4, 8);
  for (double c : {0.1, 1.0, 10.0, 100.0}) {
    Tape t;
    std::vector<Mat> probs;
    frame::visual_attention(t, t.constant(Mat(g * c)), t.constant(x), 2, f.p, &probs);
    for (const auto& p : probs) {
      for (ad::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
    }
  }
}

TEST(Correct, ZeroFfnOutputGivesResidualPlusEpsilon) {
  Fixture f;
  f.p.ffn.output.weight->value.setZero();
  f.p.ffn.output.bias->value.setZero();
  std::mt19937_64 rng(12);
  frame::ClipFeatures x{4, 2, random_mat(rng, 8, 8)};
  Mat g = random_mat(rng, 4, 8);
  const auto y = frame::correct(x, g, f.p);
  EXPECT_TRUE(y.tokens == Mat((x.tokens.array() + 1e-3).matrix()));
}

TEST(Correct, StripePermutationEquivariance) {
  Fixture f;
  std::mt19937_64 rng(13);
  const int frames = 3, stripes = 4;
  frame::ClipFeatures x{frames, stripes, random_mat(rng, frames * stripes, 8)};
  Mat g = random_mat(rng, frames, 8);
  const std::vector<int> perm = {2, 0, 3, 1};
  frame::ClipFeatures xp = x;
  for (int s = 0; s < stripes; ++s) {
    for (int t = 0; t < frames; ++t) xp.token(t, s) = x.token(t, perm[s]);
  }
  const auto y = frame::correct(x, g, f.p);
  const auto yp = frame::correct(xp, g, f.p);
  for (int s = 0; s < stripes; ++s) {
    for (int t = 0; t < frames; ++t) EXPECT_LT((yp.token(t, s) - y.token(t, perm[s])).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Correct, LargeInputsStayFinite) {
  Fixture f;
  std::mt19937_64 rng(14);
  frame::ClipFeatures x{4, 2, random_mat(rng, 8, 8, -1e3, 1e3)};
  Mat g = random_mat(rng, 4, 8, -1e3, 1e3);
  EXPECT_TRUE(frame::correct(x, g, f.p).tokens.allFinite());
}

TEST(Correct, ShapeMismatchIsError) {
  Fixture f;
  Tape t;
  Var x = t.constant(Mat::Zero(8, 8));
  EXPECT_THROW(frame::correct(t, x, t.constant(Mat::Zero(3, 8)), 2, f.p), ShapeError);
  EXPECT_THROW(frame::correct(t, x, t.constant(Mat::Zero(4, 6)), 2, f.p), ShapeError);
}

TEST(Correct, GradientMatchesFiniteDifferences) {
  // T = 4, S = 2, D = 8, including the edge encoder that feeds the guidance.
  Fixture f;
  std::mt19937_64 rng(15);
  Mat x = random_mat(rng, 8, 8);
  Mat edges = random_mat(rng, 4, 6);
  Mat w = random_mat(rng, 8, 8);
  auto rep = gradcheck::check(f.ps, [&](Tape& t) {
    Var g = frame::encode_edges(t, {t.constant(edges)}, f.p).front();
    Var y = frame::correct(t, t.constant(x), g, 2, f.p);
    return ad::sum_all(ad::mul(ad::tanh(y), t.constant(w)));
  });
  EXPECT_EQ(rep.tensors.size(), f.ps.all().size());
  for (const auto& e : rep.tensors) EXPECT_LT(e.relative_error, 1e-4) << e.name;
}
