#pragma once

// Training objectives: skeleton consistency (symmetric KL between the edge
// and joint streams), label-smoothed identity cross-entropy, batch-hard
// triplet loss, and their unweighted sum.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "star/ops.hpp"

namespace star::loss {

using ad::Index;
using ad::Mat;
using ad::Tape;
using ad::Var;

struct LossReport {
  double l_id = 0.0;
  double l_tri = 0.0;
  double l_kl = 0.0;
  double l_sad = 0.0;
  double total = 0.0;

  bool finite() const {
    return std::isfinite(l_id) && std::isfinite(l_tri) && std::isfinite(l_kl) && std::isfinite(l_sad) &&
           std::isfinite(total);
  }
};

inline LossReport total_loss(double l_id, double l_tri, double l_kl, double l_sad = 0.0) {
  return {l_id, l_tri, l_kl, l_sad, l_id + l_tri + l_kl + l_sad};
}

enum class KlMode { kAllSteps, kLastStep };

constexpr double kProbFloor = 1e-8;

// 0.5 * sum_t sum_i (P_i - Q_i)(log P_i - log Q_i), P and Q row softmaxes,
// probabilities clamped at 1e-8 before the logs.
inline Var kl_consistency(const Var& edge_stream, const Var& joint_stream, KlMode mode = KlMode::kAllSteps) {
  if (edge_stream.rows() != joint_stream.rows() || edge_stream.cols() != joint_stream.cols()) {
    throw ShapeError("kl_consistency: stream shapes differ");
  }
  if (edge_stream.rows() == 0) throw EmptyInputError("kl_consistency: no time steps");
  Var a = edge_stream;
  Var b = joint_stream;
  if (mode == KlMode::kLastStep) {
    a = ad::slice_rows(a, a.rows() - 1, 1);
    b = ad::slice_rows(b, b.rows() - 1, 1);
  }
  Var p = ad::clamp_min(ad::softmax_rows(a), kProbFloor);
  Var q = ad::clamp_min(ad::softmax_rows(b), kProbFloor);
  Var terms = ad::mul(ad::sub(p, q), ad::sub(ad::log(p), ad::log(q)));
  return ad::scale(ad::sum_all(terms), 0.5);
}

inline double kl_consistency(const Mat& edge_stream, const Mat& joint_stream, KlMode mode = KlMode::kAllSteps) {
  Tape t;
  return kl_consistency(t.constant(edge_stream), t.constant(joint_stream), mode).scalar();
}

// Cross-entropy against (1 - s) * onehot + s / C, averaged over the batch.
inline Var id_loss(const Var& logits, const std::vector<int>& labels, double smoothing = 0.1) {
  const Index batch = logits.rows();
  const Index classes = logits.cols();
  if (batch == 0) throw EmptyInputError("id_loss: empty batch");
  if (static_cast<Index>(labels.size()) != batch) throw ShapeError("id_loss: one label per row required");
  Mat target = Mat::Constant(batch, classes, smoothing / static_cast<double>(classes));
  for (Index i = 0; i < batch; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) {
      throw ConfigError("id_loss: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
    target(i, y) += 1.0 - smoothing;
  }
  Var lp = ad::log_softmax_rows(logits);
  return ad::scale(ad::sum_all(ad::mul(lp, logits.tape()->constant(std::move(target)))), -1.0 / batch);
}

inline double id_loss(const Mat& logits, const std::vector<int>& labels, double smoothing = 0.1) {
  Tape t;
  return id_loss(t.constant(logits), labels, smoothing).scalar();
}

struct TripletStats {
  int anchors = 0;
  int skipped = 0;
};

// Batch-hard triplet loss on Euclidean distances:
//   mean_a max(0, max_p d(a, p) - min_n d(a, n) + margin).
// Anchors without a positive or a negative in the batch are skipped.
inline Var triplet_loss(const Var& embeddings, const std::vector<int>& labels, double margin = 0.3,
                        TripletStats* stats = nullptr) {
  const Index batch = embeddings.rows();
  if (static_cast<Index>(labels.size()) != batch) throw ShapeError("triplet_loss: one label per row required");
  Tape& t = *embeddings.tape();
  Var dist = ad::pairwise_distance(embeddings);
  const Mat& d = dist.value();
  std::vector<std::pair<Index, Index>> pos;
  std::vector<std::pair<Index, Index>> neg;
  int skipped = 0;
  for (Index a = 0; a < batch; ++a) {
    Index hp = -1;
    Index hn = -1;
    for (Index j = 0; j < batch; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (hp < 0 || d(a, j) > d(a, hp)) hp = j;
      } else if (hn < 0 || d(a, j) < d(a, hn)) {
        hn = j;
      }
    }
    if (hp < 0 || hn < 0) {
      ++skipped;
      continue;
    }
    pos.emplace_back(a, hp);
    neg.emplace_back(a, hn);
  }
  if (skipped > 0) spdlog::warn("triplet_loss: skipped {} anchors without positive or negative", skipped);
  if (stats != nullptr) *stats = {static_cast<int>(pos.size()), skipped};
  if (pos.empty()) return t.constant(Mat::Zero(1, 1));
  Var hinge = ad::relu(ad::add_scalar(ad::sub(ad::pick(dist, pos), ad::pick(dist, neg)), margin));
  return ad::mean_all(hinge);
}

inline double triplet_loss(const Mat& embeddings, const std::vector<int>& labels, double margin = 0.3) {
  Tape t;
  return triplet_loss(t.constant(embeddings), labels, margin).scalar();
}

}  // namespace star::loss
