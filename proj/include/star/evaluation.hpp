#pragma once

// Cross-modality retrieval evaluation: embedding extraction, CMC rank-k
// and mAP for infrared->visible (I2V) and visible->infrared (V2I).

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/model.hpp"
#include "star/synthdata.hpp"

namespace star::eval {

using ad::Index;
using ad::Mat;

inline const std::vector<int>& default_ranks() {
  static const std::vector<int> ks{1, 5, 10, 20};
  return ks;
}

// Row-normalized track embeddings plus the metadata needed for retrieval.
struct EmbeddingSet {
  Mat embeddings;  // [M x D], unit rows
  std::vector<int> identities;
  std::vector<int> cameras;
  std::vector<synth::Modality> modalities;

  Index size() const { return embeddings.rows(); }

  EmbeddingSet select(synth::Modality m) const {
    std::vector<Index> rows;
    for (Index i = 0; i < size(); ++i) {
      if (modalities[static_cast<std::size_t>(i)] == m) rows.push_back(i);
    }
    EmbeddingSet out;
    out.embeddings.resize(static_cast<Index>(rows.size()), embeddings.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto i = static_cast<std::size_t>(rows[k]);
      out.embeddings.row(static_cast<Index>(k)) = embeddings.row(rows[k]);
      out.identities.push_back(identities[i]);
      out.cameras.push_back(cameras[i]);
      out.modalities.push_back(modalities[i]);
    }
    return out;
  }
};

// Eval-mode forward (batch-norm running statistics) over groups of up to
// `batch_size` tracks with equal length.
inline EmbeddingSet extract_embeddings(const model::Model& m, const std::vector<const synth::TrackRecord*>& tracks,
                                       int batch_size = 16) {
  if (batch_size < 1) throw ConfigError("extract_embeddings: batch size must be positive");
  EmbeddingSet out;
  out.embeddings.resize(static_cast<Index>(tracks.size()), m.config().dim);
  std::map<int, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < tracks.size(); ++i) by_length[tracks[i]->num_frames()].push_back(i);
  for (const auto& [len, members] : by_length) {
    for (std::size_t start = 0; start < members.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(members.size(), start + static_cast<std::size_t>(batch_size));
      std::vector<const synth::TrackRecord*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(tracks[members[k]]);
      ad::Tape t;
      const Mat g = m.forward(t, batch, false).embeddings.value();
      for (std::size_t k = start; k < end; ++k) {
        out.embeddings.row(static_cast<Index>(members[k])) =
            agg::TrackEmbedding::from(g.row(static_cast<Index>(k - start))).normalized;
      }
    }
  }
  for (const auto* r : tracks) {
    out.identities.push_back(r->identity_id);
    out.cameras.push_back(r->camera_id);
    out.modalities.push_back(r->modality);
  }
  return out;
}

inline EmbeddingSet extract_embeddings(const model::Model& m, const std::vector<synth::TrackRecord>& tracks,
                                       int batch_size = 16) {
  std::vector<const synth::TrackRecord*> p;
  for (const auto& r : tracks) p.push_back(&r);
  return extract_embeddings(m, p, batch_size);
}

struct RetrievalResult {
  std::map<int, double> rank;   // k -> CMC accuracy
  double map = 0.0;
  std::vector<double> ap;       // per evaluated query
  int num_queries = 0;          // queries with at least one true match
  int num_gallery = 0;
};

// Cosine ranking of every query against the gallery. Queries whose
// identity is absent from the gallery are skipped. Ties in similarity are
// broken by gallery index.
inline RetrievalResult retrieve(const Mat& query, const std::vector<int>& query_ids, const Mat& gallery,
                                const std::vector<int>& gallery_ids, const std::vector<int>& ks = default_ranks()) {
  if (gallery.rows() == 0) throw EmptyInputError("evaluate: empty gallery");
  if (query.rows() == 0) throw EmptyInputError("evaluate: no queries");
  if (query.cols() != gallery.cols()) throw ShapeError("evaluate: query and gallery dimensions differ");
  if (static_cast<Index>(query_ids.size()) != query.rows() || static_cast<Index>(gallery_ids.size()) != gallery.rows()) {
    throw ShapeError("evaluate: one identity per embedding required");
  }
  auto normalize = [](const Mat& x) {
    Mat y = x;
    for (Index i = 0; i < y.rows(); ++i) {
      const double n = y.row(i).norm();
      if (n > 0.0) y.row(i) /= n;
    }
    return y;
  };
  const Mat sim = normalize(query) * normalize(gallery).transpose();
  RetrievalResult r;
  r.num_gallery = static_cast<int>(gallery.rows());
  for (int k : ks) r.rank[k] = 0.0;
  std::vector<Index> order(static_cast<std::size_t>(gallery.rows()));
  for (Index q = 0; q < query.rows(); ++q) {
    const int id = query_ids[static_cast<std::size_t>(q)];
    if (std::find(gallery_ids.begin(), gallery_ids.end(), id) == gallery_ids.end()) continue;
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return sim(q, a) > sim(q, b); });
    int hits = 0;
    int first = -1;
    double precision_sum = 0.0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (gallery_ids[static_cast<std::size_t>(order[pos])] != id) continue;
      ++hits;
      if (first < 0) first = static_cast<int>(pos);
      precision_sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
    }
    r.ap.push_back(precision_sum / hits);
    for (int k : ks) {
      if (first < k) r.rank[k] += 1.0;
    }
    ++r.num_queries;
  }
  if (r.num_queries == 0) throw EmptyInputError("evaluate: no query identity appears in the gallery");
  for (auto& [k, v] : r.rank) v /= r.num_queries;
  r.map = std::accumulate(r.ap.begin(), r.ap.end(), 0.0) / r.num_queries;
  return r;
}

enum class Protocol { kI2V, kV2I };

inline std::string to_string(Protocol p) { return p == Protocol::kI2V ? "i2v" : "v2i"; }

inline Protocol protocol_from_string(const std::string& s) {
  if (s == "i2v") return Protocol::kI2V;
  if (s == "v2i") return Protocol::kV2I;
  throw ConfigError("unknown protocol '" + s + "' (expected i2v or v2i)");
}

// I2V: infrared queries against the visible gallery; V2I the reverse.
inline RetrievalResult evaluate(const EmbeddingSet& all, Protocol protocol,
                                const std::vector<int>& ks = default_ranks()) {
  const auto qm = protocol == Protocol::kI2V ? synth::Modality::kInfrared : synth::Modality::kVisible;
  const auto gm = protocol == Protocol::kI2V ? synth::Modality::kVisible : synth::Modality::kInfrared;
  const auto q = all.select(qm);
  const auto g = all.select(gm);
  return retrieve(q.embeddings, q.identities, g.embeddings, g.identities, ks);
}

inline nlohmann::json to_json(const RetrievalResult& r) {
  nlohmann::json rank = nlohmann::json::object();
  for (const auto& [k, v] : r.rank) rank["rank" + std::to_string(k)] = v;
  return {{"cmc", rank}, {"mAP", r.map}, {"num_queries", r.num_queries}, {"num_gallery", r.num_gallery},
          {"ap", r.ap}};
}

// Fixed-width table, one row per result: R1 R5 R10 R20 mAP per protocol.
inline std::string format_table(const std::vector<std::pair<std::string, std::map<Protocol, RetrievalResult>>>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-18s | %-38s | %-38s\n", "", "Infrared to Visible (I2V)", "Visible to Infrared (V2I)");
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-18s | %6s %6s %6s %6s %7s  | %6s %6s %6s %6s %7s\n", "model", "R1", "R5", "R10",
                "R20", "mAP", "R1", "R5", "R10", "R20", "mAP");
  out += buf;
  out += std::string(102, '-') + "\n";
  for (const auto& [name, res] : rows) {
    std::snprintf(buf, sizeof(buf), "%-18s |", name.c_str());
    out += buf;
    for (Protocol p : {Protocol::kI2V, Protocol::kV2I}) {
      auto it = res.find(p);
      if (it == res.end()) {
        std::snprintf(buf, sizeof(buf), " %6s %6s %6s %6s %7s  |", "-", "-", "-", "-", "-");
      } else {
        const auto& r = it->second;
        auto at = [&](int k) { return r.rank.count(k) ? 100.0 * r.rank.at(k) : 0.0; };
        std::snprintf(buf, sizeof(buf), " %6.2f %6.2f %6.2f %6.2f %7.2f  |", at(1), at(5), at(10), at(20),
                      100.0 * r.map);
      }
      out += buf;
    }
    out.back() = '\n';
  }
  return out;
}

}  // namespace star::eval
