#include "dimsel/synthgen.hpp"

#include "dimsel/random.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace dimsel {

namespace {

std::string padded(char prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", prefix, n);
  return buf;
}

struct ClusterOutput {
  std::vector<Eigen::VectorXd> queries;
  std::vector<bool> is_test;
  std::vector<std::vector<std::pair<Eigen::VectorXd, int>>> positives;
};

Eigen::VectorXd noisy(const Eigen::VectorXd& planted, double signal, double noise, Rng& rng) {
  Eigen::VectorXd v = signal * planted;
  if (noise > 0.0) {
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) += noise * rng.normal();
  }
  return v;
}

}  // namespace

void SynthConfig::validate() const {
  if (dim < 2) throw DataError("synth: dim must be >= 2");
  if (n_clusters < 1 || queries_per_cluster < 1 || test_queries_per_cluster < 0 ||
      docs_per_query < 1 || n_distractors < 0 || planted_size < 1) {
    throw DataError("synth: counts must be >= 1");
  }
  if (planted_size >= dim) throw DataError("synth: planted size must be smaller than dim");
  if (!(signal_strength > 0.0)) throw DataError("synth: signal strength must be positive");
  if (noise_scale < 0.0) throw DataError("synth: noise scale must be non-negative");
  if (query_jitter < 0.0 || query_jitter >= 1.0) throw DataError("synth: query jitter must be in [0, 1)");
  if (flip_rate < 0.0 || flip_rate >= 0.5) throw DataError("synth: flip rate must be in [0, 0.5)");
  if (graded_fraction < 0.0 || graded_fraction > 1.0) throw DataError("synth: graded fraction must be in [0, 1]");
  if (disjoint && static_cast<Eigen::Index>(n_clusters) * planted_size > dim) {
    throw DataError("synth: n_clusters * planted_size exceeds dim with disjoint sets required");
  }
}

nlohmann::json SynthConfig::to_json() const {
  return {{"dim", dim},
          {"n_clusters", n_clusters},
          {"queries_per_cluster", queries_per_cluster},
          {"test_queries_per_cluster", test_queries_per_cluster},
          {"docs_per_query", docs_per_query},
          {"n_distractors", n_distractors},
          {"planted_size", planted_size},
          {"signal_strength", signal_strength},
          {"noise_scale", noise_scale},
          {"query_jitter", query_jitter},
          {"flip_rate", flip_rate},
          {"graded_fraction", graded_fraction},
          {"disjoint", disjoint},
          {"seed", seed}};
}

SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  const Eigen::Index dim = cfg.dim;
  const auto s = static_cast<std::size_t>(cfg.planted_size);

  // Planted sets.
  std::vector<std::vector<Eigen::Index>> planted(static_cast<std::size_t>(cfg.n_clusters));
  Rng layout_rng(derive_seed(cfg.seed, "planted-sets"));
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(dim));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  shuffle(perm, layout_rng);
  for (std::size_t c = 0; c < planted.size(); ++c) {
    if (!cfg.disjoint) shuffle(perm, layout_rng);
    const std::size_t offset = cfg.disjoint ? c * s : 0;
    planted[c].assign(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                      perm.begin() + static_cast<std::ptrdiff_t>(offset + s));
    std::sort(planted[c].begin(), planted[c].end());
  }

  // Clusters are generated from independent streams.
  const int per_cluster = cfg.queries_per_cluster + cfg.test_queries_per_cluster;
  std::vector<ClusterOutput> clusters(planted.size());
  for (std::size_t c = 0; c < planted.size(); ++c) {
    Rng rng(derive_seed(cfg.seed, "cluster-" + std::to_string(c)));
    Eigen::VectorXd prototype = Eigen::VectorXd::Zero(dim);
    for (auto j : planted[c]) prototype(j) = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);

    auto& out = clusters[c];
    for (int q = 0; q < per_cluster; ++q) {
      Eigen::VectorXd part = prototype;
      for (auto j : planted[c]) {
        part(j) *= rng.uniform(1.0 - cfg.query_jitter, 1.0 + cfg.query_jitter);
        if (rng.bernoulli(cfg.flip_rate)) part(j) = -part(j);
      }
      part.normalize();
      out.queries.push_back(noisy(part, cfg.signal_strength, cfg.noise_scale, rng));
      out.is_test.push_back(q >= cfg.queries_per_cluster);
      std::vector<std::pair<Eigen::VectorXd, int>> pos;
      for (int d = 0; d < cfg.docs_per_query; ++d) {
        const int label = rng.bernoulli(cfg.graded_fraction) ? 2 : 1;
        const double noise = label == 2 ? 0.5 * cfg.noise_scale : cfg.noise_scale;
        pos.emplace_back(noisy(part, cfg.signal_strength, noise, rng), label);
      }
      out.positives.push_back(std::move(pos));
    }
  }

  SynthData data;
  data.planted = planted;
  std::vector<std::string> train_ids, test_ids, doc_ids;
  std::vector<Eigen::VectorXd> train_rows, test_rows, doc_rows;
  std::size_t q_counter = 0, d_counter = 0;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    auto& out = clusters[c];
    for (std::size_t q = 0; q < out.queries.size(); ++q) {
      const std::string qid = padded(out.is_test[q] ? 't' : 'q', q_counter++);
      data.cluster_of[qid] = static_cast<int>(c);
      (out.is_test[q] ? test_ids : train_ids).push_back(qid);
      (out.is_test[q] ? test_rows : train_rows).push_back(out.queries[q] / out.queries[q].norm());
      for (auto& [vec, label] : out.positives[q]) {
        const std::string did = padded('d', d_counter++);
        doc_ids.push_back(did);
        doc_rows.push_back(vec / vec.norm());
        data.qrels.judgments[qid][did] = label;
      }
    }
  }
  Rng noise_rng(derive_seed(cfg.seed, "distractors"));
  for (int i = 0; i < cfg.n_distractors; ++i) {
    Eigen::VectorXd v(dim);
    for (Eigen::Index j = 0; j < dim; ++j) v(j) = noise_rng.normal();
    doc_ids.push_back(padded('d', d_counter++));
    doc_rows.push_back(v / v.norm());
  }

  auto stack = [dim](std::vector<std::string> ids, const std::vector<Eigen::VectorXd>& rows) {
    RowMatrixXf m(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose().cast<float>();
    return normalize(EmbeddingMatrix(std::move(ids), std::move(m)));
  };
  data.train_queries = stack(std::move(train_ids), train_rows);
  if (!test_rows.empty()) {
    data.test_queries = stack(std::move(test_ids), test_rows);
  }
  data.corpus = stack(std::move(doc_ids), doc_rows);
  return data;
}

nlohmann::json planted_json(const SynthData& data) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& dims : data.planted) clusters.push_back(dims);
  return {{"planted", clusters}, {"cluster_of", data.cluster_of}};
}

}  // namespace dimsel
