#include "dimsel/oracle.hpp"

#include "dimsel/mathops.hpp"
#include "dimsel/parallel.hpp"
#include "dimsel/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dimsel {

void OracleConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DataError("oracle: tau must be positive");
  if (pool_size < 1) throw DataError("oracle: pool size K must be >= 1");
  if (sample_size < 1) throw DataError("oracle: sample size M must be >= 1");
  if (sample_size > pool_size) throw DataError("oracle: sample size M must not exceed pool size K");
}

double gain(int y) { return std::ldexp(1.0, y) - 1.0; }

Eigen::VectorXd positive_centroid(const Eigen::Ref<const RowMatrixXf>& rows,
                                  std::span<const int> labels, bool weighted) {
  if (rows.rows() == 0) throw DataError("query has no relevant documents");
  if (static_cast<std::size_t>(rows.rows()) != labels.size()) {
    throw DataError("positive_centroid: label count does not match row count");
  }
  Eigen::VectorXd weights(rows.rows());
  if (weighted) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      weights(i) = gain(labels[static_cast<std::size_t>(i)]);
      total += weights(i);
    }
    if (!(total > 0.0)) throw DataError("query has no relevant documents");
    weights /= total;
  } else {
    weights.setConstant(1.0 / static_cast<double>(rows.rows()));
  }
  Eigen::VectorXd centroid = Eigen::VectorXd::Zero(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    centroid += weights(i) * rows.row(i).transpose().cast<double>();
  }
  return centroid;
}

std::vector<Eigen::Index> mine_hard_negatives(QueryRow query, const EmbeddingMatrix& corpus,
                                              std::span<const Eigen::Index> excluded,
                                              const OracleConfig& cfg, std::string_view query_id) {
  cfg.validate();
  if (query.size() != corpus.dim()) throw DataError("mine_hard_negatives: dimension mismatch");

  struct Scored {
    double score;
    Eigen::Index row;
  };
  std::vector<Scored> candidates;
  candidates.reserve(static_cast<std::size_t>(corpus.count()));
  auto skip = excluded.begin();
  for (Eigen::Index r = 0; r < corpus.count(); ++r) {
    while (skip != excluded.end() && *skip < r) ++skip;
    if (skip != excluded.end() && *skip == r) continue;
    candidates.push_back({dot_interleaved(query, corpus.row(r)), r});
  }
  if (candidates.empty()) throw DataError("no negatives available for query '" + std::string(query_id) + "'");

  const std::size_t pool = std::min<std::size_t>(static_cast<std::size_t>(cfg.pool_size), candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(pool),
                    candidates.end(), [](const Scored& a, const Scored& b) {
                      return a.score != b.score ? a.score > b.score : a.row < b.row;
                    });
  candidates.resize(pool);

  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(cfg.sample_size), pool);
  if (take < pool) {
    Rng rng(derive_seed(cfg.seed, query_id));
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(pool - i));
      std::swap(candidates[i], candidates[j]);
    }
  }
  std::vector<Eigen::Index> rows(take);
  for (std::size_t i = 0; i < take; ++i) rows[i] = candidates[i].row;
  std::sort(rows.begin(), rows.end());
  return rows;
}

Eigen::VectorXd negative_mean(const EmbeddingMatrix& corpus, std::span<const Eigen::Index> rows) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(corpus.dim());
  if (rows.empty()) return mean;
  for (auto r : rows) mean += corpus.row(r).transpose().cast<double>();
  return mean / static_cast<double>(rows.size());
}

Eigen::VectorXd raw_scores(const Eigen::Ref<const Eigen::VectorXd>& query,
                           const Eigen::Ref<const Eigen::VectorXd>& centroid,
                           const Eigen::Ref<const Eigen::VectorXd>& negative) {
  if (query.size() != centroid.size() || query.size() != negative.size()) {
    throw DataError("raw_scores: dimension mismatch");
  }
  return query.cwiseProduct(centroid - negative);
}

Eigen::VectorXd importance_distribution(const Eigen::Ref<const Eigen::VectorXd>& raw, double tau) {
  if (!(tau > 0.0)) throw DataError("importance_distribution: tau must be positive");
  if (!raw.allFinite()) throw DataError("importance_distribution: non-finite raw scores");
  return softmax(raw / tau);
}

TargetSet build_targets(const EmbeddingMatrix& corpus, const EmbeddingMatrix& queries,
                        const Qrels& qrels, const OracleConfig& cfg, int threads) {
  cfg.validate();
  if (queries.dim() != corpus.dim()) throw DataError("build_targets: query/corpus dimension mismatch");

  const auto n = static_cast<std::size_t>(queries.count());
  std::vector<std::optional<ImportanceTarget>> slots(n);
  std::vector<std::size_t> missing(n, 0);

  parallel_for(n, threads, [&](std::size_t qi) {
    const auto row = static_cast<Eigen::Index>(qi);
    const std::string& qid = queries.id(row);
    auto judged = qrels.judgments.find(qid);
    if (judged == qrels.judgments.end()) return;

    std::vector<Eigen::Index> pos_rows;
    std::vector<int> labels;
    for (const auto& [doc, y] : judged->second) {
      if (y <= 0) continue;
      if (auto r = corpus.find(doc)) {
        pos_rows.push_back(*r);
        labels.push_back(y);
      } else {
        ++missing[qi];
      }
    }
    if (pos_rows.empty()) return;

    RowMatrixXf pos(static_cast<Eigen::Index>(pos_rows.size()), corpus.dim());
    for (std::size_t i = 0; i < pos_rows.size(); ++i) {
      pos.row(static_cast<Eigen::Index>(i)) = corpus.row(pos_rows[i]);
    }
    const Eigen::VectorXd centroid = positive_centroid(pos, labels, cfg.weight_positives);

    Eigen::VectorXd negative = Eigen::VectorXd::Zero(corpus.dim());
    if (cfg.hard_negatives) {
      std::vector<Eigen::Index> excluded = pos_rows;
      std::sort(excluded.begin(), excluded.end());
      const auto neg_rows = mine_hard_negatives(queries.row(row), corpus, excluded, cfg, qid);
      negative = negative_mean(corpus, neg_rows);
    }
    const Eigen::VectorXd q = queries.row(row).transpose().cast<double>();
    slots[qi] = ImportanceTarget{qid, importance_distribution(raw_scores(q, centroid, negative), cfg.tau)};
  });

  TargetSet out;
  for (std::size_t i = 0; i < n; ++i) {
    out.missing_documents += missing[i];
    if (slots[i]) {
      out.targets.push_back(std::move(*slots[i]));
    } else {
      ++out.skipped_queries;
    }
  }
  return out;
}

EmbeddingMatrix targets_to_matrix(std::span<const ImportanceTarget> targets) {
  if (targets.empty()) throw DataError("no targets to store");
  const auto dim = targets.front().probs.size();
  RowMatrixXf data(static_cast<Eigen::Index>(targets.size()), dim);
  std::vector<std::string> ids;
  ids.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].probs.size() != dim) throw DataError("targets have inconsistent dimensions");
    data.row(static_cast<Eigen::Index>(i)) = targets[i].probs.transpose().cast<float>();
    ids.push_back(targets[i].query_id);
  }
  return EmbeddingMatrix(std::move(ids), std::move(data));
}

std::vector<ImportanceTarget> targets_from_matrix(const EmbeddingMatrix& m) {
  std::vector<ImportanceTarget> out;
  out.reserve(static_cast<std::size_t>(m.count()));
  for (Eigen::Index r = 0; r < m.count(); ++r) {
    Eigen::VectorXd p = m.row(r).transpose().cast<double>();
    if ((p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-4) {
      throw DataError("target row '" + m.id(r) + "' is not a probability distribution");
    }
    out.push_back({m.id(r), std::move(p)});
  }
  return out;
}

}  // namespace dimsel
