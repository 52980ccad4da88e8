#pragma once

// Label-derived dimension importance targets.
//
// For a query with relevant set D+ and graded labels y, positives are pooled
// into a gain-weighted centroid p, hard negatives mined from the top of the
// unmasked ranking are averaged into n, and each dimension is scored by
// r_j = q_j * (p_j - n_j). The target is softmax(r / tau).

#include "dimsel/embstore.hpp"
#include "dimsel/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dimsel {

struct OracleConfig {
  double tau = 0.01;
  int pool_size = 1000;  // K
  int sample_size = 64;  // M
  bool weight_positives = true;
  bool hard_negatives = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ImportanceTarget {
  std::string query_id;
  Eigen::VectorXd probs;
};

using QueryRow = Eigen::Ref<const Eigen::RowVectorXf>;

// 2^y - 1.
double gain(int y);

// Gain-weighted convex combination of `rows` (weighted) or their plain mean.
// Throws when there are no rows, or when weighting is on and all gains are 0.
Eigen::VectorXd positive_centroid(const Eigen::Ref<const RowMatrixXf>& rows,
                                  std::span<const int> labels, bool weighted);

// Ranks every corpus row not in `excluded` (sorted row indices) by dot
// product with the query, keeps the top min(K, available), and samples
// min(M, pool) of them without replacement from a stream seeded by
// (cfg.seed, query_id). Returned rows are sorted ascending.
std::vector<Eigen::Index> mine_hard_negatives(QueryRow query, const EmbeddingMatrix& corpus,
                                              std::span<const Eigen::Index> excluded,
                                              const OracleConfig& cfg, std::string_view query_id);

Eigen::VectorXd negative_mean(const EmbeddingMatrix& corpus, std::span<const Eigen::Index> rows);

// Element-wise q_j * (p_j - n_j).
Eigen::VectorXd raw_scores(const Eigen::Ref<const Eigen::VectorXd>& query,
                           const Eigen::Ref<const Eigen::VectorXd>& centroid,
                           const Eigen::Ref<const Eigen::VectorXd>& negative);

// softmax(r / tau), max-subtracted.
Eigen::VectorXd importance_distribution(const Eigen::Ref<const Eigen::VectorXd>& raw, double tau);

struct TargetSet {
  std::vector<ImportanceTarget> targets;
  std::size_t skipped_queries = 0;      // no relevant document in the corpus
  std::size_t missing_documents = 0;    // judged positives absent from the corpus
};

// One target per query row with at least one positive present in the corpus,
// in query-row order. Results do not depend on `threads`.
TargetSet build_targets(const EmbeddingMatrix& corpus, const EmbeddingMatrix& queries,
                        const Qrels& qrels, const OracleConfig& cfg, int threads = 1);

// Targets stored as an EMB1 matrix keyed by query id (probabilities as rows).
EmbeddingMatrix targets_to_matrix(std::span<const ImportanceTarget> targets);
std::vector<ImportanceTarget> targets_from_matrix(const EmbeddingMatrix& m);

}  // namespace dimsel
