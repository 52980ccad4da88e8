#pragma once

// Query-side dimension masks and the per-query scoring methods. Document
// vectors are never modified; a masked query keeps its unselected
// coordinates at zero and is not re-normalized.

#include "dimsel/embstore.hpp"
#include "dimsel/oracle.hpp"
#include "dimsel/predictor.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace dimsel {

struct DimMask {
  Eigen::Index dim = 0;
  std::vector<Eigen::Index> indices;  // sorted, unique

  Eigen::Index k() const { return static_cast<Eigen::Index>(indices.size()); }
  static DimMask full(Eigen::Index dim);
};

// All dimensions ordered by descending score, ties to the lower index.
std::vector<Eigen::Index> importance_order(const Eigen::Ref<const Eigen::VectorXd>& scores);

// The first k entries of an importance order, as a mask.
DimMask mask_from_order(std::span<const Eigen::Index> order, Eigen::Index dim, Eigen::Index k);

// Indices of the k largest scores (ties to the lower index).
DimMask topk_mask(const Eigen::Ref<const Eigen::VectorXd>& scores, Eigen::Index k);

// sum over j in mask of q_j * d_j, accumulated in double in index order.
double masked_score(QueryRow query, QueryRow doc, const DimMask& mask);

enum class Variant { kFull, kCutoff, kNorm, kDimePrf, kEclipsePrf, kLearned };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

struct ScoringMethod {
  Variant variant = Variant::kFull;
  Eigen::Index k = 0;  // 0 means all dimensions
  int prf_depth = 1;        // pseudo-positives taken from the first pass
  int prf_negatives = 10;   // Eclipse pseudo-negatives directly below them

  void validate(Eigen::Index dim) const;
  Eigen::Index budget(Eigen::Index dim) const { return k == 0 ? dim : k; }
};

struct ScoredDoc {
  Eigen::Index row;
  double score;
};
using Ranking = std::vector<ScoredDoc>;

// Exact scoring of every corpus row against a (possibly masked) query;
// returns the top `depth` rows (0 = all) by descending score, ties by doc id.
Ranking rank_corpus(QueryRow query, const EmbeddingMatrix& corpus, const DimMask& mask,
                    std::size_t depth);

// Same, but for an arbitrary double-precision query vector over the mask's
// indices (used for scaled-query checks).
Ranking rank_corpus(const Eigen::Ref<const Eigen::VectorXd>& query, const EmbeddingMatrix& corpus,
                    const DimMask& mask, std::size_t depth);

// Per-dimension importance a method assigns to a query, before top-k.
// Full and Cutoff have no query-dependent importance: Full returns a constant
// vector, Cutoff a strictly decreasing one so that top-k is the prefix.
Eigen::VectorXd method_importance(const ScoringMethod& method, QueryRow query,
                                  const EmbeddingMatrix& corpus, const Predictor* predictor);

// DIME-style importance q ⊙ mean(pseudo-positives), optionally minus the
// mean of pseudo-negatives (Eclipse).
Eigen::VectorXd feedback_importance(QueryRow query, const EmbeddingMatrix& corpus,
                                    std::span<const Eigen::Index> positives,
                                    std::span<const Eigen::Index> negatives);

Ranking score_query(const ScoringMethod& method, QueryRow query, const EmbeddingMatrix& corpus,
                    const Predictor* predictor = nullptr, std::size_t depth = 1000);

// score_query for every query row; output order follows the query rows.
std::vector<Ranking> score_queries(const ScoringMethod& method, const EmbeddingMatrix& queries,
                                   const EmbeddingMatrix& corpus, const Predictor* predictor,
                                   std::size_t depth, int threads = 1);

}  // namespace dimsel
