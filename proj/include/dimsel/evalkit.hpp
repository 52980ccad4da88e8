#pragma once

// Ranking metrics, retained-dimension sweeps and dimension-selection
// consistency analyses.

#include "dimsel/embstore.hpp"
#include "dimsel/predictor.hpp"
#include "dimsel/selection.hpp"

#include <json.hpp>

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dimsel {

// NDCG@cutoff with gains 2^y - 1 and discount log2(rank + 1). Returns nullopt
// when the query has no document with y > 0 (excluded from means).
std::optional<double> ndcg_at(std::span<const std::string> ranked_docs,
                              const std::map<std::string, int>& judgments, int cutoff);

// A TREC-style run: query id -> ranked (doc id, score), best first.
struct Run {
  std::map<std::string, std::vector<std::pair<std::string, double>>> results;
};

Run make_run(const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus,
             std::span<const Ranking> rankings);

struct MetricSummary {
  double mean = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // queries without relevant documents
};

MetricSummary mean_ndcg(const Run& run, const Qrels& qrels, int cutoff = 10);

// `qid Q0 docid rank score tag` lines.
void write_trec_run(std::ostream& out, const Run& run, const std::string& tag);
Run parse_trec_run(std::istream& in);

// k = max(1, round_half_up(f * D)) for f = 0.02, 0.04, ..., 1.00, deduplicated.
std::vector<Eigen::Index> retention_grid(Eigen::Index dim);
// The grid point for a retention fraction of `percent`/100.
Eigen::Index retained_k(Eigen::Index dim, int percent);

struct CurvePoint {
  double fraction = 0.0;
  Eigen::Index k = 0;
  double ndcg = 0.0;
};

struct SweepResult {
  std::string method;
  Eigen::Index dim = 0;
  std::vector<CurvePoint> curve;
  double peak = 0.0;
  Eigen::Index peak_k = 0;
  double peak_fraction = 0.0;
  double at_30 = 0.0;
  Eigen::Index k_30 = 0;
  std::size_t evaluated_queries = 0;
  std::size_t excluded_queries = 0;
};

// Fills peak (ties resolved toward the larger k) and the 30% row from `curve`.
void summarize(SweepResult& result);

// Evaluates `method` at every k of `grid` (retention_grid when empty) over the
// query rows. Per-query importance is computed once; each k re-scores the
// whole corpus exactly.
SweepResult sweep(const ScoringMethod& method, const EmbeddingMatrix& queries,
                  const EmbeddingMatrix& corpus, const Qrels& qrels, const Predictor* predictor,
                  std::vector<Eigen::Index> grid = {}, int threads = 1, int cutoff = 10);

// Sweep over fixed, externally supplied per-query importance vectors (e.g.
// oracle targets), keyed by query id. Queries without a vector are skipped.
SweepResult sweep_importance(const std::map<std::string, Eigen::VectorXd>& importance,
                             const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus,
                             const Qrels& qrels, std::vector<Eigen::Index> grid = {},
                             int threads = 1, int cutoff = 10);

std::string curve_csv(const SweepResult& result);
nlohmann::json summary_json(const SweepResult& result);

struct ConsistencyResult {
  double pearson = 0.0;
  std::size_t pairs = 0;
  double self_jaccard = 1.0;  // mean J(q, q), a sanity value
};

// Pearson correlation, over all unordered query pairs, between the cosine of
// the query embeddings and the Jaccard similarity of their top-k sets.
// Throws "degenerate correlation" when either series is constant.
ConsistencyResult consistency_analysis(std::span<const Eigen::VectorXd> importance,
                                       const EmbeddingMatrix& queries, Eigen::Index k);
ConsistencyResult consistency_analysis(const Predictor& predictor, const EmbeddingMatrix& queries,
                                       Eigen::Index k);

// Mean Jaccard of top-k sets over `n_pairs` seeded samples of distinct pairs.
double pairwise_jaccard(std::span<const Eigen::VectorXd> importance, Eigen::Index k,
                        std::size_t n_pairs, std::uint64_t seed);

// Predicted log-importance for each query row.
std::vector<Eigen::VectorXd> predict_importance(const Predictor& predictor,
                                                const EmbeddingMatrix& queries);

}  // namespace dimsel
