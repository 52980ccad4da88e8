#include "dimsel/selection.hpp"

#include "dimsel/mathops.hpp"
#include "dimsel/parallel.hpp"

#include <algorithm>
#include <numeric>

namespace dimsel {

DimMask DimMask::full(Eigen::Index dim) {
  DimMask m{dim, std::vector<Eigen::Index>(static_cast<std::size_t>(dim))};
  std::iota(m.indices.begin(), m.indices.end(), Eigen::Index{0});
  return m;
}

std::vector<Eigen::Index> importance_order(const Eigen::Ref<const Eigen::VectorXd>& scores) {
  if (!scores.allFinite()) throw DataError("importance scores must be finite");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });
  return order;
}

DimMask mask_from_order(std::span<const Eigen::Index> order, Eigen::Index dim, Eigen::Index k) {
  if (k < 1 || k > dim || static_cast<Eigen::Index>(order.size()) != dim) {
    throw DataError("mask size k=" + std::to_string(k) + " out of range [1, " + std::to_string(dim) + "]");
  }
  DimMask m{dim, std::vector<Eigen::Index>(order.begin(), order.begin() + k)};
  std::sort(m.indices.begin(), m.indices.end());
  return m;
}

DimMask topk_mask(const Eigen::Ref<const Eigen::VectorXd>& scores, Eigen::Index k) {
  if (k < 1 || k > scores.size()) {
    throw DataError("mask size k=" + std::to_string(k) + " out of range [1, " +
                    std::to_string(scores.size()) + "]");
  }
  const auto order = importance_order(scores);
  return mask_from_order(order, scores.size(), k);
}

double masked_score(QueryRow query, QueryRow doc, const DimMask& mask) {
  if (query.size() != doc.size() || query.size() != mask.dim) {
    throw DataError("masked_score: dimension mismatch");
  }
  double acc = 0.0;
  for (auto j : mask.indices) acc += static_cast<double>(query(j)) * static_cast<double>(doc(j));
  return acc;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kCutoff: return "cutoff";
    case Variant::kNorm: return "norm";
    case Variant::kDimePrf: return "dime_prf";
    case Variant::kEclipsePrf: return "eclipse_prf";
    case Variant::kLearned: return "learned";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::kFull, Variant::kCutoff, Variant::kNorm, Variant::kDimePrf,
                 Variant::kEclipsePrf, Variant::kLearned}) {
    if (to_string(v) == name) return v;
  }
  throw DataError("unknown scoring method '" + std::string(name) + "'");
}

void ScoringMethod::validate(Eigen::Index dim) const {
  if (k < 0 || k > dim) {
    throw DataError("mask size k=" + std::to_string(k) + " out of range [1, " + std::to_string(dim) + "]");
  }
  if ((variant == Variant::kDimePrf || variant == Variant::kEclipsePrf) && prf_depth < 1) {
    throw DataError("PRF depth must be >= 1");
  }
  if (variant == Variant::kEclipsePrf && prf_negatives < 0) {
    throw DataError("PRF negative count must be >= 0");
  }
}

namespace {

Ranking rank_scores(std::vector<double> scores, const EmbeddingMatrix& corpus, std::size_t depth) {
  Ranking all(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) all[i] = {static_cast<Eigen::Index>(i), scores[i]};
  const std::size_t keep = depth == 0 ? all.size() : std::min(depth, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [&](const ScoredDoc& a, const ScoredDoc& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return corpus.id(a.row) < corpus.id(b.row);
                    });
  all.resize(keep);
  return all;
}

}  // namespace

Ranking rank_corpus(QueryRow query, const EmbeddingMatrix& corpus, const DimMask& mask,
                    std::size_t depth) {
  if (corpus.empty()) throw DataError("corpus is empty");
  if (query.size() != corpus.dim() || mask.dim != corpus.dim()) {
    throw DataError("rank_corpus: dimension mismatch");
  }
  std::vector<double> scores(static_cast<std::size_t>(corpus.count()));
  for (Eigen::Index r = 0; r < corpus.count(); ++r) {
    scores[static_cast<std::size_t>(r)] = masked_score(query, corpus.row(r), mask);
  }
  return rank_scores(std::move(scores), corpus, depth);
}

Ranking rank_corpus(const Eigen::Ref<const Eigen::VectorXd>& query, const EmbeddingMatrix& corpus,
                    const DimMask& mask, std::size_t depth) {
  if (corpus.empty()) throw DataError("corpus is empty");
  if (query.size() != corpus.dim() || mask.dim != corpus.dim()) {
    throw DataError("rank_corpus: dimension mismatch");
  }
  std::vector<double> scores(static_cast<std::size_t>(corpus.count()));
  for (Eigen::Index r = 0; r < corpus.count(); ++r) {
    const auto doc = corpus.row(r);
    double acc = 0.0;
    for (auto j : mask.indices) acc += query(j) * static_cast<double>(doc(j));
    scores[static_cast<std::size_t>(r)] = acc;
  }
  return rank_scores(std::move(scores), corpus, depth);
}

Eigen::VectorXd feedback_importance(QueryRow query, const EmbeddingMatrix& corpus,
                                    std::span<const Eigen::Index> positives,
                                    std::span<const Eigen::Index> negatives) {
  Eigen::VectorXd contrast = Eigen::VectorXd::Zero(corpus.dim());
  for (auto r : positives) contrast += corpus.row(r).transpose().cast<double>();
  if (!positives.empty()) contrast /= static_cast<double>(positives.size());
  if (!negatives.empty()) {
    Eigen::VectorXd neg = Eigen::VectorXd::Zero(corpus.dim());
    for (auto r : negatives) neg += corpus.row(r).transpose().cast<double>();
    contrast -= neg / static_cast<double>(negatives.size());
  }
  return query.transpose().cast<double>().cwiseProduct(contrast);
}

Eigen::VectorXd method_importance(const ScoringMethod& method, QueryRow query,
                                  const EmbeddingMatrix& corpus, const Predictor* predictor) {
  const Eigen::Index dim = corpus.dim();
  if (query.size() != dim) throw DataError("query/corpus dimension mismatch");
  switch (method.variant) {
    case Variant::kFull:
      return Eigen::VectorXd::Zero(dim);
    case Variant::kCutoff:
      return -Eigen::VectorXd::LinSpaced(dim, 0.0, static_cast<double>(dim - 1));
    case Variant::kNorm:
      return query.transpose().cast<double>().cwiseAbs();
    case Variant::kDimePrf:
    case Variant::kEclipsePrf: {
      const auto depth = static_cast<std::size_t>(method.prf_depth);
      const std::size_t negs =
          method.variant == Variant::kEclipsePrf ? static_cast<std::size_t>(method.prf_negatives) : 0;
      const Ranking first = rank_corpus(query, corpus, DimMask::full(dim), depth + negs);
      std::vector<Eigen::Index> pos, neg;
      for (std::size_t i = 0; i < first.size(); ++i) (i < depth ? pos : neg).push_back(first[i].row);
      return feedback_importance(query, corpus, pos, neg);
    }
    case Variant::kLearned:
      if (predictor == nullptr) throw DataError("learned scoring requires a predictor");
      if (predictor->dim() != dim) throw DataError("predictor dimension does not match corpus");
      return forward(*predictor, query);
  }
  throw DataError("unhandled scoring method");
}

Ranking score_query(const ScoringMethod& method, QueryRow query, const EmbeddingMatrix& corpus,
                    const Predictor* predictor, std::size_t depth) {
  if (corpus.empty()) throw DataError("corpus is empty");
  method.validate(corpus.dim());
  const Eigen::Index dim = corpus.dim();
  if (method.variant == Variant::kFull) return rank_corpus(query, corpus, DimMask::full(dim), depth);
  const Eigen::VectorXd importance = method_importance(method, query, corpus, predictor);
  return rank_corpus(query, corpus, topk_mask(importance, method.budget(dim)), depth);
}

std::vector<Ranking> score_queries(const ScoringMethod& method, const EmbeddingMatrix& queries,
                                   const EmbeddingMatrix& corpus, const Predictor* predictor,
                                   std::size_t depth, int threads) {
  std::vector<Ranking> out(static_cast<std::size_t>(queries.count()));
  parallel_for(out.size(), threads, [&](std::size_t i) {
    out[i] = score_query(method, queries.row(static_cast<Eigen::Index>(i)), corpus, predictor, depth);
  });
  return out;
}

}  // namespace dimsel
