#include "dimsel/evalkit.hpp"

#include "dimsel/mathops.hpp"
#include "dimsel/oracle.hpp"
#include "dimsel/parallel.hpp"
#include "dimsel/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

namespace dimsel {

std::optional<double> ndcg_at(std::span<const std::string> ranked_docs,
                              const std::map<std::string, int>& judgments, int cutoff) {
  if (cutoff < 1) throw DataError("ndcg cutoff must be >= 1");
  std::vector<int> labels;
  for (const auto& entry : judgments) {
    if (entry.second > 0) labels.push_back(entry.second);
  }
  if (labels.empty()) return std::nullopt;
  std::sort(labels.begin(), labels.end(), std::greater<>());

  const auto depth = static_cast<std::size_t>(cutoff);
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(depth, labels.size()); ++i) {
    ideal += gain(labels[i]) / std::log2(static_cast<double>(i) + 2.0);
  }
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(depth, ranked_docs.size()); ++i) {
    auto it = judgments.find(ranked_docs[i]);
    if (it != judgments.end() && it->second > 0) {
      dcg += gain(it->second) / std::log2(static_cast<double>(i) + 2.0);
    }
  }
  return dcg / ideal;
}

Run make_run(const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus,
             std::span<const Ranking> rankings) {
  if (static_cast<Eigen::Index>(rankings.size()) != queries.count()) {
    throw DataError("make_run: one ranking per query row expected");
  }
  Run run;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    auto& list = run.results[queries.id(static_cast<Eigen::Index>(i))];
    list.reserve(rankings[i].size());
    for (const auto& hit : rankings[i]) list.emplace_back(corpus.id(hit.row), hit.score);
  }
  return run;
}

MetricSummary mean_ndcg(const Run& run, const Qrels& qrels, int cutoff) {
  static const std::map<std::string, int> kNoJudgments;
  MetricSummary s;
  double total = 0.0;
  for (const auto& [qid, hits] : run.results) {
    auto judged = qrels.judgments.find(qid);
    const auto& j = judged == qrels.judgments.end() ? kNoJudgments : judged->second;
    std::vector<std::string> docs;
    docs.reserve(hits.size());
    for (const auto& h : hits) docs.push_back(h.first);
    if (auto v = ndcg_at(docs, j, cutoff)) {
      total += *v;
      ++s.evaluated;
    } else {
      ++s.excluded;
    }
  }
  s.mean = s.evaluated ? total / static_cast<double>(s.evaluated) : 0.0;
  return s;
}

void write_trec_run(std::ostream& out, const Run& run, const std::string& tag) {
  char score[64];
  for (const auto& [qid, hits] : run.results) {
    for (std::size_t i = 0; i < hits.size(); ++i) {
      std::snprintf(score, sizeof score, "%.17g", hits[i].second);
      out << qid << " Q0 " << hits[i].first << ' ' << (i + 1) << ' ' << score << ' ' << tag << '\n';
    }
  }
}

Run parse_trec_run(std::istream& in) {
  Run run;
  std::map<std::string, std::vector<std::pair<long, std::pair<std::string, double>>>> staged;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string qid, q0, doc, tag;
    long rank = 0;
    double score = 0.0;
    if (!(fields >> qid)) continue;
    if (!(fields >> q0 >> doc >> rank >> score >> tag)) {
      throw DataError("run line " + std::to_string(line_no) + ": expected `qid Q0 docid rank score tag`");
    }
    staged[qid].push_back({rank, {doc, score}});
  }
  // Order by score descending, then by rank, matching trec_eval.
  for (auto& [qid, hits] : staged) {
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
      if (a.second.second != b.second.second) return a.second.second > b.second.second;
      return a.first < b.first;
    });
    auto& out = run.results[qid];
    for (auto& h : hits) out.push_back(std::move(h.second));
  }
  return run;
}

Eigen::Index retained_k(Eigen::Index dim, int percent) {
  // round_half_up(percent/100 * dim) in integer arithmetic.
  const Eigen::Index k = (2 * percent * dim + 100) / 200;
  return std::max<Eigen::Index>(1, k);
}

std::vector<Eigen::Index> retention_grid(Eigen::Index dim) {
  std::vector<Eigen::Index> grid;
  for (int pct = 2; pct <= 100; pct += 2) {
    const Eigen::Index k = retained_k(dim, pct);
    if (grid.empty() || grid.back() != k) grid.push_back(k);
  }
  return grid;
}

void summarize(SweepResult& r) {
  if (r.curve.empty()) throw DataError("sweep produced an empty curve");
  const CurvePoint* best = &r.curve.front();
  for (const auto& p : r.curve) {
    if (p.ndcg >= best->ndcg) best = &p;
  }
  r.peak = best->ndcg;
  r.peak_k = best->k;
  r.peak_fraction = static_cast<double>(best->k) / static_cast<double>(r.dim);
  r.k_30 = retained_k(r.dim, 30);
  auto at = std::find_if(r.curve.begin(), r.curve.end(), [&](const CurvePoint& p) { return p.k == r.k_30; });
  r.at_30 = at == r.curve.end() ? std::nan("") : at->ndcg;
}

namespace {

// Shared sweep loop. `order_for(row)` returns the importance order of a query
// row, or an empty vector when the query is k-independent (full scoring).
SweepResult run_sweep(std::string method_name, const EmbeddingMatrix& queries,
                      const EmbeddingMatrix& corpus, const Qrels& qrels,
                      std::vector<Eigen::Index> grid, int threads, int cutoff,
                      const std::function<std::optional<std::vector<Eigen::Index>>(Eigen::Index)>& order_for) {
  if (corpus.empty()) throw DataError("corpus is empty");
  if (queries.dim() != corpus.dim()) throw DataError("sweep: query/corpus dimension mismatch");
  const Eigen::Index dim = corpus.dim();
  if (grid.empty()) grid = retention_grid(dim);
  for (auto k : grid) {
    if (k < 1 || k > dim) throw DataError("sweep: grid value out of range");
  }

  const auto n = static_cast<std::size_t>(queries.count());
  std::vector<std::vector<double>> per_query(n);
  std::vector<char> included(n, 0);
  static const std::map<std::string, int> kNoJudgments;

  parallel_for(n, threads, [&](std::size_t qi) {
    const auto row = static_cast<Eigen::Index>(qi);
    auto judged = qrels.judgments.find(queries.id(row));
    if (judged == qrels.judgments.end() || !qrels.has_positive(queries.id(row))) return;
    auto order = order_for(row);
    if (!order) return;

    auto evaluate = [&](const DimMask& mask) {
      const Ranking ranking = rank_corpus(queries.row(row), corpus, mask, static_cast<std::size_t>(cutoff));
      std::vector<std::string> docs;
      docs.reserve(ranking.size());
      for (const auto& hit : ranking) docs.push_back(corpus.id(hit.row));
      return ndcg_at(docs, judged->second, cutoff).value_or(0.0);
    };

    std::vector<double> values(grid.size());
    if (order->empty()) {
      std::fill(values.begin(), values.end(), evaluate(DimMask::full(dim)));
    } else {
      for (std::size_t g = 0; g < grid.size(); ++g) values[g] = evaluate(mask_from_order(*order, dim, grid[g]));
    }
    per_query[qi] = std::move(values);
    included[qi] = 1;
  });

  SweepResult result;
  result.method = std::move(method_name);
  result.dim = dim;
  std::vector<double> totals(grid.size(), 0.0);
  for (std::size_t qi = 0; qi < n; ++qi) {
    if (!included[qi]) {
      ++result.excluded_queries;
      continue;
    }
    ++result.evaluated_queries;
    for (std::size_t g = 0; g < grid.size(); ++g) totals[g] += per_query[qi][g];
  }
  if (result.evaluated_queries == 0) throw DataError("sweep: no query has relevant documents");
  for (std::size_t g = 0; g < grid.size(); ++g) {
    result.curve.push_back({static_cast<double>(grid[g]) / static_cast<double>(dim), grid[g],
                            totals[g] / static_cast<double>(result.evaluated_queries)});
  }
  summarize(result);
  return result;
}

}  // namespace

SweepResult sweep(const ScoringMethod& method, const EmbeddingMatrix& queries,
                  const EmbeddingMatrix& corpus, const Qrels& qrels, const Predictor* predictor,
                  std::vector<Eigen::Index> grid, int threads, int cutoff) {
  method.validate(corpus.dim());
  if (method.variant == Variant::kLearned && predictor == nullptr) {
    throw DataError("learned scoring requires a predictor");
  }
  return run_sweep(std::string(to_string(method.variant)), queries, corpus, qrels, std::move(grid),
                   threads, cutoff, [&](Eigen::Index row) -> std::optional<std::vector<Eigen::Index>> {
                     if (method.variant == Variant::kFull) return std::vector<Eigen::Index>{};
                     return importance_order(method_importance(method, queries.row(row), corpus, predictor));
                   });
}

SweepResult sweep_importance(const std::map<std::string, Eigen::VectorXd>& importance,
                             const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus,
                             const Qrels& qrels, std::vector<Eigen::Index> grid, int threads,
                             int cutoff) {
  return run_sweep("importance", queries, corpus, qrels, std::move(grid), threads, cutoff,
                   [&](Eigen::Index row) -> std::optional<std::vector<Eigen::Index>> {
                     auto it = importance.find(queries.id(row));
                     if (it == importance.end()) return std::nullopt;
                     if (it->second.size() != corpus.dim()) throw DataError("importance dimension mismatch");
                     return importance_order(it->second);
                   });
}

std::string curve_csv(const SweepResult& r) {
  std::string out = "fraction,k,ndcg@10\n";
  char line[128];
  for (const auto& p : r.curve) {
    std::snprintf(line, sizeof line, "%.4f,%ld,%.17g\n", p.fraction, static_cast<long>(p.k), p.ndcg);
    out += line;
  }
  return out;
}

nlohmann::json summary_json(const SweepResult& r) {
  return {{"method", r.method},
          {"dim", r.dim},
          {"peak", {{"ndcg@10", r.peak}, {"k", r.peak_k}, {"fraction", r.peak_fraction}}},
          {"fixed_30", {{"ndcg@10", r.at_30}, {"k", r.k_30}, {"fraction", static_cast<double>(r.k_30) / static_cast<double>(r.dim)}}},
          {"full_dim", {{"ndcg@10", r.curve.back().ndcg}, {"k", r.curve.back().k}}},
          {"evaluated_queries", r.evaluated_queries},
          {"excluded_queries", r.excluded_queries}};
}

namespace {

std::vector<std::vector<Eigen::Index>> topk_sets(std::span<const Eigen::VectorXd> importance, Eigen::Index k) {
  std::vector<std::vector<Eigen::Index>> sets;
  sets.reserve(importance.size());
  for (const auto& v : importance) sets.push_back(topk_mask(v, k).indices);
  return sets;
}

}  // namespace

ConsistencyResult consistency_analysis(std::span<const Eigen::VectorXd> importance,
                                       const EmbeddingMatrix& queries, Eigen::Index k) {
  if (importance.size() < 2) throw DataError("consistency analysis needs at least 2 queries");
  if (static_cast<Eigen::Index>(importance.size()) != queries.count()) {
    throw DataError("consistency analysis: one importance vector per query row expected");
  }
  const auto sets = topk_sets(importance, k);
  const auto n = sets.size();
  std::vector<double> cosine, jac;
  cosine.reserve(n * (n - 1) / 2);
  jac.reserve(n * (n - 1) / 2);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = std::sqrt(dot_sequential(queries.row(static_cast<Eigen::Index>(i)),
                                        queries.row(static_cast<Eigen::Index>(i))));
  }
  double self = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    self += jaccard_sorted<Eigen::Index>(sets[i], sets[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dot = dot_sequential(queries.row(static_cast<Eigen::Index>(i)),
                                        queries.row(static_cast<Eigen::Index>(j)));
      cosine.push_back(dot / (norms[i] * norms[j]));
      jac.push_back(jaccard_sorted<Eigen::Index>(sets[i], sets[j]));
    }
  }
  const double r = pearson(cosine, jac);
  if (std::isnan(r)) throw DataError("degenerate correlation: a pair series has zero variance");
  return {r, cosine.size(), self / static_cast<double>(n)};
}

std::vector<Eigen::VectorXd> predict_importance(const Predictor& predictor, const EmbeddingMatrix& queries) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(queries.count()));
  for (Eigen::Index r = 0; r < queries.count(); ++r) out.push_back(forward(predictor, queries.row(r)));
  return out;
}

ConsistencyResult consistency_analysis(const Predictor& predictor, const EmbeddingMatrix& queries,
                                       Eigen::Index k) {
  return consistency_analysis(predict_importance(predictor, queries), queries, k);
}

double pairwise_jaccard(std::span<const Eigen::VectorXd> importance, Eigen::Index k,
                        std::size_t n_pairs, std::uint64_t seed) {
  if (importance.size() < 2) throw DataError("pairwise Jaccard needs at least 2 queries");
  if (n_pairs < 1) throw DataError("pairwise Jaccard needs at least one pair");
  const auto sets = topk_sets(importance, k);
  Rng rng(derive_seed(seed, "jaccard-pairs"));
  const std::uint64_t n = sets.size();
  double total = 0.0;
  for (std::size_t s = 0; s < n_pairs; ++s) {
    const auto i = rng.below(n);
    auto j = rng.below(n - 1);
    if (j >= i) ++j;
    total += jaccard_sorted<Eigen::Index>(sets[i], sets[j]);
  }
  return total / static_cast<double>(n_pairs);
}

}  // namespace dimsel
