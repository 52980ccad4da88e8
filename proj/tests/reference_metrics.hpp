#pragma once

// Test-side references for ranking metrics and the consistency analysis.

#include "dimsel/embstore.hpp"
#include "dimsel/random.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace dimsel::reference {

// NDCG@cutoff where the ideal DCG is found by trying every ordering of the
// positively judged documents.
inline double brute_force_ndcg(const std::vector<std::string>& ranked,
                               const std::map<std::string, int>& judgments, int cutoff) {
  auto dcg = [cutoff](const std::vector<int>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size() && i < static_cast<std::size_t>(cutoff); ++i) {
      total += (std::pow(2.0, labels[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    return total;
  };
  std::vector<int> got;
  for (const auto& doc : ranked) {
    auto it = judgments.find(doc);
    got.push_back(it == judgments.end() ? 0 : it->second);
  }
  std::vector<int> relevant;
  for (const auto& [doc, y] : judgments) {
    if (y > 0) relevant.push_back(y);
  }
  std::sort(relevant.begin(), relevant.end());
  double ideal = 0.0;
  do {
    ideal = std::max(ideal, dcg(relevant));
  } while (std::next_permutation(relevant.begin(), relevant.end()));
  return dcg(got) / ideal;
}

struct JaccardConstruction {
  std::vector<Eigen::VectorXd> importance;
  EmbeddingMatrix queries;
};

// Random top-k importance vectors over `dim` coordinates, plus query
// embeddings whose Gram matrix is the Jaccard matrix of those top-k sets (the
// set-overlap kernel is positive semi-definite, so a factorization exists).
// Pairwise cosine then equals pairwise Jaccard up to float rounding.
inline JaccardConstruction jaccard_gram_instance(Eigen::Index n, Eigen::Index dim, Eigen::Index k,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  JaccardConstruction out;
  std::vector<std::vector<Eigen::Index>> sets;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Eigen::Index> dims(static_cast<std::size_t>(dim));
    for (Eigen::Index j = 0; j < dim; ++j) dims[static_cast<std::size_t>(j)] = j;
    shuffle(dims, rng);
    dims.resize(static_cast<std::size_t>(k));
    std::sort(dims.begin(), dims.end());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    for (std::size_t r = 0; r < dims.size(); ++r) v(dims[r]) = 1.0 + static_cast<double>(r);
    out.importance.push_back(v);
    sets.push_back(dims);
  }
  Eigen::MatrixXd gram(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      std::vector<Eigen::Index> common;
      std::set_intersection(sets[static_cast<std::size_t>(i)].begin(), sets[static_cast<std::size_t>(i)].end(),
                            sets[static_cast<std::size_t>(j)].begin(), sets[static_cast<std::size_t>(j)].end(),
                            std::back_inserter(common));
      gram(i, j) = static_cast<double>(common.size()) / static_cast<double>(2 * k - static_cast<Eigen::Index>(common.size()));
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd factor = eig.eigenvectors() * root.asDiagonal();
  RowMatrixXf rows = factor.cast<float>();
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < n; ++i) ids.push_back("q" + std::to_string(i));
  out.queries = EmbeddingMatrix(std::move(ids), std::move(rows));
  return out;
}

}  // namespace dimsel::reference
