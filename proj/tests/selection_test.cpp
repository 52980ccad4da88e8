#include "dimsel/selection.hpp"

#include "dimsel/mathops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>

namespace dimsel {
namespace {

using testing::make_matrix;

std::vector<std::string> ids_of(const Ranking& r, const EmbeddingMatrix& corpus) {
  std::vector<std::string> out;
  for (const auto& d : r) out.push_back(corpus.id(d.row));
  return out;
}

TEST(TopkMask, Examples) {
  EXPECT_EQ(topk_mask(Eigen::Vector3d(0.1, 0.5, 0.4), 2).indices, (std::vector<Eigen::Index>{1, 2}));
  EXPECT_EQ(topk_mask(Eigen::Vector3d(0.1, 0.5, 0.4), 3).indices, (std::vector<Eigen::Index>{0, 1, 2}));
  EXPECT_EQ(topk_mask(Eigen::Vector3d(0.3, 0.3, 0.1), 1).indices, (std::vector<Eigen::Index>{0}));
  EXPECT_THROW(topk_mask(Eigen::Vector3d(0.3, 0.3, 0.1), 0), DataError);
  EXPECT_THROW(topk_mask(Eigen::Vector3d(0.3, 0.3, 0.1), 4), DataError);
}

TEST(MaskedScore, Examples) {
  auto m = make_matrix({{0.6f, 0.8f}, {1, 0}, {0.8f, 0.6f}});
  EXPECT_EQ(masked_score(m.row(0), m.row(1), DimMask{2, {1}}), 0.0);
  EXPECT_NEAR(masked_score(m.row(0), m.row(2), DimMask{2, {0}}), 0.48, 1e-7);
}

TEST(MaskedScore, FullMaskIsExactDotProduct) {
  auto m = testing::random_unit(50, 33, 2);
  const auto mask = DimMask::full(33);
  for (Eigen::Index i = 1; i < 50; ++i) {
    EXPECT_EQ(masked_score(m.row(0), m.row(i), mask), dot_sequential(m.row(0), m.row(i)));
  }
}

TEST(ScoreQuery, FullMatchesHandComputedOrder) {
  auto corpus = make_matrix({{1, 0, 0}, {0.6f, 0.8f, 0}, {0, 0.6f, 0.8f}}, {"a", "b", "c"});
  auto q = make_matrix({{0, 0.8f, 0.6f}});
  // a: 0, b: 0.64, c: 0.96
  const auto r = score_query({Variant::kFull}, q.row(0), corpus);
  EXPECT_EQ(ids_of(r, corpus), (std::vector<std::string>{"c", "b", "a"}));
  EXPECT_NEAR(r[0].score, 0.96, 1e-7);
}

TEST(ScoreQuery, TiesBreakByDocId) {
  auto corpus = make_matrix({{1, 0}, {1, 0}, {0, 1}}, {"z", "m", "a"});
  auto q = make_matrix({{1, 0}});
  EXPECT_EQ(ids_of(score_query({Variant::kFull}, q.row(0), corpus), corpus),
            (std::vector<std::string>{"m", "z", "a"}));
}

TEST(ScoreQuery, DepthTruncates) {
  auto corpus = testing::random_unit(30, 8, 3);
  auto q = testing::random_unit(1, 8, 4);
  EXPECT_EQ(score_query({Variant::kFull}, q.row(0), corpus, nullptr, 5).size(), 5u);
  EXPECT_EQ(score_query({Variant::kFull}, q.row(0), corpus, nullptr, 0).size(), 30u);
}

TEST(ScoreQuery, EveryVariantAtFullBudgetMatchesFull) {
  auto corpus = testing::random_unit(40, 12, 5);
  auto queries = testing::random_unit(10, 12, 6);
  const auto predictor = Predictor::random_init(12, 7);
  for (Eigen::Index r = 0; r < queries.count(); ++r) {
    const auto full = score_query({Variant::kFull}, queries.row(r), corpus, nullptr, 0);
    for (auto v : {Variant::kCutoff, Variant::kNorm, Variant::kDimePrf, Variant::kEclipsePrf, Variant::kLearned}) {
      ScoringMethod method{v, 12};
      const auto got = score_query(method, queries.row(r), corpus, &predictor, 0);
      ASSERT_EQ(got.size(), full.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].row, full[i].row) << to_string(v);
        EXPECT_EQ(got[i].score, full[i].score) << to_string(v);
      }
    }
  }
}

TEST(ScoreQuery, CutoffKeepsPrefix) {
  auto corpus = testing::random_unit(5, 6, 8);
  auto q = testing::random_unit(1, 6, 9);
  const auto imp = method_importance({Variant::kCutoff, 3}, q.row(0), corpus, nullptr);
  EXPECT_EQ(topk_mask(imp, 3).indices, (std::vector<Eigen::Index>{0, 1, 2}));
}

TEST(ScoreQuery, NormPicksLargestMagnitudes) {
  auto corpus = testing::random_unit(5, 4, 8);
  auto q = make_matrix({{0.1f, -0.9f, 0.3f, 0.2f}});
  const auto imp = method_importance({Variant::kNorm, 2}, q.row(0), corpus, nullptr);
  EXPECT_EQ(topk_mask(imp, 2).indices, (std::vector<Eigen::Index>{1, 2}));
}

TEST(ScoreQuery, DimeWithTrueSingleRelevantMatchesOracleRawScores) {
  auto corpus = testing::random_unit(20, 8, 10);
  auto q = testing::random_unit(1, 8, 11);
  const auto first = score_query({Variant::kFull}, q.row(0), corpus, nullptr, 1);
  const std::vector<Eigen::Index> pos = {first[0].row};
  const auto dime = method_importance({Variant::kDimePrf, 4}, q.row(0), corpus, nullptr);
  const Eigen::VectorXd qd = q.row(0).transpose().cast<double>();
  RowMatrixXf rows = corpus.data().row(pos[0]);
  const std::vector<int> label = {1};
  const auto raw = raw_scores(qd, positive_centroid(rows, label, true), Eigen::VectorXd::Zero(8));
  EXPECT_EQ(dime, raw);
  EXPECT_EQ(feedback_importance(q.row(0), corpus, pos, {}), raw);
}

TEST(ScoreQuery, EclipseSubtractsPseudoNegatives) {
  auto corpus = testing::random_unit(30, 8, 12);
  auto q = testing::random_unit(1, 8, 13);
  ScoringMethod method{Variant::kEclipsePrf, 4, 2, 3};
  const auto first = score_query({Variant::kFull}, q.row(0), corpus, nullptr, 5);
  std::vector<Eigen::Index> pos = {first[0].row, first[1].row};
  std::vector<Eigen::Index> neg = {first[2].row, first[3].row, first[4].row};
  Eigen::VectorXd p = Eigen::VectorXd::Zero(8), n = Eigen::VectorXd::Zero(8);
  for (auto r : pos) p += corpus.row(r).transpose().cast<double>() / 2.0;
  for (auto r : neg) n += corpus.row(r).transpose().cast<double>() / 3.0;
  const Eigen::VectorXd expected = q.row(0).transpose().cast<double>().cwiseProduct(p - n);
  EXPECT_TRUE(method_importance(method, q.row(0), corpus, nullptr).isApprox(expected, 1e-12));
}

TEST(ScoreQuery, ScalingMaskedQueryPreservesRanking) {
  auto corpus = testing::random_unit(60, 10, 14);
  auto queries = testing::random_unit(20, 10, 15);
  Rng rng(16);
  for (Eigen::Index r = 0; r < queries.count(); ++r) {
    const auto k = static_cast<Eigen::Index>(1 + rng.below(10));
    Eigen::VectorXd noise(10);
    for (Eigen::Index j = 0; j < 10; ++j) noise(j) = rng.uniform();
    const auto mask = topk_mask(noise, k);
    // Powers of two scale every product exactly.
    const double c = std::ldexp(1.0, static_cast<int>(rng.below(20)) - 10);
    const Eigen::VectorXd q = queries.row(r).transpose().cast<double>();
    const auto base = rank_corpus(q, corpus, mask, 0);
    const auto scaled = rank_corpus(Eigen::VectorXd(c * q), corpus, mask, 0);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(base[i].row, scaled[i].row);
  }
}

TEST(ScoreQuery, ThreadCountDoesNotChangeResults) {
  auto corpus = testing::random_unit(80, 16, 17);
  auto queries = testing::random_unit(13, 16, 18);
  ScoringMethod method{Variant::kEclipsePrf, 5};
  const auto a = score_queries(method, queries, corpus, nullptr, 10, 1);
  const auto b = score_queries(method, queries, corpus, nullptr, 10, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      EXPECT_EQ(a[i][j].row, b[i][j].row);
      EXPECT_EQ(a[i][j].score, b[i][j].score);
    }
  }
}

TEST(ScoringMethod, ValidationAndNames) {
  EXPECT_THROW((ScoringMethod{Variant::kNorm, 9}.validate(8)), DataError);
  EXPECT_THROW((ScoringMethod{Variant::kNorm, -1}.validate(8)), DataError);
  EXPECT_NO_THROW((ScoringMethod{Variant::kNorm, 8}.validate(8)));
  auto corpus = testing::random_unit(3, 4, 1);
  EXPECT_THROW(score_query({Variant::kLearned, 2}, corpus.row(0), corpus, nullptr), DataError);
  for (auto v : {Variant::kFull, Variant::kCutoff, Variant::kNorm, Variant::kDimePrf, Variant::kEclipsePrf,
                 Variant::kLearned}) {
    EXPECT_EQ(parse_variant(to_string(v)), v);
  }
  EXPECT_THROW(parse_variant("bogus"), DataError);
}

}  // namespace
}  // namespace dimsel
