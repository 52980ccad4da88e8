#include "dimsel/adapter.hpp"

#include "dimsel/evalkit.hpp"
#include "dimsel/synthgen.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/QR>

namespace dimsel {
namespace {

void expect_same_rankings(const std::vector<Ranking>& a, const std::vector<Ranking>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].size(), b[i].size());
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      EXPECT_EQ(a[i][j].row, b[i][j].row);
      EXPECT_EQ(a[i][j].score, b[i][j].score);
    }
  }
}

TEST(Apply, IdentityIsExact) {
  const auto m = testing::random_unit(20, 9, 1);
  const auto out = apply(Adapter::identity(9), m);
  EXPECT_EQ(out.data(), m.data());
  EXPECT_EQ(out.ids(), m.ids());
}

TEST(Apply, ScaledIdentityRenormalizes) {
  const auto m = testing::random_unit(20, 9, 2);
  Adapter twice{2.0 * RowMatrixXd::Identity(9, 9)};
  EXPECT_EQ(apply(twice, m).data(), m.data());
}

TEST(Apply, PermutationPermutesCoordinates) {
  const auto m = testing::random_unit(10, 4, 3);
  Adapter perm{RowMatrixXd::Zero(4, 4)};
  // Output coordinate i takes input coordinate (i + 1) % 4.
  for (Eigen::Index i = 0; i < 4; ++i) perm.matrix(i, (i + 1) % 4) = 1.0;
  const auto out = apply(perm, m);
  for (Eigen::Index r = 0; r < 10; ++r) {
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(out.row(r)(i), m.row(r)((i + 1) % 4));
  }
}

TEST(Apply, RotationPreservesDotProducts) {
  const auto m = testing::random_unit(15, 12, 4);
  Rng rng(5);
  RowMatrixXd g(12, 12);
  for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = rng.normal();
  const RowMatrixXd q = Eigen::HouseholderQR<RowMatrixXd>(g).householderQ();
  const auto out = apply(Adapter{q}, m);
  for (Eigen::Index r = 0; r < 15; ++r) {
    EXPECT_NEAR(out.row(r).cast<double>().norm(), 1.0, 1e-4);
    for (Eigen::Index s = 0; s < 15; ++s) {
      EXPECT_NEAR(out.row(r).cast<double>().dot(out.row(s).cast<double>()),
                  m.row(r).cast<double>().dot(m.row(s).cast<double>()), 1e-5);
    }
  }
}

TEST(Apply, DimensionMismatch) {
  EXPECT_THROW(apply(Adapter::identity(3), testing::random_unit(2, 4, 1)), DataError);
}

TEST(ContrastiveLoss, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const Eigen::Index d = 5, n = 4;
  RowMatrixXd a = RowMatrixXd::Identity(d, d);
  for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] += 0.2 * rng.normal();
  RowMatrixXd q(n, d), p(n, d);
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    q.data()[k] = rng.normal();
    p.data()[k] = rng.normal();
  }
  RowMatrixXd grad;
  contrastive_loss(a, q, p, 0.5, &grad);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    RowMatrixXd plus = a, minus = a;
    plus.data()[k] += h;
    minus.data()[k] -= h;
    const double numeric = (contrastive_loss(plus, q, p, 0.5) - contrastive_loss(minus, q, p, 0.5)) / (2 * h);
    EXPECT_NEAR(grad.data()[k], numeric, 1e-6 + 1e-4 * std::abs(numeric));
  }
}

TEST(ContrastiveLoss, PerfectSeparationIsSmall) {
  const RowMatrixXd e = RowMatrixXd::Identity(3, 3);
  const double loss = contrastive_loss(e, e, e, 0.05);
  EXPECT_NEAR(loss, std::log(1.0 + 2.0 * std::exp(-20.0)), 1e-12);
}

struct Instance {
  SynthData data;
  TrainConfig cfg;
};

Instance small_instance() {
  SynthConfig sc;
  sc.dim = 32;
  sc.n_clusters = 4;
  sc.planted_size = 6;
  sc.queries_per_cluster = 40;
  sc.test_queries_per_cluster = 10;
  sc.n_distractors = 200;
  sc.noise_scale = 0.15;
  sc.docs_per_query = 3;
  sc.query_jitter = 0.5;
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.lr = 5e-3;
  cfg.batch_size = 32;
  return {generate(sc), cfg};
}

TEST(TrainAdapter, ZeroEpochsIsIdentity) {
  auto inst = small_instance();
  inst.cfg.epochs = 0;
  const auto a = train_adapter(inst.data.train_queries, inst.data.corpus, inst.data.qrels, inst.cfg);
  EXPECT_EQ(a.matrix, RowMatrixXd::Identity(32, 32));
}

TEST(TrainAdapter, DeterministicAndNotWorseThanBaseline) {
  auto inst = small_instance();
  AdapterTrainReport rep;
  const auto a = train_adapter(inst.data.train_queries, inst.data.corpus, inst.data.qrels, inst.cfg, 0.05, &rep);
  const auto b = train_adapter(inst.data.train_queries, inst.data.corpus, inst.data.qrels, inst.cfg);
  EXPECT_EQ(a.matrix, b.matrix);
  ASSERT_EQ(rep.val_loss.size(), 21u);
  EXPECT_LE(rep.val_loss[static_cast<std::size_t>(rep.best_epoch)], rep.val_loss[0]);

  const auto& test = inst.data.test_queries;
  const auto& corpus = inst.data.corpus;
  const ScoringMethod full{Variant::kFull};
  const auto base = compose(Adapter::identity(32), full).run(test, corpus, 100);
  const auto adapted = compose(a, full).run(test, corpus, 100);
  const double base_ndcg = mean_ndcg(make_run(test, corpus, base), inst.data.qrels).mean;
  const double adapted_ndcg = mean_ndcg(make_run(test, corpus, adapted), inst.data.qrels).mean;
  EXPECT_GE(adapted_ndcg, base_ndcg);
}

TEST(Compose, IdentityReproducesEveryMethod) {
  const auto corpus = testing::random_unit(50, 10, 7);
  const auto queries = testing::random_unit(8, 10, 8);
  const auto predictor = Predictor::random_init(10, 9);
  for (auto v : {Variant::kFull, Variant::kCutoff, Variant::kNorm, Variant::kDimePrf, Variant::kEclipsePrf,
                 Variant::kLearned}) {
    const ScoringMethod method{v, 4};
    const auto direct = score_queries(method, queries, corpus, &predictor, 20);
    expect_same_rankings(compose(Adapter::identity(10), method, &predictor).run(queries, corpus, 20), direct);
  }
}

TEST(Compose, FullBudgetLearnedEqualsAdapterOnly) {
  const auto corpus = testing::random_unit(40, 6, 10);
  const auto queries = testing::random_unit(5, 6, 11);
  Rng rng(12);
  Adapter a = Adapter::identity(6);
  for (Eigen::Index k = 0; k < a.matrix.size(); ++k) a.matrix.data()[k] += 0.3 * rng.normal();
  const auto predictor = Predictor::random_init(6, 13);
  expect_same_rankings(compose(a, {Variant::kLearned, 6}, &predictor).run(queries, corpus, 40),
                       compose(a, {Variant::kFull}).run(queries, corpus, 40));
}

TEST(Compose, AdaptsBeforeMasking) {
  const auto corpus = testing::random_unit(40, 6, 14);
  const auto queries = testing::random_unit(5, 6, 15);
  Rng rng(16);
  Adapter a = Adapter::identity(6);
  for (Eigen::Index k = 0; k < a.matrix.size(); ++k) a.matrix.data()[k] += 0.5 * rng.normal();
  const ScoringMethod norm{Variant::kNorm, 2};
  const auto pipeline = compose(a, norm).run(queries, corpus, 40);
  expect_same_rankings(pipeline, score_queries(norm, apply(a, queries), apply(a, corpus), nullptr, 40));
}

TEST(AdapterFile, RoundTripAndErrors) {
  Rng rng(17);
  Adapter a = Adapter::identity(5);
  for (Eigen::Index k = 0; k < a.matrix.size(); ++k) a.matrix.data()[k] = static_cast<float>(rng.normal());
  a.metadata = {{"note", "x"}};
  const auto dir = testing::scratch_dir("adapter");
  save_adapter(a, dir / "a.adpt");
  const auto b = load_adapter(dir / "a.adpt", 5);
  EXPECT_EQ(b.matrix, a.matrix);
  EXPECT_EQ(b.metadata, a.metadata);
  EXPECT_THROW(load_adapter(dir / "a.adpt", 6), DataError);
  const auto bytes = testing::slurp(dir / "a.adpt");
  testing::write_text(dir / "short.adpt", bytes.substr(0, 20));
  EXPECT_THROW(load_adapter(dir / "short.adpt"), DataError);
}

}  // namespace
}  // namespace dimsel
