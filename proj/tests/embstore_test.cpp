#include "dimsel/embstore.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace dimsel {
namespace {

using testing::make_matrix;
using Kind = EmbeddingError::Kind;

template <typename Fn>
Kind error_kind(Fn&& fn) {
  try {
    fn();
  } catch (const EmbeddingError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected EmbeddingError";
  return Kind::kIo;
}

TEST(EmbStore, SaveLoadRoundTrip) {
  const auto dir = testing::scratch_dir("emb_roundtrip");
  auto m = make_matrix({{1, 0, 0, 0}, {0, 2, 0, 0}}, {"a", "b"});
  save_embeddings(m, dir / "m.emb");
  auto loaded = load_embeddings(dir / "m.emb");
  EXPECT_EQ(loaded.dim(), 4);
  EXPECT_EQ(loaded.count(), 2);
  EXPECT_EQ(loaded.ids(), m.ids());
  EXPECT_EQ(loaded.data(), m.data());
  EXPECT_EQ(loaded.index_of("b"), 1);
  // Not normalized on load.
  EXPECT_FLOAT_EQ(loaded.data()(1, 1), 2.0f);
}

TEST(EmbStore, ResaveIsByteIdentical) {
  const auto dir = testing::scratch_dir("emb_bytes");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = testing::random_unit(7 + static_cast<Eigen::Index>(seed), 3 + static_cast<Eigen::Index>(seed), seed);
    save_embeddings(m, dir / "a.emb");
    save_embeddings(load_embeddings(dir / "a.emb"), dir / "b.emb");
    EXPECT_EQ(testing::slurp(dir / "a.emb"), testing::slurp(dir / "b.emb"));
  }
}

TEST(EmbStore, PayloadSizeMismatch) {
  auto bytes = serialize_embeddings(make_matrix({{1, 0}, {0, 1}}));
  bytes.pop_back();
  EXPECT_EQ(error_kind([&] { parse_embeddings(bytes); }), Kind::kPayloadSizeMismatch);
  try {
    parse_embeddings(bytes);
  } catch (const EmbeddingError& e) {
    EXPECT_NE(std::string(e.what()).find("payload size mismatch"), std::string::npos);
  }
  bytes += "extra";
  EXPECT_EQ(error_kind([&] { parse_embeddings(bytes); }), Kind::kPayloadSizeMismatch);
}

TEST(EmbStore, DuplicateId) {
  auto bytes = serialize_embeddings(make_matrix({{1, 0}, {0, 1}}, {"a", "x"}));
  bytes[4 + 8 + 2 + 1 + 2] = 'a';  // second id "x" -> "a"
  EXPECT_EQ(error_kind([&] { parse_embeddings(bytes); }), Kind::kDuplicateId);
  try {
    parse_embeddings(bytes);
  } catch (const EmbeddingError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate id"), std::string::npos);
  }
}

TEST(EmbStore, MalformedHeaderAndNonFinite) {
  EXPECT_EQ(error_kind([] { parse_embeddings("EMB"); }), Kind::kMalformedHeader);
  EXPECT_EQ(error_kind([] { parse_embeddings("XXXX00000000"); }), Kind::kMalformedHeader);
  auto bytes = serialize_embeddings(make_matrix({{1, 0}}));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - 4, &nan, 4);
  EXPECT_EQ(error_kind([&] { parse_embeddings(bytes); }), Kind::kNonFinite);
  EXPECT_EQ(error_kind([] { load_embeddings("/nonexistent/file.emb"); }), Kind::kIo);
}

TEST(Normalize, Examples) {
  auto n = normalize(make_matrix({{3, 4}, {1, 0}}));
  EXPECT_NEAR(n.data()(0, 0), 0.6f, 1e-7);
  EXPECT_NEAR(n.data()(0, 1), 0.8f, 1e-7);
  EXPECT_EQ(n.data()(1, 0), 1.0f);
  EXPECT_EQ(n.data()(1, 1), 0.0f);
}

TEST(Normalize, ZeroRowNamesId) {
  auto m = make_matrix({{1, 1}, {0, 0}}, {"ok", "empty-doc"});
  try {
    normalize(m);
    FAIL() << "expected zero-norm error";
  } catch (const EmbeddingError& e) {
    EXPECT_EQ(e.kind(), Kind::kZeroNorm);
    EXPECT_NE(std::string(e.what()).find("zero-norm vector"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("empty-doc"), std::string::npos);
  }
}

TEST(Normalize, UnitNormAndIdempotent) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = static_cast<Eigen::Index>(1 + rng.below(64));
    RowMatrixXf raw(5, d);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = static_cast<float>(rng.normal() * 10.0);
    std::vector<std::string> ids = {"a", "b", "c", "d", "e"};
    const auto once = normalize(EmbeddingMatrix(ids, raw));
    EXPECT_LE(max_norm_deviation(once), 1e-4);
    const auto twice = normalize(once);
    EXPECT_LE((twice.data() - once.data()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Qrels, ParsesStandardLines) {
  std::istringstream in("q1 0 d7 2\nq1 0 d8 0\n\nq2 0 d1 1\n");
  auto q = parse_qrels(in);
  EXPECT_EQ(q.judgments.at("q1").at("d7"), 2);
  EXPECT_EQ(q.label("q1", "d8"), 0);
  EXPECT_EQ(q.label("q9", "d1"), 0);
  EXPECT_EQ(q.positives("q1"), std::vector<std::string>{"d7"});
  EXPECT_TRUE(q.has_positive("q2"));
  EXPECT_EQ(q.duplicate_lines, 0u);
}

TEST(Qrels, LastOccurrenceWins) {
  std::istringstream in("q1 0 d7 1\nq1 0 d7 2\n");
  auto q = parse_qrels(in);
  EXPECT_EQ(q.judgments.at("q1").at("d7"), 2);
  EXPECT_EQ(q.duplicate_lines, 1u);
}

TEST(Qrels, ParseErrorsCarryLineNumber) {
  std::istringstream bad_label("q1 0 d1 1\nq1 0 d7 high\n");
  try {
    parse_qrels(bad_label);
    FAIL() << "expected parse error";
  } catch (const QrelsParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream short_line("q1 0 d7\n");
  EXPECT_THROW(parse_qrels(short_line), QrelsParseError);
  std::istringstream negative("q1 0 d7 -1\n");
  EXPECT_THROW(parse_qrels(negative), QrelsParseError);
}

TEST(Qrels, SaveLoad) {
  const auto dir = testing::scratch_dir("qrels");
  std::istringstream in("q1 0 d7 2\nq2 0 d1 1\n");
  auto q = parse_qrels(in);
  save_qrels(q, dir / "q.txt");
  EXPECT_EQ(load_qrels(dir / "q.txt").judgments, q.judgments);
}

}  // namespace
}  // namespace dimsel
