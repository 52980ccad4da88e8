#pragma once

// Embedding matrices and relevance judgments, plus their on-disk formats.
//
// EMB1 layout (all integers little-endian):
//   "EMB1" | u32 dim | u32 count | count x (u16 id_len, id bytes) |
//   count*dim f32 values, row-major

#include "dimsel/types.hpp"

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dimsel {

class EmbeddingError : public DataError {
 public:
  enum class Kind {
    kIo,
    kMalformedHeader,
    kPayloadSizeMismatch,
    kDuplicateId,
    kNonFinite,
    kShapeMismatch,
    kZeroNorm,
  };

  EmbeddingError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// An immutable N x D stack of float vectors with unique string ids.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  // Validates: |ids| == rows, ids unique, all values finite, dim >= 1.
  EmbeddingMatrix(std::vector<std::string> ids, RowMatrixXf data);

  Eigen::Index dim() const { return data_.cols(); }
  Eigen::Index count() const { return data_.rows(); }
  bool empty() const { return data_.rows() == 0; }

  const RowMatrixXf& data() const { return data_; }
  auto row(Eigen::Index i) const { return data_.row(i); }

  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(Eigen::Index i) const { return ids_[static_cast<std::size_t>(i)]; }
  std::optional<Eigen::Index> find(std::string_view id) const;
  Eigen::Index index_of(std::string_view id) const;

  // Subset of rows, in the given order.
  EmbeddingMatrix select(const std::vector<Eigen::Index>& rows) const;

 private:
  RowMatrixXf data_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, Eigen::Index> id_index_;
};

EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
EmbeddingMatrix parse_embeddings(std::string_view bytes);
void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);
std::string serialize_embeddings(const EmbeddingMatrix& m);

// Divides each row by its Euclidean norm. Rows that are already unit length
// to float precision are passed through bit-for-bit, so the operation is
// exactly idempotent. Throws kZeroNorm naming the row id for norms <= 1e-12.
EmbeddingMatrix normalize(const EmbeddingMatrix& m);

// Largest |‖row‖ - 1| over all rows.
double max_norm_deviation(const EmbeddingMatrix& m);

class QrelsParseError : public DataError {
 public:
  QrelsParseError(std::size_t line, const std::string& what)
      : DataError("qrels line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Graded relevance judgments, query id -> (doc id -> label >= 0).
struct Qrels {
  std::map<std::string, std::map<std::string, int>> judgments;
  // Number of repeated (qid, docid) lines overwritten while loading.
  std::size_t duplicate_lines = 0;

  int label(const std::string& qid, const std::string& docid) const;
  // Documents with label > 0, in doc-id order.
  std::vector<std::string> positives(const std::string& qid) const;
  bool has_positive(const std::string& qid) const;
};

Qrels load_qrels(const std::filesystem::path& path);
Qrels parse_qrels(std::istream& in);
void save_qrels(const Qrels& qrels, const std::filesystem::path& path);

}  // namespace dimsel
