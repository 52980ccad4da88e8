#include "dimsel/embstore.hpp"

#include "binio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace dimsel {

namespace {

constexpr std::string_view kEmbMagic = "EMB1";

struct IoError : EmbeddingError {
  explicit IoError(const std::string& what) : EmbeddingError(Kind::kIo, what) {}
};
struct HeaderError : EmbeddingError {
  explicit HeaderError(const std::string& what) : EmbeddingError(Kind::kMalformedHeader, what) {}
};

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, RowMatrixXf data)
    : data_(std::move(data)), ids_(std::move(ids)) {
  using Kind = EmbeddingError::Kind;
  if (static_cast<Eigen::Index>(ids_.size()) != data_.rows()) {
    throw EmbeddingError(Kind::kShapeMismatch,
                         "id count " + std::to_string(ids_.size()) + " != row count " +
                             std::to_string(data_.rows()));
  }
  if (data_.cols() < 1) throw EmbeddingError(Kind::kShapeMismatch, "dimension must be positive");
  id_index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!id_index_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second) {
      throw EmbeddingError(Kind::kDuplicateId, "duplicate id '" + ids_[i] + "'");
    }
  }
  for (Eigen::Index r = 0; r < data_.rows(); ++r) {
    if (!data_.row(r).allFinite()) {
      throw EmbeddingError(Kind::kNonFinite, "non-finite value in row '" + id(r) + "'");
    }
  }
}

std::optional<Eigen::Index> EmbeddingMatrix::find(std::string_view id) const {
  auto it = id_index_.find(std::string(id));
  if (it == id_index_.end()) return std::nullopt;
  return it->second;
}

Eigen::Index EmbeddingMatrix::index_of(std::string_view id) const {
  if (auto row = find(id)) return *row;
  throw DataError("unknown id '" + std::string(id) + "'");
}

EmbeddingMatrix EmbeddingMatrix::select(const std::vector<Eigen::Index>& rows) const {
  RowMatrixXf sub(static_cast<Eigen::Index>(rows.size()), dim());
  std::vector<std::string> sub_ids;
  sub_ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    sub.row(static_cast<Eigen::Index>(i)) = data_.row(rows[i]);
    sub_ids.push_back(id(rows[i]));
  }
  return EmbeddingMatrix(std::move(sub_ids), std::move(sub));
}

EmbeddingMatrix parse_embeddings(std::string_view bytes) {
  detail::ByteReader<HeaderError> header(bytes, "truncated EMB1 header");
  if (header.bytes(4) != kEmbMagic) throw HeaderError("bad magic, expected EMB1");
  const std::uint32_t dim = header.u32();
  const std::uint32_t count = header.u32();
  if (dim == 0) throw HeaderError("dimension must be positive");

  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = header.u16();
    ids.emplace_back(header.bytes(len));
  }

  const std::uint64_t expected = std::uint64_t{count} * dim * sizeof(float);
  if (header.remaining() != expected) {
    throw EmbeddingError(EmbeddingError::Kind::kPayloadSizeMismatch,
                         "payload size mismatch: expected " + std::to_string(expected) +
                             " bytes, found " + std::to_string(header.remaining()));
  }
  RowMatrixXf data(count, dim);
  header.array(std::span<float>(data.data(), static_cast<std::size_t>(data.size())));
  return EmbeddingMatrix(std::move(ids), std::move(data));
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file<IoError>(path);
  return parse_embeddings(bytes);
}

std::string serialize_embeddings(const EmbeddingMatrix& m) {
  detail::ByteWriter w;
  w.bytes(kEmbMagic);
  w.u32(static_cast<std::uint32_t>(m.dim()));
  w.u32(static_cast<std::uint32_t>(m.count()));
  for (const auto& id : m.ids()) {
    if (id.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw HeaderError("id longer than 65535 bytes");
    }
    w.u16(static_cast<std::uint16_t>(id.size()));
    w.bytes(id);
  }
  w.array(std::span<const float>(m.data().data(), static_cast<std::size_t>(m.data().size())));
  return w.buffer();
}

void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.bytes(serialize_embeddings(m));
  w.save<IoError>(path);
}

EmbeddingMatrix normalize(const EmbeddingMatrix& m) {
  constexpr double kUnitSlack = 4.0 * std::numeric_limits<float>::epsilon();
  RowMatrixXf out = m.data();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double norm = out.row(r).cast<double>().norm();
    if (!(norm > 1e-12)) {
      throw EmbeddingError(EmbeddingError::Kind::kZeroNorm,
                           "zero-norm vector in row '" + m.id(r) + "'");
    }
    if (std::abs(norm - 1.0) <= kUnitSlack) continue;
    out.row(r) = (out.row(r).cast<double>() / norm).cast<float>();
  }
  return EmbeddingMatrix(m.ids(), std::move(out));
}

double max_norm_deviation(const EmbeddingMatrix& m) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < m.count(); ++r) {
    worst = std::max(worst, std::abs(m.row(r).cast<double>().norm() - 1.0));
  }
  return worst;
}

int Qrels::label(const std::string& qid, const std::string& docid) const {
  auto q = judgments.find(qid);
  if (q == judgments.end()) return 0;
  auto d = q->second.find(docid);
  return d == q->second.end() ? 0 : d->second;
}

std::vector<std::string> Qrels::positives(const std::string& qid) const {
  std::vector<std::string> out;
  auto q = judgments.find(qid);
  if (q == judgments.end()) return out;
  for (const auto& [doc, y] : q->second) {
    if (y > 0) out.push_back(doc);
  }
  return out;
}

bool Qrels::has_positive(const std::string& qid) const {
  auto q = judgments.find(qid);
  if (q == judgments.end()) return false;
  for (const auto& entry : q->second) {
    if (entry.second > 0) return true;
  }
  return false;
}

Qrels parse_qrels(std::istream& in) {
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(std::move(t));
    if (tok.empty()) continue;
    if (tok.size() != 4) {
      throw QrelsParseError(line_no, "expected 4 columns (qid iter docid label), got " +
                                         std::to_string(tok.size()));
    }
    int label = 0;
    const auto& s = tok[3];
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), label);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw QrelsParseError(line_no, "non-integer label '" + s + "'");
    }
    if (label < 0) throw QrelsParseError(line_no, "negative label '" + s + "'");
    auto [it, inserted] = qrels.judgments[tok[0]].insert_or_assign(tok[2], label);
    if (!inserted) ++qrels.duplicate_lines;
  }
  return qrels;
}

Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open qrels file: " + path.string());
  return parse_qrels(in);
}

void save_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  for (const auto& [qid, docs] : qrels.judgments) {
    for (const auto& [doc, y] : docs) out << qid << " 0 " << doc << ' ' << y << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace dimsel
