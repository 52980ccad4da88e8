#pragma once

#include "dimsel/embstore.hpp"
#include "dimsel/random.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace dimsel::testing {

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dimsel_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

inline EmbeddingMatrix make_matrix(const std::vector<std::vector<float>>& rows,
                                   std::vector<std::string> ids = {}) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size());
  RowMatrixXf m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  if (ids.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) ids.push_back("r" + std::to_string(i));
  }
  return EmbeddingMatrix(std::move(ids), std::move(m));
}

// Random unit vectors, ids prefixed by `prefix`.
inline EmbeddingMatrix random_unit(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                                   const std::string& prefix = "x") {
  Rng rng(seed);
  RowMatrixXf m(n, d);
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd v(d);
    for (Eigen::Index j = 0; j < d; ++j) v(j) = rng.normal();
    m.row(i) = (v / v.norm()).transpose().cast<float>();
    ids.push_back(prefix + std::to_string(i));
  }
  return normalize(EmbeddingMatrix(std::move(ids), std::move(m)));
}

}  // namespace dimsel::testing
