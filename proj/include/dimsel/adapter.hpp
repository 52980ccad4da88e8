#pragma once

// Supervised search adapter: a D x D projection applied to both queries and
// documents, followed by re-normalization. Trained from identity with an
// in-batch softmax contrastive loss over (query, positive) pairs.
//
// ADPT file layout (little-endian):
//   "ADPT" | u32 dim | dim*dim f32 matrix (row-major) | u32 json_len | json

#include "dimsel/embstore.hpp"
#include "dimsel/predictor.hpp"
#include "dimsel/selection.hpp"

#include <filesystem>
#include <optional>

namespace dimsel {

struct Adapter {
  RowMatrixXd matrix;
  nlohmann::json metadata = nlohmann::json::object();

  Eigen::Index dim() const { return matrix.rows(); }
  static Adapter identity(Eigen::Index dim);
};

// Maps every row through the adapter and re-normalizes.
EmbeddingMatrix apply(const Adapter& a, const EmbeddingMatrix& m);

// Mean in-batch contrastive loss: row i of `queries` is paired with row i of
// `docs`, every other row of `docs` is a negative. Similarities are cosines of
// the adapted vectors divided by `temperature`. Writes dLoss/dA into `grad`
// when given.
double contrastive_loss(const RowMatrixXd& matrix, const RowMatrixXd& queries,
                        const RowMatrixXd& docs, double temperature,
                        RowMatrixXd* grad = nullptr);

struct AdapterTrainReport {
  std::vector<double> val_loss;  // entry 0 is the identity initialization
  int best_epoch = 0;            // 0 means identity was never beaten
  std::size_t train_pairs = 0;
  std::size_t val_pairs = 0;
};

// `cfg.epochs` may be 0, which returns the identity. `cfg.dropout` is unused.
Adapter train_adapter(const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus,
                      const Qrels& qrels, const TrainConfig& cfg, double temperature = 0.05,
                      AdapterTrainReport* report = nullptr);

// Adapter followed by any scoring method in the adapted space. A learned
// predictor, when used, must have been trained on adapted embeddings.
struct ComposedPipeline {
  Adapter adapter;
  ScoringMethod method;
  const Predictor* predictor = nullptr;

  std::vector<Ranking> run(const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus,
                           std::size_t depth, int threads = 1) const;
};

ComposedPipeline compose(Adapter adapter, ScoringMethod method, const Predictor* predictor = nullptr);

void save_adapter(const Adapter& a, const std::filesystem::path& path);
Adapter load_adapter(const std::filesystem::path& path,
                     std::optional<Eigen::Index> expected_dim = std::nullopt);

}  // namespace dimsel
