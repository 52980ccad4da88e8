#pragma once

// Single-layer dimension-importance predictor: log_softmax(W x + b), trained
// against oracle targets by minimizing KL(target || prediction).
//
// DPRD file layout (little-endian):
//   "DPRD" | u32 version | u32 dim | dim*dim f32 weight (row-major) |
//   dim f32 bias | u32 json_len | json metadata

#include "dimsel/embstore.hpp"
#include "dimsel/oracle.hpp"
#include "dimsel/random.hpp"
#include "dimsel/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace dimsel {

struct TrainConfig {
  int epochs = 100;
  double lr = 1e-4;
  double weight_decay = 0.01;
  int batch_size = 256;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct Predictor {
  RowMatrixXd weight;
  Eigen::VectorXd bias;
  double dropout_rate = 0.0;
  nlohmann::json metadata = nlohmann::json::object();

  Eigen::Index dim() const { return bias.size(); }

  static Predictor zeros(Eigen::Index dim);
  // W, b ~ U(-1/sqrt(D), 1/sqrt(D)).
  static Predictor random_init(Eigen::Index dim, std::uint64_t seed, double dropout = 0.0);
};

// Log-probabilities for one query. Dropout (inverted, on the input) is only
// applied when `training` is set, and then `rng` must be provided.
Eigen::VectorXd forward(const Predictor& p, const Eigen::Ref<const Eigen::VectorXd>& x,
                        bool training = false, Rng* rng = nullptr);
Eigen::VectorXd forward(const Predictor& p, QueryRow x);

// KL(target || exp(predicted_log)); zero target entries contribute 0.
double kl_loss(const Eigen::Ref<const Eigen::VectorXd>& target,
               const Eigen::Ref<const Eigen::VectorXd>& predicted_log);

struct PredictorGradient {
  RowMatrixXd weight;
  Eigen::VectorXd bias;
};

// Analytic gradient of KL for one example: (softmax(l) - target) x^T.
PredictorGradient kl_gradient(const Predictor& p, const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& target);

struct GradientCheck {
  double max_relative_error = 0.0;
  double analytic_norm = 0.0;
};

// Compares kl_gradient against central finite differences with step `epsilon`.
// Per-entry relative error is |a - n| / max(|a| + |n|, 1e-8).
GradientCheck gradient_check(const Predictor& p, const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& target, double epsilon);

struct EpochStats {
  int epoch = 0;
  double train_kl = 0.0;
  double val_kl = 0.0;
  double lr_end = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_val_kl = 0.0;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  std::size_t total_steps = 0;
};

// Seeded train/validation split by `cfg.val_fraction`, then mini-batch AdamW
// with cosine annealing. Returns the parameters of the epoch with the lowest
// validation KL (dropout off), rounded to float storage precision.
Predictor train(std::span<const ImportanceTarget> targets, const EmbeddingMatrix& queries,
                const TrainConfig& cfg, TrainReport* report = nullptr);

// Same loop with an explicit validation set.
Predictor train(std::span<const ImportanceTarget> train_targets,
                std::span<const ImportanceTarget> val_targets, const EmbeddingMatrix& queries,
                const TrainConfig& cfg, TrainReport* report = nullptr);

void save_predictor(const Predictor& p, const std::filesystem::path& path);
Predictor load_predictor(const std::filesystem::path& path,
                         std::optional<Eigen::Index> expected_dim = std::nullopt);
Predictor parse_predictor(std::string_view bytes,
                          std::optional<Eigen::Index> expected_dim = std::nullopt);

}  // namespace dimsel
