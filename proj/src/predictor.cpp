#include "dimsel/predictor.hpp"

#include "binio.hpp"
#include "dimsel/mathops.hpp"
#include "dimsel/optim.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace dimsel {

namespace {

constexpr std::string_view kPredictorMagic = "DPRD";
constexpr std::uint32_t kPredictorVersion = 1;

struct PredictorFileError : DataError {
  using DataError::DataError;
};

void require_dim(const Predictor& p, Eigen::Index n, const char* what) {
  if (n != p.dim()) {
    throw DataError(std::string(what) + ": dimension mismatch (predictor " +
                    std::to_string(p.dim()) + ", input " + std::to_string(n) + ")");
  }
}

// Gathers target rows and their query embeddings into dense matrices.
struct Batch {
  RowMatrixXd x;
  RowMatrixXd target;
};

Batch gather(std::span<const ImportanceTarget> targets, const EmbeddingMatrix& queries) {
  const auto n = static_cast<Eigen::Index>(targets.size());
  Batch b{RowMatrixXd(n, queries.dim()), RowMatrixXd(n, queries.dim())};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = targets[static_cast<std::size_t>(i)];
    const auto row = queries.find(t.query_id);
    if (!row) throw DataError("target query '" + t.query_id + "' not found in query embeddings");
    if (t.probs.size() != queries.dim()) throw DataError("target dimension does not match queries");
    b.x.row(i) = queries.row(*row).cast<double>();
    b.target.row(i) = t.probs.transpose();
  }
  return b;
}

RowMatrixXd logits(const Predictor& p, const RowMatrixXd& x) {
  RowMatrixXd l = x * p.weight.transpose();
  l.rowwise() += p.bias.transpose();
  return l;
}

double mean_kl(const Predictor& p, const Batch& data) {
  if (data.x.rows() == 0) return 0.0;
  const RowMatrixXd logp = log_softmax_rows(logits(p, data.x));
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    total += kl_divergence(data.target.row(i), logp.row(i));
  }
  return total / static_cast<double>(data.x.rows());
}

Predictor round_to_storage(Predictor p) {
  p.weight = p.weight.cast<float>().cast<double>();
  p.bias = p.bias.cast<float>().cast<double>();
  return p;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw DataError("train: epochs must be >= 1");
  if (!(lr > 0.0)) throw DataError("train: learning rate must be positive");
  if (weight_decay < 0.0) throw DataError("train: weight decay must be non-negative");
  if (batch_size < 1) throw DataError("train: batch size must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw DataError("train: dropout must be in [0, 1)");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw DataError("train: validation fraction must be in (0, 1)");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"lr", lr},
          {"weight_decay", weight_decay}, {"batch_size", batch_size},
          {"dropout", dropout},       {"seed", seed},
          {"val_fraction", val_fraction}, {"beta1", beta1},
          {"beta2", beta2},           {"eps", eps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  return c;
}

Predictor Predictor::zeros(Eigen::Index dim) {
  Predictor p;
  p.weight = RowMatrixXd::Zero(dim, dim);
  p.bias = Eigen::VectorXd::Zero(dim);
  return p;
}

Predictor Predictor::random_init(Eigen::Index dim, std::uint64_t seed, double dropout) {
  Predictor p = zeros(dim);
  p.dropout_rate = dropout;
  Rng rng(derive_seed(seed, "predictor-init"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = rng.uniform(-bound, bound);
  for (Eigen::Index i = 0; i < dim; ++i) p.bias(i) = rng.uniform(-bound, bound);
  return p;
}

Eigen::VectorXd forward(const Predictor& p, const Eigen::Ref<const Eigen::VectorXd>& x, bool training,
                        Rng* rng) {
  require_dim(p, x.size(), "forward");
  if (!x.allFinite()) throw DataError("forward: non-finite input");
  if (training && p.dropout_rate > 0.0) {
    if (rng == nullptr) throw DataError("forward: training-mode dropout needs a random stream");
    Eigen::VectorXd dropped = x;
    const double keep = 1.0 - p.dropout_rate;
    for (Eigen::Index j = 0; j < dropped.size(); ++j) {
      dropped(j) = rng->bernoulli(p.dropout_rate) ? 0.0 : dropped(j) / keep;
    }
    return log_softmax(p.weight * dropped + p.bias);
  }
  return log_softmax(p.weight * x + p.bias);
}

Eigen::VectorXd forward(const Predictor& p, QueryRow x) {
  const Eigen::VectorXd xd = x.transpose().cast<double>();
  return forward(p, xd, false, nullptr);
}

double kl_loss(const Eigen::Ref<const Eigen::VectorXd>& target,
               const Eigen::Ref<const Eigen::VectorXd>& predicted_log) {
  if (target.size() != predicted_log.size()) throw DataError("kl_loss: shape mismatch");
  return kl_divergence(target, predicted_log);
}

PredictorGradient kl_gradient(const Predictor& p, const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& target) {
  require_dim(p, x.size(), "kl_gradient");
  require_dim(p, target.size(), "kl_gradient");
  const Eigen::VectorXd delta = softmax(p.weight * x + p.bias) - target;
  return {delta * x.transpose(), delta};
}

GradientCheck gradient_check(const Predictor& p, const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& target, double epsilon) {
  const PredictorGradient analytic = kl_gradient(p, x, target);
  GradientCheck out;
  out.analytic_norm = std::sqrt(analytic.weight.squaredNorm() + analytic.bias.squaredNorm());

  Predictor probe = p;
  auto loss = [&] { return kl_loss(target, forward(probe, x)); };
  auto compare = [&](double& param, double a) {
    const double saved = param;
    param = saved + epsilon;
    const double up = loss();
    param = saved - epsilon;
    const double down = loss();
    param = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-8);
    out.max_relative_error = std::max(out.max_relative_error, rel);
  };
  for (Eigen::Index i = 0; i < probe.weight.size(); ++i) {
    compare(probe.weight.data()[i], analytic.weight.data()[i]);
  }
  for (Eigen::Index i = 0; i < probe.bias.size(); ++i) compare(probe.bias(i), analytic.bias(i));
  return out;
}

Predictor train(std::span<const ImportanceTarget> targets, const EmbeddingMatrix& queries,
                const TrainConfig& cfg, TrainReport* report) {
  cfg.validate();
  if (targets.empty()) throw DataError("train: no targets");
  std::vector<std::size_t> order(targets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(cfg.seed, "split"));
  shuffle(order, split_rng);

  const auto n_val = static_cast<std::size_t>(
      std::floor(cfg.val_fraction * static_cast<double>(targets.size()) + 0.5));
  if (n_val == 0) throw DataError("train: validation split is empty");
  if (n_val >= targets.size()) throw DataError("train: training split is empty");

  std::vector<ImportanceTarget> val, tr;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? val : tr).push_back(targets[order[i]]);
  }
  return train(tr, val, queries, cfg, report);
}

Predictor train(std::span<const ImportanceTarget> train_targets,
                std::span<const ImportanceTarget> val_targets, const EmbeddingMatrix& queries,
                const TrainConfig& cfg, TrainReport* report) {
  cfg.validate();
  if (train_targets.empty()) throw DataError("train: training split is empty");
  if (val_targets.empty()) throw DataError("train: validation split is empty");

  const Batch train_data = gather(train_targets, queries);
  const Batch val_data = gather(val_targets, queries);
  const Eigen::Index dim = queries.dim();
  const auto n = static_cast<std::size_t>(train_data.x.rows());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);

  Predictor p = Predictor::random_init(dim, cfg.seed, cfg.dropout);
  const AdamWConfig opt_cfg{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
  AdamW opt_weight(p.weight.size(), opt_cfg);
  AdamW opt_bias(dim, opt_cfg);
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  const double keep = 1.0 - cfg.dropout;

  TrainReport rep;
  rep.train_size = n;
  rep.val_size = static_cast<std::size_t>(val_data.x.rows());
  rep.total_steps = total_steps;
  rep.best_val_kl = std::numeric_limits<double>::infinity();
  Predictor best = p;

  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  double lr = cfg.lr;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng epoch_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle(order, epoch_rng);

    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const auto b = static_cast<Eigen::Index>(stop - start);
      RowMatrixXd xb(b, dim);
      RowMatrixXd tb(b, dim);
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto src = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]);
        xb.row(i) = train_data.x.row(src);
        tb.row(i) = train_data.target.row(src);
      }
      if (cfg.dropout > 0.0) {
        for (Eigen::Index k = 0; k < xb.size(); ++k) {
          xb.data()[k] = dropout_rng.bernoulli(cfg.dropout) ? 0.0 : xb.data()[k] / keep;
        }
      }
      RowMatrixXd grad = logits(p, xb);
      for (Eigen::Index i = 0; i < b; ++i) grad.row(i) = softmax(grad.row(i).transpose()).transpose();
      grad = (grad - tb) / static_cast<double>(b);

      const RowMatrixXd grad_w = grad.transpose() * xb;
      const Eigen::VectorXd grad_b = grad.colwise().sum().transpose();
      lr = cosine_lr(cfg.lr, step++, total_steps);
      opt_weight.step(Eigen::Map<Eigen::VectorXd>(p.weight.data(), p.weight.size()),
                      Eigen::Map<const Eigen::VectorXd>(grad_w.data(), grad_w.size()), lr);
      opt_bias.step(p.bias, grad_b, lr);
    }

    EpochStats stats{epoch, mean_kl(p, train_data), mean_kl(p, val_data), lr};
    if (stats.val_kl < rep.best_val_kl) {
      rep.best_val_kl = stats.val_kl;
      rep.best_epoch = epoch;
      best = p;
    }
    rep.epochs.push_back(stats);
  }

  best = round_to_storage(std::move(best));
  best.dropout_rate = cfg.dropout;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : rep.epochs) {
    history.push_back({{"epoch", e.epoch}, {"train_kl", e.train_kl}, {"val_kl", e.val_kl}});
  }
  best.metadata = {{"train_config", cfg.to_json()},
                   {"best_val_kl", rep.best_val_kl},
                   {"best_epoch", rep.best_epoch},
                   {"train_size", rep.train_size},
                   {"val_size", rep.val_size},
                   {"total_steps", rep.total_steps},
                   {"history", history}};
  if (report) *report = std::move(rep);
  return best;
}

void save_predictor(const Predictor& p, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.bytes(kPredictorMagic);
  w.u32(kPredictorVersion);
  w.u32(static_cast<std::uint32_t>(p.dim()));
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wf = p.weight.cast<float>();
  const Eigen::VectorXf bf = p.bias.cast<float>();
  w.array(std::span<const float>(wf.data(), static_cast<std::size_t>(wf.size())));
  w.array(std::span<const float>(bf.data(), static_cast<std::size_t>(bf.size())));
  nlohmann::json meta = p.metadata;
  meta["dropout"] = p.dropout_rate;
  const std::string blob = meta.dump();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob);
  w.save<PredictorFileError>(path);
}

Predictor parse_predictor(std::string_view bytes, std::optional<Eigen::Index> expected_dim) {
  detail::ByteReader<PredictorFileError> r(bytes, "unexpected end of predictor file");
  if (r.bytes(4) != kPredictorMagic) throw PredictorFileError("not a predictor file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kPredictorVersion) {
    throw PredictorFileError("unsupported predictor version " + std::to_string(version));
  }
  const auto dim = static_cast<Eigen::Index>(r.u32());
  if (dim < 1) throw PredictorFileError("predictor dimension must be positive");
  if (expected_dim && *expected_dim != dim) {
    throw PredictorFileError("predictor dimension mismatch: file has " + std::to_string(dim) +
                             ", expected " + std::to_string(*expected_dim));
  }
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wf(dim, dim);
  Eigen::VectorXf bf(dim);
  r.array(std::span<float>(wf.data(), static_cast<std::size_t>(wf.size())));
  r.array(std::span<float>(bf.data(), static_cast<std::size_t>(bf.size())));
  const std::uint32_t len = r.u32();
  const std::string_view blob = r.bytes(len);
  if (r.remaining() != 0) throw PredictorFileError("trailing bytes after predictor metadata");

  Predictor p;
  p.weight = wf.cast<double>();
  p.bias = bf.cast<double>();
  if (!p.weight.allFinite() || !p.bias.allFinite()) {
    throw PredictorFileError("predictor has non-finite parameters");
  }
  try {
    p.metadata = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw PredictorFileError(std::string("bad predictor metadata: ") + e.what());
  }
  p.dropout_rate = p.metadata.value("dropout", 0.0);
  p.metadata.erase("dropout");
  return p;
}

Predictor load_predictor(const std::filesystem::path& path, std::optional<Eigen::Index> expected_dim) {
  return parse_predictor(detail::read_file<PredictorFileError>(path), expected_dim);
}

}  // namespace dimsel
