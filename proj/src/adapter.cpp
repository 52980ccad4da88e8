#include "dimsel/adapter.hpp"

#include "binio.hpp"
#include "dimsel/mathops.hpp"
#include "dimsel/optim.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace dimsel {

namespace {

constexpr std::string_view kAdapterMagic = "ADPT";

struct AdapterFileError : DataError {
  using DataError::DataError;
};

struct Pairs {
  RowMatrixXd queries;
  RowMatrixXd docs;
};

Pairs gather_pairs(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& pairs,
                   const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus) {
  const auto n = static_cast<Eigen::Index>(pairs.size());
  Pairs out{RowMatrixXd(n, queries.dim()), RowMatrixXd(n, queries.dim())};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.queries.row(i) = queries.row(pairs[static_cast<std::size_t>(i)].first).cast<double>();
    out.docs.row(i) = corpus.row(pairs[static_cast<std::size_t>(i)].second).cast<double>();
  }
  return out;
}

double batched_loss(const RowMatrixXd& matrix, const Pairs& data, std::size_t batch, double temperature) {
  const auto n = static_cast<std::size_t>(data.queries.rows());
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += batch) {
    const auto b = static_cast<Eigen::Index>(std::min(n, start + batch) - start);
    const auto s = static_cast<Eigen::Index>(start);
    total += static_cast<double>(b) *
             contrastive_loss(matrix, data.queries.middleRows(s, b), data.docs.middleRows(s, b), temperature);
  }
  return total / static_cast<double>(n);
}

}  // namespace

Adapter Adapter::identity(Eigen::Index dim) {
  return Adapter{RowMatrixXd::Identity(dim, dim)};
}

EmbeddingMatrix apply(const Adapter& a, const EmbeddingMatrix& m) {
  if (a.dim() != m.dim()) throw DataError("adapter dimension does not match embeddings");
  RowMatrixXf mapped(m.count(), m.dim());
  for (Eigen::Index r = 0; r < m.count(); ++r) {
    const Eigen::VectorXd x = m.row(r).transpose().cast<double>();
    mapped.row(r) = (a.matrix * x).transpose().cast<float>();
  }
  return normalize(EmbeddingMatrix(m.ids(), std::move(mapped)));
}

double contrastive_loss(const RowMatrixXd& matrix, const RowMatrixXd& queries,
                        const RowMatrixXd& docs, double temperature, RowMatrixXd* grad) {
  const Eigen::Index b = queries.rows();
  if (b == 0 || docs.rows() != b) throw DataError("contrastive_loss: empty or mismatched batch");
  const RowMatrixXd qa = queries * matrix.transpose();
  const RowMatrixXd da = docs * matrix.transpose();
  const Eigen::VectorXd qn = qa.rowwise().norm();
  const Eigen::VectorXd dn = da.rowwise().norm();
  if ((qn.array() <= 1e-12).any() || (dn.array() <= 1e-12).any()) {
    throw DataError("adapter maps a training vector to zero");
  }
  const RowMatrixXd u = qn.cwiseInverse().asDiagonal() * qa;
  const RowMatrixXd v = dn.cwiseInverse().asDiagonal() * da;
  const RowMatrixXd sim = (u * v.transpose()) / temperature;
  const RowMatrixXd logp = log_softmax_rows(sim);

  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) loss -= logp(i, i);
  loss /= static_cast<double>(b);

  if (grad != nullptr) {
    RowMatrixXd g = logp.array().exp().matrix();
    g.diagonal().array() -= 1.0;
    g /= static_cast<double>(b) * temperature;
    RowMatrixXd du = g * v;
    RowMatrixXd dv = g.transpose() * u;
    // Back through x -> x / |x|.
    for (Eigen::Index i = 0; i < b; ++i) {
      du.row(i) = (du.row(i) - du.row(i).dot(u.row(i)) * u.row(i)) / qn(i);
      dv.row(i) = (dv.row(i) - dv.row(i).dot(v.row(i)) * v.row(i)) / dn(i);
    }
    *grad = du.transpose() * queries + dv.transpose() * docs;
  }
  return loss;
}

Adapter train_adapter(const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus,
                      const Qrels& qrels, const TrainConfig& cfg, double temperature,
                      AdapterTrainReport* report) {
  if (queries.dim() != corpus.dim()) throw DataError("train_adapter: query/corpus dimension mismatch");
  if (!(temperature > 0.0)) throw DataError("train_adapter: temperature must be positive");
  if (cfg.epochs < 0) throw DataError("train_adapter: epochs must be >= 0");
  if (cfg.epochs > 0) cfg.validate();

  // Queries with at least one positive in the corpus, split by query.
  std::vector<Eigen::Index> eligible;
  for (Eigen::Index r = 0; r < queries.count(); ++r) {
    for (const auto& doc : qrels.positives(queries.id(r))) {
      if (corpus.find(doc)) {
        eligible.push_back(r);
        break;
      }
    }
  }
  if (eligible.empty()) throw DataError("train_adapter: no training pairs");

  const Eigen::Index dim = queries.dim();
  Adapter adapter = Adapter::identity(dim);
  AdapterTrainReport rep;
  if (cfg.epochs == 0) {
    adapter.metadata = {{"train_config", cfg.to_json()}, {"temperature", temperature}, {"best_epoch", 0}};
    if (report) *report = rep;
    return adapter;
  }

  Rng split_rng(derive_seed(cfg.seed, "adapter-split"));
  shuffle(eligible, split_rng);
  const auto n_val = static_cast<std::size_t>(
      std::floor(cfg.val_fraction * static_cast<double>(eligible.size()) + 0.5));
  if (n_val == 0) throw DataError("train_adapter: validation split is empty");
  if (n_val >= eligible.size()) throw DataError("train_adapter: training split is empty");

  std::vector<std::pair<Eigen::Index, Eigen::Index>> train_pairs, val_pairs;
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    const Eigen::Index q = eligible[i];
    for (const auto& doc : qrels.positives(queries.id(q))) {
      if (auto d = corpus.find(doc)) (i < n_val ? val_pairs : train_pairs).emplace_back(q, *d);
    }
  }
  const Pairs train_data = gather_pairs(train_pairs, queries, corpus);
  const Pairs val_data = gather_pairs(val_pairs, queries, corpus);
  rep.train_pairs = train_pairs.size();
  rep.val_pairs = val_pairs.size();

  const auto n = train_pairs.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t total_steps = ((n + batch - 1) / batch) * static_cast<std::size_t>(cfg.epochs);
  AdamW opt(dim * dim, AdamWConfig{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});

  RowMatrixXd best = adapter.matrix;
  double best_loss = batched_loss(adapter.matrix, val_data, batch, temperature);
  rep.val_loss.push_back(best_loss);

  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  RowMatrixXd grad;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng epoch_rng(derive_seed(cfg.seed, "adapter-epoch-" + std::to_string(epoch)));
    shuffle(order, epoch_rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const auto b = static_cast<Eigen::Index>(std::min(n, start + batch) - start);
      RowMatrixXd qb(b, dim), db(b, dim);
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto src = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]);
        qb.row(i) = train_data.queries.row(src);
        db.row(i) = train_data.docs.row(src);
      }
      contrastive_loss(adapter.matrix, qb, db, temperature, &grad);
      opt.step(Eigen::Map<Eigen::VectorXd>(adapter.matrix.data(), adapter.matrix.size()),
               Eigen::Map<const Eigen::VectorXd>(grad.data(), grad.size()),
               cosine_lr(cfg.lr, step++, total_steps));
    }
    const double loss = batched_loss(adapter.matrix, val_data, batch, temperature);
    rep.val_loss.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = adapter.matrix;
      rep.best_epoch = epoch;
    }
  }

  adapter.matrix = best.cast<float>().cast<double>();
  adapter.metadata = {{"train_config", cfg.to_json()},
                      {"temperature", temperature},
                      {"best_epoch", rep.best_epoch},
                      {"best_val_loss", best_loss},
                      {"train_pairs", rep.train_pairs},
                      {"val_pairs", rep.val_pairs},
                      {"val_loss", rep.val_loss}};
  if (report) *report = std::move(rep);
  return adapter;
}

std::vector<Ranking> ComposedPipeline::run(const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus,
                                           std::size_t depth, int threads) const {
  const EmbeddingMatrix adapted_queries = apply(adapter, queries);
  const EmbeddingMatrix adapted_corpus = apply(adapter, corpus);
  return score_queries(method, adapted_queries, adapted_corpus, predictor, depth, threads);
}

ComposedPipeline compose(Adapter adapter, ScoringMethod method, const Predictor* predictor) {
  if (predictor != nullptr && predictor->dim() != adapter.dim()) {
    throw DataError("compose: predictor and adapter dimensions differ");
  }
  return ComposedPipeline{std::move(adapter), method, predictor};
}

void save_adapter(const Adapter& a, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.bytes(kAdapterMagic);
  w.u32(static_cast<std::uint32_t>(a.dim()));
  const RowMatrixXf mf = a.matrix.cast<float>();
  w.array(std::span<const float>(mf.data(), static_cast<std::size_t>(mf.size())));
  const std::string blob = a.metadata.dump();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob);
  w.save<AdapterFileError>(path);
}

Adapter load_adapter(const std::filesystem::path& path, std::optional<Eigen::Index> expected_dim) {
  const std::string bytes = detail::read_file<AdapterFileError>(path);
  detail::ByteReader<AdapterFileError> r(bytes, "unexpected end of adapter file");
  if (r.bytes(4) != kAdapterMagic) throw AdapterFileError("not an adapter file (bad magic)");
  const auto dim = static_cast<Eigen::Index>(r.u32());
  if (dim < 1) throw AdapterFileError("adapter dimension must be positive");
  if (expected_dim && *expected_dim != dim) {
    throw AdapterFileError("adapter dimension mismatch: file has " + std::to_string(dim) +
                           ", expected " + std::to_string(*expected_dim));
  }
  RowMatrixXf mf(dim, dim);
  r.array(std::span<float>(mf.data(), static_cast<std::size_t>(mf.size())));
  const std::uint32_t len = r.u32();
  const std::string_view blob = r.bytes(len);
  if (r.remaining() != 0) throw AdapterFileError("trailing bytes after adapter metadata");
  Adapter a{mf.cast<double>()};
  if (!a.matrix.allFinite()) throw AdapterFileError("adapter has non-finite entries");
  try {
    a.metadata = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw AdapterFileError(std::string("bad adapter metadata: ") + e.what());
  }
  return a;
}

}  // namespace dimsel
