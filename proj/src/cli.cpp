#include "dimsel/cli.hpp"

#include "dimsel/adapter.hpp"
#include "dimsel/embstore.hpp"
#include "dimsel/evalkit.hpp"
#include "dimsel/oracle.hpp"
#include "dimsel/predictor.hpp"
#include "dimsel/selection.hpp"
#include "dimsel/synthgen.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace dimsel::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  int threads = 1;
  bool quiet = false;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  void log(const std::string& msg) const {
    if (!quiet) *err << "[dimsel] " << msg << '\n';
  }
};

// Shortest %g form that parses back to the same double.
std::string format_double(double v) {
  char buf[40];
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
  }
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string format_fraction(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw DataError("write failed for '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

fs::path sidecar(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p += suffix;
  return p;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("DIMSEL_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || end == env || *end != '\0' || *env == '-') {
      throw DataError(std::string("DIMSEL_SEED is not an unsigned integer: '") + env + "'");
    }
    return v;
  }
  return 0;
}

// A command's replayable record: the arguments that reproduce it (with the
// seed made explicit), its resolved configuration and its files.
struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void write(const fs::path& path) const {
    write_json(path, {{"tool", "dimsel"},
                      {"command", command},
                      {"argv", argv},
                      {"config", config},
                      {"inputs", inputs},
                      {"outputs", outputs}});
  }
};

std::vector<std::string> with_seed(std::vector<std::string> argv, const std::optional<std::uint64_t>& flag,
                                   std::uint64_t resolved) {
  if (!flag) {
    argv.push_back("--seed");
    argv.push_back(std::to_string(resolved));
  }
  return argv;
}

json oracle_json(const OracleConfig& c) {
  return {{"tau", c.tau},
          {"pool_size", c.pool_size},
          {"sample_size", c.sample_size},
          {"weight_positives", c.weight_positives},
          {"hard_negatives", c.hard_negatives},
          {"seed", c.seed}};
}

json method_json(const ScoringMethod& m) {
  return {{"variant", std::string(to_string(m.variant))},
          {"k", m.k},
          {"prf_depth", m.prf_depth},
          {"prf_negatives", m.prf_negatives}};
}

// Option groups shared by several subcommands.

struct OracleFlags {
  OracleConfig cfg;
  bool no_weighting = false;
  bool no_hard_negatives = false;

  void add(CLI::App* app) {
    app->add_option("--tau", cfg.tau, "softmax temperature")->capture_default_str();
    app->add_option("--pool-size", cfg.pool_size, "hard-negative pool size K")->capture_default_str();
    app->add_option("--sample-size", cfg.sample_size, "hard negatives sampled per query M")->capture_default_str();
    app->add_flag("--no-weighting", no_weighting, "unweighted mean of positives");
    app->add_flag("--no-hard-negatives", no_hard_negatives, "drop the negative term");
  }
  OracleConfig resolve(std::uint64_t seed) const {
    OracleConfig c = cfg;
    c.weight_positives = !no_weighting;
    c.hard_negatives = !no_hard_negatives;
    c.seed = seed;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  TrainConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--epochs", cfg.epochs)->capture_default_str();
    app->add_option("--lr", cfg.lr)->capture_default_str();
    app->add_option("--weight-decay", cfg.weight_decay)->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size)->capture_default_str();
    app->add_option("--dropout", cfg.dropout)->capture_default_str();
    app->add_option("--val-fraction", cfg.val_fraction)->capture_default_str();
  }
  TrainConfig resolve(std::uint64_t seed) const {
    TrainConfig c = cfg;
    c.seed = seed;
    return c;
  }
};

struct MethodFlags {
  std::string method = "full";
  Eigen::Index k = 0;
  int prf_depth = 1;
  int prf_negatives = 10;
  std::string predictor;
  std::string adapter;

  void add(CLI::App* app, bool with_k) {
    app->add_option("--method", method, "full|cutoff|norm|dime_prf|eclipse_prf|learned")->capture_default_str();
    if (with_k) app->add_option("--k", k, "retained dimensions (0 = all)")->capture_default_str();
    app->add_option("--prf-depth", prf_depth, "pseudo-positives from the first pass")->capture_default_str();
    app->add_option("--prf-negatives", prf_negatives, "pseudo-negatives below them")->capture_default_str();
    app->add_option("--predictor", predictor, "predictor file for the learned method");
    app->add_option("--adapter", adapter, "adapter applied to queries and corpus first");
  }
  ScoringMethod resolve() const { return {parse_variant(method), k, prf_depth, prf_negatives}; }
};

// Loaded retrieval inputs, with the optional adapter already applied.
struct Space {
  EmbeddingMatrix queries;
  EmbeddingMatrix corpus;
  std::optional<Predictor> predictor;
};

Space load_space(const Context& ctx, const std::string& queries, const std::string& corpus,
                 const MethodFlags& m, Manifest& manifest) {
  Space s{load_embeddings(queries), load_embeddings(corpus), std::nullopt};
  manifest.inputs.push_back(queries);
  manifest.inputs.push_back(corpus);
  if (s.queries.dim() != s.corpus.dim()) throw DataError("query and corpus dimensions differ");
  if (!m.adapter.empty()) {
    const Adapter a = load_adapter(m.adapter, s.corpus.dim());
    s.queries = apply(a, s.queries);
    s.corpus = apply(a, s.corpus);
    manifest.inputs.push_back(m.adapter);
    ctx.log("applied adapter " + m.adapter);
  }
  if (!m.predictor.empty()) {
    s.predictor = load_predictor(m.predictor, s.corpus.dim());
    manifest.inputs.push_back(m.predictor);
  }
  if (parse_variant(m.method) == Variant::kLearned && !s.predictor) {
    throw DataError("the learned method needs --predictor");
  }
  return s;
}

std::vector<Eigen::Index> decile_grid(Eigen::Index dim) {
  std::vector<Eigen::Index> out;
  for (int pct = 10; pct <= 100; pct += 10) {
    const Eigen::Index k = retained_k(dim, pct);
    if (out.empty() || out.back() != k) out.push_back(k);
  }
  return out;
}

// ---------------------------------------------------------------- commands

void cmd_normalize(const Context& ctx, const std::string& in, const std::string& out, Manifest& manifest) {
  const auto m = load_embeddings(in);
  ctx.log("normalizing " + std::to_string(m.count()) + " rows (max norm deviation " +
          format_double(max_norm_deviation(m)) + ")");
  save_embeddings(normalize(m), out);
  manifest.inputs = {in};
  manifest.outputs = {out};
  manifest.write(sidecar(out, ".manifest.json"));
}

void cmd_synth(const Context& ctx, const SynthConfig& cfg, const fs::path& dir, Manifest& manifest) {
  const auto data = generate(cfg);
  fs::create_directories(dir);
  save_embeddings(data.corpus, dir / "corpus.emb");
  save_embeddings(data.train_queries, dir / "train_queries.emb");
  manifest.outputs = {(dir / "corpus.emb").string(), (dir / "train_queries.emb").string()};
  if (!data.test_queries.empty()) {
    save_embeddings(data.test_queries, dir / "test_queries.emb");
    manifest.outputs.push_back((dir / "test_queries.emb").string());
  }
  save_qrels(data.qrels, dir / "qrels.tsv");
  write_json(dir / "planted.json", planted_json(data));
  manifest.outputs.push_back((dir / "qrels.tsv").string());
  manifest.outputs.push_back((dir / "planted.json").string());
  manifest.config = cfg.to_json();
  manifest.write(dir / "manifest.json");
  ctx.log("wrote " + std::to_string(data.corpus.count()) + " documents, " +
          std::to_string(data.train_queries.count()) + " training queries to " + dir.string());
}

void cmd_build_targets(const Context& ctx, const std::string& corpus_path, const std::string& queries_path,
                       const std::string& qrels_path, const std::string& out, const OracleConfig& cfg,
                       Manifest& manifest) {
  const auto corpus = load_embeddings(corpus_path);
  const auto queries = load_embeddings(queries_path);
  const auto qrels = load_qrels(qrels_path);
  const auto set = build_targets(corpus, queries, qrels, cfg, ctx.threads);
  if (set.targets.empty()) throw DataError("no query has a relevant document in the corpus");
  save_embeddings(targets_to_matrix(set.targets), out);
  const json summary = {{"targets", set.targets.size()},
                        {"skipped_queries", set.skipped_queries},
                        {"missing_documents", set.missing_documents},
                        {"duplicate_qrels_lines", qrels.duplicate_lines},
                        {"oracle", oracle_json(cfg)}};
  write_json(sidecar(out, ".summary.json"), summary);
  ctx.log("built " + std::to_string(set.targets.size()) + " targets, skipped " +
          std::to_string(set.skipped_queries) + " queries without positives");
  manifest.config = oracle_json(cfg);
  manifest.inputs = {corpus_path, queries_path, qrels_path};
  manifest.outputs = {out, sidecar(out, ".summary.json").string()};
  manifest.write(sidecar(out, ".manifest.json"));
}

json history_json(const TrainReport& rep) {
  json epochs = json::array();
  for (const auto& e : rep.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_kl", e.train_kl}, {"val_kl", e.val_kl}, {"lr_end", e.lr_end}});
  }
  return {{"best_epoch", rep.best_epoch},
          {"best_val_kl", rep.best_val_kl},
          {"train_size", rep.train_size},
          {"val_size", rep.val_size},
          {"total_steps", rep.total_steps},
          {"epochs", epochs}};
}

void cmd_train(const Context& ctx, const std::string& queries_path, const std::string& targets_path,
               const std::string& out, const TrainConfig& cfg, Manifest& manifest) {
  const auto queries = load_embeddings(queries_path);
  const auto targets = targets_from_matrix(load_embeddings(targets_path));
  TrainReport rep;
  const auto p = train(targets, queries, cfg, &rep);
  save_predictor(p, out);
  write_json(sidecar(out, ".report.json"), history_json(rep));
  ctx.log("best validation KL " + format_double(rep.best_val_kl) + " at epoch " + std::to_string(rep.best_epoch));
  manifest.config = cfg.to_json();
  manifest.inputs = {queries_path, targets_path};
  manifest.outputs = {out, sidecar(out, ".report.json").string()};
  manifest.write(sidecar(out, ".manifest.json"));
}

void cmd_train_adapter(const Context& ctx, const std::string& queries_path, const std::string& corpus_path,
                       const std::string& qrels_path, const std::string& out, const TrainConfig& cfg,
                       double temperature, Manifest& manifest) {
  const auto queries = load_embeddings(queries_path);
  const auto corpus = load_embeddings(corpus_path);
  const auto qrels = load_qrels(qrels_path);
  AdapterTrainReport rep;
  const auto a = train_adapter(queries, corpus, qrels, cfg, temperature, &rep);
  save_adapter(a, out);
  write_json(sidecar(out, ".report.json"), {{"val_loss", rep.val_loss},
                                            {"best_epoch", rep.best_epoch},
                                            {"train_pairs", rep.train_pairs},
                                            {"val_pairs", rep.val_pairs}});
  ctx.log("adapter best epoch " + std::to_string(rep.best_epoch) + " (0 = identity)");
  manifest.config = cfg.to_json();
  manifest.config["temperature"] = temperature;
  manifest.inputs = {queries_path, corpus_path, qrels_path};
  manifest.outputs = {out, sidecar(out, ".report.json").string()};
  manifest.write(sidecar(out, ".manifest.json"));
}

struct SweepInputs {
  std::string queries, corpus, qrels, out_dir, train_queries;
  std::vector<Eigen::Index> grid;
  int cutoff = 10;
  bool hyper = false;
  bool joint = false;
  int seeds = 0;
  std::vector<int> grid_epochs = {20, 30, 50, 100, 200};
  std::vector<double> grid_tau = {0.005, 0.01, 0.02, 0.05, 0.1};
  std::vector<int> grid_pool = {500, 1000, 2000, 3000};
  std::vector<int> grid_sample = {16, 32, 64, 128, 256};
};

void cmd_sweep_plain(const Context& ctx, const SweepInputs& in, const MethodFlags& mf, Manifest& manifest) {
  const Space s = load_space(ctx, in.queries, in.corpus, mf, manifest);
  const auto qrels = load_qrels(in.qrels);
  manifest.inputs.push_back(in.qrels);
  ScoringMethod method = mf.resolve();
  const auto result = sweep(method, s.queries, s.corpus, qrels, s.predictor ? &*s.predictor : nullptr, in.grid,
                            ctx.threads, in.cutoff);
  const fs::path dir = in.out_dir;
  write_file(dir / "curve.csv", curve_csv(result));
  write_json(dir / "summary.json", summary_json(result));
  ctx.log(std::string(to_string(method.variant)) + ": peak " + format_double(result.peak) + " at k=" +
          std::to_string(result.peak_k) + ", full-dimension " + format_double(result.curve.back().ndcg));
  manifest.config = {{"method", method_json(method)}, {"grid", result.curve.size()}, {"cutoff", in.cutoff}};
  manifest.outputs = {(dir / "curve.csv").string(), (dir / "summary.json").string()};
  manifest.write(dir / "manifest.json");
}

struct LearningInputs {
  EmbeddingMatrix train_queries, test_queries, corpus;
  Qrels qrels;
};

LearningInputs load_learning(const SweepInputs& in, Manifest& manifest) {
  if (in.train_queries.empty()) throw DataError("--hyper and --seeds need --train-queries");
  LearningInputs li{load_embeddings(in.train_queries), load_embeddings(in.queries), load_embeddings(in.corpus),
                    load_qrels(in.qrels)};
  manifest.inputs = {in.train_queries, in.queries, in.corpus, in.qrels};
  return li;
}

// Trains on the training queries and sweeps the learned selector on the
// evaluation queries.
SweepResult learned_curve(const Context& ctx, const LearningInputs& li, const std::vector<ImportanceTarget>& targets,
                          const TrainConfig& tc, const std::vector<Eigen::Index>& grid, int cutoff) {
  const auto p = train(targets, li.train_queries, tc);
  return sweep({Variant::kLearned}, li.test_queries, li.corpus, li.qrels, &p, grid, ctx.threads, cutoff);
}

void cmd_sweep_hyper(const Context& ctx, const SweepInputs& in, const OracleConfig& base_oracle,
                     const TrainConfig& base_train, Manifest& manifest) {
  const auto li = load_learning(in, manifest);
  const auto grid = in.grid.empty() ? decile_grid(li.corpus.dim()) : in.grid;
  std::ostringstream csv;
  csv << "param,value,fraction,k,ndcg@10\n";
  auto emit = [&](const std::string& param, const std::string& value, const SweepResult& r) {
    for (const auto& p : r.curve) {
      csv << param << ',' << value << ',' << format_fraction(p.fraction) << ',' << p.k << ','
          << format_double(p.ndcg) << '\n';
    }
  };
  auto targets_for = [&](const OracleConfig& oc) {
    return build_targets(li.corpus, li.train_queries, li.qrels, oc, ctx.threads).targets;
  };
  const auto base_targets = targets_for(base_oracle);

  if (in.joint) {
    for (double tau : in.grid_tau) {
      OracleConfig oc = base_oracle;
      oc.tau = tau;
      const auto targets = targets_for(oc);
      for (int epochs : in.grid_epochs) {
        TrainConfig tc = base_train;
        tc.epochs = epochs;
        ctx.log("joint tau=" + format_double(tau) + " epochs=" + std::to_string(epochs));
        emit("epochs*tau", std::to_string(epochs) + "*" + format_double(tau),
             learned_curve(ctx, li, targets, tc, grid, in.cutoff));
      }
    }
  } else {
    for (int epochs : in.grid_epochs) {
      TrainConfig tc = base_train;
      tc.epochs = epochs;
      ctx.log("epochs=" + std::to_string(epochs));
      emit("epochs", std::to_string(epochs), learned_curve(ctx, li, base_targets, tc, grid, in.cutoff));
    }
    auto oracle_axis = [&](const std::string& name, auto values, auto set) {
      for (auto v : values) {
        OracleConfig oc = base_oracle;
        set(oc, v);
        if (oc.sample_size > oc.pool_size) {
          ctx.log("skipping " + name + "=" + std::to_string(v) + ": sample size exceeds pool size");
          continue;
        }
        ctx.log(name + "=" + format_double(static_cast<double>(v)));
        emit(name, format_double(static_cast<double>(v)),
             learned_curve(ctx, li, targets_for(oc), base_train, grid, in.cutoff));
      }
    };
    oracle_axis("tau", in.grid_tau, [](OracleConfig& oc, double v) { oc.tau = v; });
    oracle_axis("pool_size", in.grid_pool, [](OracleConfig& oc, int v) { oc.pool_size = v; });
    oracle_axis("sample_size", in.grid_sample, [](OracleConfig& oc, int v) { oc.sample_size = v; });
  }
  const fs::path dir = in.out_dir;
  write_file(dir / "hyper.csv", csv.str());
  manifest.config = {{"oracle", oracle_json(base_oracle)},
                     {"train", base_train.to_json()},
                     {"joint", in.joint},
                     {"grid", grid},
                     {"epochs_grid", in.grid_epochs},
                     {"tau_grid", in.grid_tau},
                     {"pool_grid", in.grid_pool},
                     {"sample_grid", in.grid_sample}};
  manifest.outputs = {(dir / "hyper.csv").string()};
  manifest.write(dir / "manifest.json");
}

void cmd_sweep_seeds(const Context& ctx, const SweepInputs& in, const OracleConfig& oracle,
                     const TrainConfig& base_train, Manifest& manifest) {
  const auto li = load_learning(in, manifest);
  const auto targets = build_targets(li.corpus, li.train_queries, li.qrels, oracle, ctx.threads).targets;
  std::vector<SweepResult> runs;
  std::ostringstream per_seed;
  per_seed << "seed,fraction,k,ndcg@10\n";
  for (int s = 0; s < in.seeds; ++s) {
    TrainConfig tc = base_train;
    tc.seed = base_train.seed + static_cast<std::uint64_t>(s);
    ctx.log("seed " + std::to_string(tc.seed));
    runs.push_back(learned_curve(ctx, li, targets, tc, in.grid, in.cutoff));
    for (const auto& p : runs.back().curve) {
      per_seed << tc.seed << ',' << format_fraction(p.fraction) << ',' << p.k << ',' << format_double(p.ndcg) << '\n';
    }
  }
  std::ostringstream summary;
  summary << "fraction,k,mean,std\n";
  const auto n = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < runs.front().curve.size(); ++i) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r.curve[i].ndcg / n;
    double var = 0.0;
    for (const auto& r : runs) var += (r.curve[i].ndcg - mean) * (r.curve[i].ndcg - mean);
    const double sd = runs.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    const auto& p = runs.front().curve[i];
    summary << format_fraction(p.fraction) << ',' << p.k << ',' << format_double(mean) << ',' << format_double(sd)
            << '\n';
  }
  const fs::path dir = in.out_dir;
  write_file(dir / "seeds.csv", summary.str());
  write_file(dir / "seed_curves.csv", per_seed.str());
  manifest.config = {{"oracle", oracle_json(oracle)}, {"train", base_train.to_json()}, {"seeds", in.seeds}};
  manifest.outputs = {(dir / "seeds.csv").string(), (dir / "seed_curves.csv").string()};
  manifest.write(dir / "manifest.json");
}

struct EvalInputs {
  std::string run, queries, corpus, qrels, out_run, out;
  int cutoff = 10;
  std::size_t depth = 1000;
  std::string tag = "dimsel";
};

void cmd_eval(const Context& ctx, const EvalInputs& in, const MethodFlags& mf, Manifest& manifest) {
  const auto qrels = load_qrels(in.qrels);
  Run run;
  json config = {{"cutoff", in.cutoff}};
  if (!in.run.empty()) {
    std::ifstream file(in.run);
    if (!file) throw DataError("cannot open run file '" + in.run + "'");
    run = parse_trec_run(file);
    manifest.inputs = {in.run};
  } else {
    if (in.queries.empty() || in.corpus.empty()) throw DataError("eval needs --run or --queries and --corpus");
    const Space s = load_space(ctx, in.queries, in.corpus, mf, manifest);
    const ScoringMethod method = mf.resolve();
    method.validate(s.corpus.dim());
    const auto rankings = score_queries(method, s.queries, s.corpus, s.predictor ? &*s.predictor : nullptr,
                                        in.depth, ctx.threads);
    run = make_run(s.queries, s.corpus, rankings);
    config["method"] = method_json(method);
    config["depth"] = in.depth;
    if (!in.out_run.empty()) {
      std::ostringstream text;
      write_trec_run(text, run, in.tag);
      write_file(in.out_run, text.str());
      manifest.outputs.push_back(in.out_run);
    }
  }
  manifest.inputs.push_back(in.qrels);
  const auto summary = mean_ndcg(run, qrels, in.cutoff);
  const json result = {{"ndcg@" + std::to_string(in.cutoff), summary.mean},
                       {"evaluated_queries", summary.evaluated},
                       {"excluded_queries", summary.excluded}};
  *ctx.out << result.dump(2) << '\n';
  manifest.config = config;
  if (!in.out.empty()) {
    write_json(in.out, result);
    manifest.outputs.push_back(in.out);
  }
  if (!manifest.outputs.empty()) manifest.write(sidecar(manifest.outputs.front(), ".manifest.json"));
}

struct AnalyzeInputs {
  std::string queries, predictor, targets, out;
  Eigen::Index k = 0;
  std::size_t pairs = 20000;
};

void cmd_analyze(const Context& ctx, const AnalyzeInputs& in, std::uint64_t seed, Manifest& manifest) {
  const auto queries = load_embeddings(in.queries);
  manifest.inputs = {in.queries};
  std::vector<Eigen::VectorXd> importance;
  EmbeddingMatrix rows = queries;
  if (!in.predictor.empty()) {
    importance = predict_importance(load_predictor(in.predictor, queries.dim()), queries);
    manifest.inputs.push_back(in.predictor);
  } else if (!in.targets.empty()) {
    // Restrict to the queries that have a target, in query-row order.
    std::map<std::string, Eigen::VectorXd> by_id;
    for (auto& t : targets_from_matrix(load_embeddings(in.targets))) by_id[t.query_id] = std::move(t.probs);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index r = 0; r < queries.count(); ++r) {
      auto it = by_id.find(queries.id(r));
      if (it == by_id.end()) continue;
      keep.push_back(r);
      importance.push_back(it->second);
    }
    rows = queries.select(keep);
    manifest.inputs.push_back(in.targets);
  } else {
    throw DataError("analyze needs --predictor or --targets");
  }
  const auto c = consistency_analysis(importance, rows, in.k);
  const double mean_jaccard = pairwise_jaccard(importance, in.k, in.pairs, seed);
  const json result = {{"k", in.k},
                       {"pearson", c.pearson},
                       {"pairs", c.pairs},
                       {"self_jaccard", c.self_jaccard},
                       {"mean_pairwise_jaccard", mean_jaccard},
                       {"sampled_pairs", in.pairs}};
  *ctx.out << result.dump(2) << '\n';
  ctx.log("Pearson r = " + format_double(c.pearson) + " over " + std::to_string(c.pairs) + " pairs");
  manifest.config = {{"k", in.k}, {"pairs", in.pairs}, {"seed", seed}};
  if (!in.out.empty()) {
    write_json(in.out, result);
    manifest.outputs = {in.out};
    manifest.write(sidecar(in.out, ".manifest.json"));
  }
}

// Arguments following the subcommand token.
std::vector<std::string> command_args(const std::vector<std::string>& args, const std::string& name) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--threads") {
      ++i;
      continue;
    }
    if (args[i] == name) return {args.begin() + static_cast<std::ptrdiff_t>(i), args.end()};
  }
  return {name};
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, int depth) {
  CLI::App app{"Query-side dimension selection for dense retrieval", "dimsel"};
  app.require_subcommand(1);
  Context ctx;
  ctx.out = &out;
  ctx.err = &err;
  app.add_option("--threads", ctx.threads, "worker threads (1 = bit-reproducible)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_flag("--quiet", ctx.quiet, "suppress log lines on stderr");

  std::optional<std::uint64_t> seed_flag;
  auto add_seed = [&seed_flag](CLI::App* sub) {
    sub->add_option("--seed", seed_flag, "random seed (falls back to DIMSEL_SEED, then 0)");
  };

  // normalize
  std::string norm_in, norm_out;
  auto* normalize_cmd = app.add_subcommand("normalize", "l2-normalize an embedding file");
  normalize_cmd->add_option("--in", norm_in)->required();
  normalize_cmd->add_option("--out", norm_out)->required();

  // synth
  SynthConfig synth_cfg;
  std::string synth_dir;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic planted corpus");
  synth_cmd->add_option("--out-dir", synth_dir)->required();
  synth_cmd->add_option("--dim", synth_cfg.dim)->capture_default_str();
  synth_cmd->add_option("--clusters", synth_cfg.n_clusters)->capture_default_str();
  synth_cmd->add_option("--queries-per-cluster", synth_cfg.queries_per_cluster)->capture_default_str();
  synth_cmd->add_option("--test-queries-per-cluster", synth_cfg.test_queries_per_cluster)->capture_default_str();
  synth_cmd->add_option("--docs-per-query", synth_cfg.docs_per_query)->capture_default_str();
  synth_cmd->add_option("--distractors", synth_cfg.n_distractors)->capture_default_str();
  synth_cmd->add_option("--planted-size", synth_cfg.planted_size)->capture_default_str();
  synth_cmd->add_option("--signal", synth_cfg.signal_strength)->capture_default_str();
  synth_cmd->add_option("--noise", synth_cfg.noise_scale)->capture_default_str();
  synth_cmd->add_option("--jitter", synth_cfg.query_jitter)->capture_default_str();
  synth_cmd->add_option("--flip-rate", synth_cfg.flip_rate)->capture_default_str();
  synth_cmd->add_option("--graded-fraction", synth_cfg.graded_fraction)->capture_default_str();
  bool synth_overlap = false;
  synth_cmd->add_flag("--overlapping", synth_overlap, "draw planted sets independently");
  add_seed(synth_cmd);

  // build-targets
  std::string bt_corpus, bt_queries, bt_qrels, bt_out;
  OracleFlags bt_oracle;
  auto* bt_cmd = app.add_subcommand("build-targets", "label-derived importance targets");
  bt_cmd->add_option("--corpus", bt_corpus)->required();
  bt_cmd->add_option("--queries", bt_queries)->required();
  bt_cmd->add_option("--qrels", bt_qrels)->required();
  bt_cmd->add_option("--out", bt_out)->required();
  bt_oracle.add(bt_cmd);
  add_seed(bt_cmd);

  // train
  std::string tr_queries, tr_targets, tr_out;
  TrainFlags tr_flags;
  auto* train_cmd = app.add_subcommand("train", "train the importance predictor");
  train_cmd->add_option("--queries", tr_queries)->required();
  train_cmd->add_option("--targets", tr_targets)->required();
  train_cmd->add_option("--out", tr_out)->required();
  tr_flags.add(train_cmd);
  add_seed(train_cmd);

  // train-adapter
  std::string ad_queries, ad_corpus, ad_qrels, ad_out;
  TrainFlags ad_flags;
  double ad_temperature = 0.05;
  auto* adapter_cmd = app.add_subcommand("train-adapter", "train a search adapter");
  adapter_cmd->add_option("--queries", ad_queries)->required();
  adapter_cmd->add_option("--corpus", ad_corpus)->required();
  adapter_cmd->add_option("--qrels", ad_qrels)->required();
  adapter_cmd->add_option("--out", ad_out)->required();
  adapter_cmd->add_option("--temperature", ad_temperature)->capture_default_str();
  ad_flags.add(adapter_cmd);
  add_seed(adapter_cmd);

  // sweep
  SweepInputs sw;
  MethodFlags sw_method;
  OracleFlags sw_oracle;
  TrainFlags sw_train;
  auto* sweep_cmd = app.add_subcommand("sweep", "NDCG over the retained-dimension grid");
  sweep_cmd->add_option("--queries", sw.queries, "evaluation queries")->required();
  sweep_cmd->add_option("--corpus", sw.corpus)->required();
  sweep_cmd->add_option("--qrels", sw.qrels)->required();
  sweep_cmd->add_option("--out-dir", sw.out_dir)->required();
  sweep_cmd->add_option("--grid", sw.grid, "explicit k values")->delimiter(',');
  sweep_cmd->add_option("--cutoff", sw.cutoff)->capture_default_str();
  sw_method.add(sweep_cmd, false);
  sweep_cmd->add_flag("--hyper", sw.hyper, "one-at-a-time sensitivity sweeps of epochs, tau, K and M");
  sweep_cmd->add_flag("--joint", sw.joint, "with --hyper: search epochs x tau jointly");
  sweep_cmd->add_option("--seeds", sw.seeds, "train this many seeds and report mean and std per k")
      ->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--train-queries", sw.train_queries, "training queries for --hyper/--seeds");
  sweep_cmd->add_option("--grid-epochs", sw.grid_epochs)->delimiter(',');
  sweep_cmd->add_option("--grid-tau", sw.grid_tau)->delimiter(',');
  sweep_cmd->add_option("--grid-pool", sw.grid_pool)->delimiter(',');
  sweep_cmd->add_option("--grid-sample", sw.grid_sample)->delimiter(',');
  sw_oracle.add(sweep_cmd);
  sw_train.add(sweep_cmd);
  add_seed(sweep_cmd);

  // eval
  EvalInputs ev;
  MethodFlags ev_method;
  auto* eval_cmd = app.add_subcommand("eval", "score queries or a TREC run with NDCG");
  eval_cmd->add_option("--qrels", ev.qrels)->required();
  eval_cmd->add_option("--run", ev.run, "existing TREC run to evaluate");
  eval_cmd->add_option("--queries", ev.queries);
  eval_cmd->add_option("--corpus", ev.corpus);
  eval_cmd->add_option("--out-run", ev.out_run, "write the produced run here");
  eval_cmd->add_option("--out", ev.out, "write metrics JSON here");
  eval_cmd->add_option("--cutoff", ev.cutoff)->capture_default_str();
  eval_cmd->add_option("--depth", ev.depth)->capture_default_str();
  eval_cmd->add_option("--tag", ev.tag)->capture_default_str();
  ev_method.add(eval_cmd, true);

  // analyze
  AnalyzeInputs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "selection consistency across queries");
  analyze_cmd->add_option("--queries", an.queries)->required();
  analyze_cmd->add_option("--predictor", an.predictor);
  analyze_cmd->add_option("--targets", an.targets, "use stored targets instead of a predictor");
  analyze_cmd->add_option("--k", an.k)->required()->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--pairs", an.pairs)->capture_default_str();
  analyze_cmd->add_option("--out", an.out);
  add_seed(analyze_cmd);

  // replay
  std::string replay_path;
  auto* replay_cmd = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  replay_cmd->add_option("manifest", replay_path)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "dimsel: " << e.what() << "\n" << "Run with --help for usage.\n";
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  Manifest manifest;
  manifest.command = chosen->get_name();
  try {
    const auto argv = command_args(args, manifest.command);
    if (chosen == normalize_cmd) {
      manifest.argv = argv;
      cmd_normalize(ctx, norm_in, norm_out, manifest);
    } else if (chosen == synth_cmd) {
      synth_cfg.seed = resolve_seed(seed_flag);
      synth_cfg.disjoint = !synth_overlap;
      manifest.argv = with_seed(argv, seed_flag, synth_cfg.seed);
      cmd_synth(ctx, synth_cfg, synth_dir, manifest);
    } else if (chosen == bt_cmd) {
      const auto seed = resolve_seed(seed_flag);
      manifest.argv = with_seed(argv, seed_flag, seed);
      cmd_build_targets(ctx, bt_corpus, bt_queries, bt_qrels, bt_out, bt_oracle.resolve(seed), manifest);
    } else if (chosen == train_cmd) {
      const auto seed = resolve_seed(seed_flag);
      manifest.argv = with_seed(argv, seed_flag, seed);
      cmd_train(ctx, tr_queries, tr_targets, tr_out, tr_flags.resolve(seed), manifest);
    } else if (chosen == adapter_cmd) {
      const auto seed = resolve_seed(seed_flag);
      manifest.argv = with_seed(argv, seed_flag, seed);
      cmd_train_adapter(ctx, ad_queries, ad_corpus, ad_qrels, ad_out, ad_flags.resolve(seed), ad_temperature,
                        manifest);
    } else if (chosen == sweep_cmd) {
      const auto seed = resolve_seed(seed_flag);
      manifest.argv = with_seed(argv, seed_flag, seed);
      if (sw.hyper && sw.seeds > 0) throw DataError("--hyper and --seeds are separate protocols");
      if (sw.hyper) {
        cmd_sweep_hyper(ctx, sw, sw_oracle.resolve(seed), sw_train.resolve(seed), manifest);
      } else if (sw.seeds > 0) {
        cmd_sweep_seeds(ctx, sw, sw_oracle.resolve(seed), sw_train.resolve(seed), manifest);
      } else {
        cmd_sweep_plain(ctx, sw, sw_method, manifest);
      }
    } else if (chosen == eval_cmd) {
      manifest.argv = argv;
      cmd_eval(ctx, ev, ev_method, manifest);
    } else if (chosen == analyze_cmd) {
      const auto seed = resolve_seed(seed_flag);
      manifest.argv = with_seed(argv, seed_flag, seed);
      cmd_analyze(ctx, an, seed, manifest);
    } else if (chosen == replay_cmd) {
      if (depth > 0) throw DataError("a manifest cannot replay another replay");
      std::ifstream file(replay_path);
      if (!file) throw DataError("cannot open manifest '" + replay_path + "'");
      json recorded;
      try {
        recorded = json::parse(file);
      } catch (const json::exception& e) {
        throw DataError(std::string("bad manifest: ") + e.what());
      }
      if (!recorded.contains("argv") || !recorded["argv"].is_array()) throw DataError("manifest has no argv");
      std::vector<std::string> replay_args = {"--threads", std::to_string(ctx.threads)};
      if (ctx.quiet) replay_args.push_back("--quiet");
      for (const auto& a : recorded["argv"]) replay_args.push_back(a.get<std::string>());
      ctx.log("replaying " + recorded.value("command", std::string("?")));
      return dispatch(replay_args, out, err, depth + 1);
    }
  } catch (const DataError& e) {
    err << "dimsel: error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "dimsel: error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "dimsel: internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return dispatch(args, out, err, 0);
}

}  // namespace dimsel::cli
