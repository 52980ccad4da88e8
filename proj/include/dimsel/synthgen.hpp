#pragma once

// Synthetic corpora with planted per-cluster informative dimensions.
//
// Each cluster c owns a dimension set S_c and a prototype direction on S_c
// (random signs, magnitudes in [0.5, 1.5]). A query's planted part is the
// prototype with each magnitude scaled by U(1 - jitter, 1 + jitter) and each
// sign flipped with probability `flip_rate`, unit-normalized; the query adds
// isotropic noise of scale `noise_scale` on every dimension. Its positives share the same planted part with their own
// independent noise (label-2 positives carry half the noise). Distractors are
// random isotropic directions. Every vector is l2-normalized.

#include "dimsel/embstore.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <vector>

namespace dimsel {

struct SynthConfig {
  Eigen::Index dim = 256;
  int n_clusters = 8;
  int queries_per_cluster = 300;      // training queries
  int test_queries_per_cluster = 25;  // held-out queries
  int docs_per_query = 1;
  int n_distractors = 2000;
  int planted_size = 16;
  double signal_strength = 1.0;
  double noise_scale = 0.06;
  double query_jitter = 0.3;
  double flip_rate = 0.0;
  double graded_fraction = 0.3;  // share of positives labelled 2 instead of 1
  bool disjoint = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct SynthData {
  EmbeddingMatrix train_queries;
  EmbeddingMatrix test_queries;
  EmbeddingMatrix corpus;
  Qrels qrels;
  std::vector<std::vector<Eigen::Index>> planted;  // cluster -> sorted dims
  std::map<std::string, int> cluster_of;           // query id -> cluster
};

SynthData generate(const SynthConfig& cfg);

nlohmann::json planted_json(const SynthData& data);

}  // namespace dimsel
