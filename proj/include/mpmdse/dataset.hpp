#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "mpmdse/cdfg.hpp"
#include "mpmdse/designspace.hpp"
#include "mpmdse/oracle.hpp"
#include "mpmdse/textembed.hpp"

namespace mpmdse {

using TargetVector = std::array<double, kNumTargets>;

/// Latency as ln(1 + c) / ln(1 + C_max); resources as fractions of capacity.
struct Normalizer {
  Resources capacities{1, 1, 1, 1};
  std::int64_t c_max = 1;

  TargetVector normalize(const QorMetrics& m) const;
  /// Inverse of `normalize`, rounded to integers; feasibility recomputed from capacities.
  QorMetrics denormalize(const TargetVector& t) const;
};

/// One training instance: graph with pragma nodes, pooled text embedding
/// (or a T x d_text token stack) and normalized targets.
struct GraphTextSample {
  std::string id;
  Cdfg graph;
  Matrix text;
  TargetVector targets{};
  std::string embedding_key;
  DesignConfiguration config;
  QorMetrics metrics;
};

struct Dataset {
  std::string kernel_id;
  Normalizer normalizer;
  NodeFeatureScale node_scale;
  std::string provider_id;
  std::vector<GraphTextSample> samples;
};

struct GenDataOptions {
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

/// n distinct configurations (all of them, in enumeration order, when n equals
/// the space size), each merged into text, embedded, turned into a graph with
/// pragma nodes and labelled by the oracle. C_max is the largest sampled latency.
Dataset gen_dataset(const OracleModel& model, const DesignSpace& space, const EmbeddingProvider& provider,
                    const GenDataOptions& opts, EmbeddingCache* cache = nullptr);

/// Builds one sample; the caller supplies the normalizer.
GraphTextSample make_sample(const OracleModel& model, const Cdfg& base_graph, const DesignSpace& space,
                            const DesignConfiguration& cfg, const EmbeddingProvider& provider,
                            const Normalizer& normalizer, EmbeddingCache* cache = nullptr);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> val;
};

/// Seeded shuffle, then floor(0.15 n) test, floor(0.15 n) validation and the
/// rest training. Requires n >= 10.
Split split_dataset(std::size_t n, std::uint64_t seed);

/// Directory layout: manifest.json, graphs/<id>.json and embeddings.bin.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mpmdse
