#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpmdse/common.hpp"
#include "mpmdse/designspace.hpp"

namespace mpmdse {

enum class Flow : std::uint32_t { control = 0, data = 1, call = 2, pragma = 3 };

/// Categorical codes written by build_cdfg and insert_pragma_nodes.
namespace node_code {
inline constexpr std::uint32_t kBlock = 0;
inline constexpr std::uint32_t kInstruction = 1;
inline constexpr std::uint32_t kPragma = 2;
inline constexpr std::uint32_t kFunction = 3;

inline constexpr std::uint32_t kNoInstruction = 0;
inline constexpr std::uint32_t kAdd = 1;
inline constexpr std::uint32_t kMul = 2;
inline constexpr std::uint32_t kLoad = 3;
inline constexpr std::uint32_t kStore = 4;
/// Pragma nodes use kPragmaBase + PragmaKind.
inline constexpr std::uint32_t kPragmaBase = 5;

inline constexpr std::array<std::uint32_t, 4> kDefaultVocab = {4, 9, 2, 4};
}  // namespace node_code

struct NodeFeatures {
  std::uint32_t node_type = 0;
  std::uint32_t instruction_type = 0;
  std::uint32_t function_type = 0;
  std::uint32_t block_type = 0;
  std::int64_t latency = 0;
  std::int64_t lut = 0;
  std::int64_t dsp = 0;
  std::int64_t ff = 0;

  bool operator==(const NodeFeatures&) const = default;
};

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  Flow flow = Flow::control;
  std::uint32_t position = 0;

  bool operator==(const Edge&) const = default;
};

/// Control/data-flow graph of one kernel configuration. Immutable by
/// convention once built.
struct Cdfg {
  std::string kernel_id;
  std::vector<NodeFeatures> nodes;
  std::vector<Edge> edges;
  std::array<std::uint32_t, 4> vocab_sizes = node_code::kDefaultVocab;
  /// Pragma target name (loop or array id) to the block node pragmas attach to.
  std::map<std::string, std::uint32_t> anchors;

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_edges() const { return edges.size(); }
  /// Throws ValidationError on out-of-vocabulary categories, negative
  /// numerics, dangling endpoints or self-loops.
  void validate() const;

  bool operator==(const Cdfg&) const = default;
};

bool is_weakly_connected(const Cdfg& g);

struct OpCounts {
  std::int64_t add = 0;
  std::int64_t mul = 0;
  std::int64_t load = 0;
  std::int64_t store = 0;

  std::int64_t total() const { return add + mul + load + store; }
  bool operator==(const OpCounts&) const = default;
};

struct LoopSpec {
  std::string id;
  std::int64_t trip_count = 1;
  OpCounts ops;
  std::optional<std::string> parent;
  /// Operand links between body operations, as (producer, consumer) indices
  /// into the body sequence [loads, muls, adds, stores].
  std::vector<std::pair<std::uint32_t, std::uint32_t>> links;
};

struct ArraySpec {
  std::string name;
  std::int64_t size = 0;
};

/// Hermetic stand-in for compiler IR. Pragma slot names use the form
/// `<target>` or `<target>.<suffix>` where target is a loop or array id.
struct KernelDescription {
  std::string kernel_id;
  std::string source_template;
  std::vector<LoopSpec> loops;
  std::vector<ArraySpec> arrays;

  Json to_json() const;
  static KernelDescription from_json(const Json& doc);
};

/// Per-operation costs written into instruction node features.
struct OpCost {
  std::int64_t latency = 0;
  std::int64_t lut = 0;
  std::int64_t dsp = 0;
  std::int64_t ff = 0;
};

struct OpCostTable {
  OpCost add{1, 32, 0, 32};
  OpCost mul{3, 16, 3, 48};
  OpCost load{2, 8, 0, 16};
  OpCost store{1, 8, 0, 8};
};

/// Throws ValidationError listing every offending id.
void validate_description(const KernelDescription& desc);

Cdfg build_cdfg(const KernelDescription& desc, const OpCostTable& costs = {});

/// Returns a copy of `g` with one pragma node per enabled directive, linked
/// to its target block by a `pragma` edge whose position is the value index.
Cdfg insert_pragma_nodes(const Cdfg& g, const DesignSpace& space, const DesignConfiguration& cfg);

/// Dataset-level maxima for min-max scaling of the numeric node fields.
struct NodeFeatureScale {
  double latency = 1.0;
  double lut = 1.0;
  double dsp = 1.0;
  double ff = 1.0;

  static NodeFeatureScale fit(const std::vector<const Cdfg*>& graphs);
  Json to_json() const;
  static NodeFeatureScale from_json(const Json& doc, const std::string& path);
};

std::size_t node_feature_dim(const std::array<std::uint32_t, 4>& vocab_sizes);

/// n x (sum(vocab_sizes) + 4): four one-hot segments then four scaled numerics.
Matrix encode_node_features(const Cdfg& g, const NodeFeatureScale& scale = {});

/// Edge indices grouped per node: incoming[v] holds edges with dst == v,
/// outgoing[v] edges with src == v, each in edge-list order.
struct EdgeViews {
  std::vector<std::vector<std::uint32_t>> incoming;
  std::vector<std::vector<std::uint32_t>> outgoing;
};

EdgeViews split_edges_by_direction(const Cdfg& g);

Json export_graph_json(const Cdfg& g);
std::string export_graph(const Cdfg& g);
Cdfg import_graph_json(const Json& doc);
Cdfg import_graph(const std::string& text);

}  // namespace mpmdse
