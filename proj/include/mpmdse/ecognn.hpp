#pragma once

#include <array>
#include <optional>
#include <vector>

#include "mpmdse/cdfg.hpp"
#include "mpmdse/nn.hpp"

/// Directed cooperative graph encoder. Each node picks a soft communication
/// state per layer from {S, L_in, L_out, B, I}; the states decide how much
/// each directed edge carries before a mean-aggregation update.
namespace mpmdse::ecognn {

using ad::Index;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

/// Column order of every action distribution.
enum State : int { kStandard = 0, kListenIn = 1, kListenOut = 2, kBroadcast = 3, kIsolate = 4 };
inline constexpr int kNumStates = 5;

enum class Mode { train, eval };

/// Disjoint union of graphs with global node ids.
struct GraphBatch {
  Matrix features;      ///< N x d_node
  Index src;            ///< per edge
  Index dst;            ///< per edge
  Index node_graph;     ///< per node, owning graph
  std::size_t num_graphs = 0;

  std::size_t num_nodes() const { return node_graph.size(); }
  std::size_t num_edges() const { return src.size(); }

  static GraphBatch from_graphs(const std::vector<const Cdfg*>& graphs, const NodeFeatureScale& scale);
  static GraphBatch from_graph(const Cdfg& g, const NodeFeatureScale& scale = {});
};

struct EcognnConfig {
  std::size_t in_dim = 0;
  std::size_t hidden = 128;
  std::size_t layers = 4;
  std::size_t action_hidden = 32;
  std::size_t temp_hidden = 16;
  double tau_min = 0.1;
  double message_eps = 1e-9;

  Json to_json() const;
  static EcognnConfig from_json(const Json& doc);
};

struct EdgeWeights {
  Var w_in;   ///< E x 1, messages along src -> dst
  Var w_out;  ///< E x 1, messages along dst -> src
};

/// Standard Gumbel(0, 1) draws.
Matrix gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// softmax((logits + noise) / tau) row-wise; `tau` is N x 1.
Var gumbel_softmax(Var logits, Var tau, const Matrix& noise);

/// broadcast(v) = a_S + a_B, listen_in(v) = a_S + a_Lin, listen_out(v) = a_S + a_Lout;
/// w_in(u->v) = broadcast(u) listen_in(v); w_out(u->v) = broadcast(v) listen_out(u).
EdgeWeights derive_edge_weights(Var actions, const Index& src, const Index& dst);

/// m(v) = sum_e w_e h[from_e] / max(sum_e w_e, eps) over edges with to_e == v.
Var weighted_mean_messages(Var h, Var weights, const Index& from, const Index& to,
                           Eigen::Index num_nodes, double eps);

struct EncodeOptions {
  Mode mode = Mode::eval;
  std::uint64_t seed = 0;
  /// Replaces sampled distributions: one row (broadcast to every node) or N rows.
  std::optional<Matrix> forced_actions;
  /// Per-layer N x 5 noise used instead of fresh draws (train path with frozen noise).
  std::optional<std::vector<Matrix>> fixed_noise;
};

/// Intermediate values of one encode, for inspection in tests and tools.
struct EncodeTrace {
  std::vector<Matrix> actions;      ///< per layer, N x 5
  std::vector<Matrix> temperature;  ///< per layer, N x 1
  Matrix node_states;               ///< h_f, N x hidden
};

class Ecognn {
 public:
  Ecognn() = default;
  Ecognn(ParamStore& store, const std::string& name, const EcognnConfig& cfg, Rng& init);

  const EcognnConfig& config() const { return cfg_; }

  Var input_projection(Tape& tape, ParamStore& store, Var x) const;
  Var pre_norm(Tape& tape, ParamStore& store, std::size_t layer, Var h) const;
  Var action_logits(Tape& tape, ParamStore& store, std::size_t layer, Var h_norm, const GraphBatch& g) const;
  /// softplus(temp_net(h')) + tau_min, N x 1.
  Var temperature(Tape& tape, ParamStore& store, std::size_t layer, Var h_norm) const;
  Var sample_actions(Tape& tape, ParamStore& store, std::size_t layer, Var h_norm, const GraphBatch& g,
                     const EncodeOptions& opts, EncodeTrace* trace = nullptr) const;
  Var env_update(Tape& tape, ParamStore& store, std::size_t layer, Var h_norm, const EdgeWeights& w,
                 const GraphBatch& g) const;
  /// sum over nodes of sigmoid(gate(h)) * tanh(embed(h)), per graph: num_graphs x hidden.
  Var readout(Tape& tape, ParamStore& store, Var h_final, const GraphBatch& g) const;

  /// Node states after the last layer (h_f).
  Var encode_nodes(Tape& tape, ParamStore& store, const GraphBatch& g, const EncodeOptions& opts,
                   EncodeTrace* trace = nullptr) const;
  /// Graph embeddings h_G, num_graphs x hidden.
  Var encode(Tape& tape, ParamStore& store, const GraphBatch& g, const EncodeOptions& opts,
             EncodeTrace* trace = nullptr) const;

  // Parameter blocks, exposed for reference implementations in tests.
  const nn::Linear& input() const { return input_; }
  const nn::LayerNorm& norm(std::size_t layer) const { return norms_.at(layer); }
  const nn::Linear& env(std::size_t layer) const { return env_.at(layer); }
  const nn::Linear& readout_gate() const { return gate_; }
  const nn::Linear& readout_embed() const { return embed_; }

 private:
  EcognnConfig cfg_;
  nn::Linear input_;
  std::vector<nn::LayerNorm> norms_;
  std::vector<nn::Mlp> action_;
  std::vector<nn::Mlp> temp_;
  std::vector<nn::Linear> env_;
  nn::Linear gate_;
  nn::Linear embed_;
};

}  // namespace mpmdse::ecognn
