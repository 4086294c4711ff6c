#include "mpmdse/ecognn.hpp"

#include <cmath>

namespace mpmdse::ecognn {

GraphBatch GraphBatch::from_graphs(const std::vector<const Cdfg*>& graphs, const NodeFeatureScale& scale) {
  GraphBatch b;
  b.num_graphs = graphs.size();
  std::vector<Matrix> feats;
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = *graphs[gi];
    if (g.num_nodes() == 0) throw ValidationError("graphs[" + std::to_string(gi) + "]", "empty graph");
    const auto offset = static_cast<std::uint32_t>(rows);
    feats.push_back(encode_node_features(g, scale));
    if (cols >= 0 && feats.back().cols() != cols) {
      throw ShapeError("graph batch mixes node feature widths " + std::to_string(cols) + " and " +
                       std::to_string(feats.back().cols()));
    }
    cols = feats.back().cols();
    rows += feats.back().rows();
    for (const auto& e : g.edges) {
      b.src.push_back(offset + e.src);
      b.dst.push_back(offset + e.dst);
    }
    b.node_graph.insert(b.node_graph.end(), g.num_nodes(), static_cast<std::uint32_t>(gi));
  }
  b.features.resize(rows, std::max<Eigen::Index>(cols, 0));
  Eigen::Index off = 0;
  for (const auto& f : feats) {
    b.features.middleRows(off, f.rows()) = f;
    off += f.rows();
  }
  return b;
}

GraphBatch GraphBatch::from_graph(const Cdfg& g, const NodeFeatureScale& scale) {
  return from_graphs({&g}, scale);
}

Json EcognnConfig::to_json() const {
  return Json{{"in_dim", in_dim},         {"hidden", hidden},           {"layers", layers},
              {"action_hidden", action_hidden}, {"temp_hidden", temp_hidden}, {"tau_min", tau_min},
              {"message_eps", message_eps}};
}

EcognnConfig EcognnConfig::from_json(const Json& doc) {
  EcognnConfig c;
  c.in_dim = doc.at("in_dim").get<std::size_t>();
  c.hidden = doc.at("hidden").get<std::size_t>();
  c.layers = doc.at("layers").get<std::size_t>();
  c.action_hidden = doc.at("action_hidden").get<std::size_t>();
  c.temp_hidden = doc.at("temp_hidden").get<std::size_t>();
  c.tau_min = doc.at("tau_min").get<double>();
  c.message_eps = doc.at("message_eps").get<double>();
  return c;
}

Matrix gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix g(rows, cols);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = -std::log(-std::log(rng.open_uniform()));
  return g;
}

Var gumbel_softmax(Var logits, Var tau, const Matrix& noise) {
  Tape& t = *logits.tape;
  Var perturbed = logits;
  if (noise.size() != 0) perturbed = ad::add(logits, t.constant(noise));
  return ad::softmax(ad::div(perturbed, tau), 1);
}

EdgeWeights derive_edge_weights(Var actions, const Index& src, const Index& dst) {
  Tape& t = *actions.tape;
  if (actions.cols() != kNumStates) {
    throw ShapeError("action distribution must have 5 columns, got " + std::to_string(actions.cols()));
  }
  // Columns: broadcast, listen_in, listen_out.
  Matrix select = Matrix::Zero(kNumStates, 3);
  select(kStandard, 0) = select(kBroadcast, 0) = 1.0;
  select(kStandard, 1) = select(kListenIn, 1) = 1.0;
  select(kStandard, 2) = select(kListenOut, 2) = 1.0;
  Var roles = ad::matmul(actions, t.constant(std::move(select)));
  Var broadcast = ad::slice_cols(roles, 0, 1);
  Var listen_in = ad::slice_cols(roles, 1, 1);
  Var listen_out = ad::slice_cols(roles, 2, 1);
  EdgeWeights w;
  w.w_in = ad::row_gather(broadcast, src) * ad::row_gather(listen_in, dst);
  w.w_out = ad::row_gather(broadcast, dst) * ad::row_gather(listen_out, src);
  return w;
}

Var weighted_mean_messages(Var h, Var weights, const Index& from, const Index& to, Eigen::Index num_nodes,
                           double eps) {
  if (from.empty()) return h.tape->constant(Matrix::Zero(num_nodes, h.cols()));
  Var num = ad::index_add_scatter(ad::row_gather(h, from) * weights, to, num_nodes);
  Var den = ad::index_add_scatter(weights, to, num_nodes);
  return num / ad::clamp_min(den, eps);
}

Ecognn::Ecognn(ParamStore& store, const std::string& name, const EcognnConfig& cfg, Rng& init) : cfg_(cfg) {
  if (cfg.layers == 0) throw ValidationError("layers", "at least one ECoGNN layer is required");
  if (cfg.hidden == 0 || cfg.in_dim == 0) throw ValidationError("hidden", "dimensions must be positive");
  if (cfg.tau_min <= 0.0) throw ValidationError("tau_min", "temperature floor must be positive");
  const auto d = cfg.hidden;
  input_ = nn::Linear(store, name + ".input", cfg.in_dim, d, init);
  for (std::size_t k = 0; k < cfg.layers; ++k) {
    const auto p = name + ".layer" + std::to_string(k);
    norms_.emplace_back(store, p + ".norm", d);
    action_.emplace_back(store, p + ".action", std::vector<std::size_t>{3 * d, cfg.action_hidden, kNumStates}, init);
    temp_.emplace_back(store, p + ".temp", std::vector<std::size_t>{d, cfg.temp_hidden, 1}, init);
    env_.emplace_back(store, p + ".env", 3 * d, d, init);
  }
  gate_ = nn::Linear(store, name + ".readout.gate", d, d, init);
  embed_ = nn::Linear(store, name + ".readout.embed", d, d, init);
}

Var Ecognn::input_projection(Tape& tape, ParamStore& store, Var x) const { return input_(tape, store, x); }

Var Ecognn::pre_norm(Tape& tape, ParamStore& store, std::size_t layer, Var h) const {
  return norms_.at(layer)(tape, store, h);
}

Var Ecognn::action_logits(Tape& tape, ParamStore& store, std::size_t layer, Var h_norm,
                          const GraphBatch& g) const {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Var in_sum = g.num_edges() ? ad::index_add_scatter(ad::row_gather(h_norm, g.src), g.dst, n)
                             : tape.constant(Matrix::Zero(n, h_norm.cols()));
  Var out_sum = g.num_edges() ? ad::index_add_scatter(ad::row_gather(h_norm, g.dst), g.src, n)
                              : tape.constant(Matrix::Zero(n, h_norm.cols()));
  return action_.at(layer)(tape, store, ad::concat_cols({h_norm, in_sum, out_sum}));
}

Var Ecognn::temperature(Tape& tape, ParamStore& store, std::size_t layer, Var h_norm) const {
  return ad::add_scalar(ad::softplus(temp_.at(layer)(tape, store, h_norm)), cfg_.tau_min);
}

Var Ecognn::sample_actions(Tape& tape, ParamStore& store, std::size_t layer, Var h_norm, const GraphBatch& g,
                           const EncodeOptions& opts, EncodeTrace* trace) const {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Var actions;
  Var tau;
  if (opts.forced_actions) {
    Matrix forced = *opts.forced_actions;
    if (forced.cols() != kNumStates || (forced.rows() != 1 && forced.rows() != n)) {
      throw ShapeError("forced actions must be 1x5 or Nx5");
    }
    if (forced.rows() == 1) forced = forced.replicate(n, 1).eval();
    actions = tape.constant(std::move(forced));
  } else {
    Var logits = action_logits(tape, store, layer, h_norm, g);
    tau = temperature(tape, store, layer, h_norm);
    Matrix noise;
    if (opts.fixed_noise) {
      noise = opts.fixed_noise->at(layer);
      if (noise.rows() != n || noise.cols() != kNumStates) throw ShapeError("fixed noise must be Nx5");
    } else if (opts.mode == Mode::train) {
      Rng rng(mix_seed(opts.seed, layer));
      noise = gumbel_noise(n, kNumStates, rng);
    }
    actions = gumbel_softmax(logits, tau, noise);
  }
  if (trace) {
    trace->actions.push_back(actions.value());
    trace->temperature.push_back(tau.tape ? tau.value() : Matrix());
  }
  return actions;
}

Var Ecognn::env_update(Tape& tape, ParamStore& store, std::size_t layer, Var h_norm, const EdgeWeights& w,
                       const GraphBatch& g) const {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Var m_in, m_out;
  if (g.num_edges() == 0) {
    m_in = m_out = tape.constant(Matrix::Zero(n, h_norm.cols()));
  } else {
    m_in = weighted_mean_messages(h_norm, w.w_in, g.src, g.dst, n, cfg_.message_eps);
    m_out = weighted_mean_messages(h_norm, w.w_out, g.dst, g.src, n, cfg_.message_eps);
  }
  return ad::relu(env_.at(layer)(tape, store, ad::concat_cols({h_norm, m_in, m_out})));
}

Var Ecognn::readout(Tape& tape, ParamStore& store, Var h_final, const GraphBatch& g) const {
  if (g.num_nodes() == 0 || g.num_graphs == 0) throw ValidationError("graph", "readout of an empty graph");
  Var gated = ad::sigmoid(gate_(tape, store, h_final)) * ad::tanh(embed_(tape, store, h_final));
  return ad::index_add_scatter(gated, g.node_graph, static_cast<Eigen::Index>(g.num_graphs));
}

Var Ecognn::encode_nodes(Tape& tape, ParamStore& store, const GraphBatch& g, const EncodeOptions& opts,
                         EncodeTrace* trace) const {
  if (g.num_nodes() == 0) throw ValidationError("graph", "cannot encode an empty graph");
  Var h = input_projection(tape, store, tape.constant(g.features));
  for (std::size_t k = 0; k < cfg_.layers; ++k) {
    Var h_norm = pre_norm(tape, store, k, h);
    Var actions = sample_actions(tape, store, k, h_norm, g, opts, trace);
    EdgeWeights w;
    if (g.num_edges()) w = derive_edge_weights(actions, g.src, g.dst);
    h = env_update(tape, store, k, h_norm, w, g);
  }
  if (trace) trace->node_states = h.value();
  return h;
}

Var Ecognn::encode(Tape& tape, ParamStore& store, const GraphBatch& g, const EncodeOptions& opts,
                   EncodeTrace* trace) const {
  return readout(tape, store, encode_nodes(tape, store, g, opts, trace), g);
}

}  // namespace mpmdse::ecognn
