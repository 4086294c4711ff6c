#include "mpmdse/mpm.hpp"

#include <cmath>
#include <sstream>

namespace mpmdse::mpm {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::graph_only: return "graph_only";
    case Variant::text_only: return "text_only";
  }
  return "full";
}

Variant parse_variant(std::string_view text) {
  if (text == "full") return Variant::full;
  if (text == "graph_only") return Variant::graph_only;
  if (text == "text_only") return Variant::text_only;
  throw ValidationError("variant", "unknown model variant '" + std::string(text) + "'");
}

Json MpmConfig::to_json() const {
  return Json{{"gnn", gnn.to_json()},
              {"text_dim", text_dim},
              {"heads", heads},
              {"head_hidden", head_hidden},
              {"variant", std::string(to_string(variant))}};
}

MpmConfig MpmConfig::from_json(const Json& doc) {
  MpmConfig c;
  c.gnn = ecognn::EcognnConfig::from_json(doc.at("gnn"));
  c.text_dim = doc.at("text_dim").get<std::size_t>();
  c.heads = doc.at("heads").get<std::size_t>();
  c.head_hidden = doc.at("head_hidden").get<std::size_t>();
  c.variant = parse_variant(doc.at("variant").get<std::string>());
  return c;
}

PreparedSample prepare(const GraphTextSample& s, const NodeFeatureScale& scale) {
  PreparedSample p;
  p.features = encode_node_features(s.graph, scale);
  for (const auto& e : s.graph.edges) {
    p.src.push_back(e.src);
    p.dst.push_back(e.dst);
  }
  p.text = s.text;
  p.targets = s.targets;
  return p;
}

Batch make_batch(const std::vector<const PreparedSample*>& samples) {
  if (samples.empty()) throw ValidationError("batch", "empty batch");
  Batch b;
  b.tokens = static_cast<std::size_t>(samples.front()->text.rows());
  const auto d_node = samples.front()->features.cols();
  const auto d_text = samples.front()->text.cols();
  Eigen::Index nodes = 0;
  for (const auto* s : samples) {
    if (static_cast<std::size_t>(s->text.rows()) != b.tokens || s->text.cols() != d_text) {
      throw ShapeError("batch mixes text shapes");
    }
    if (s->features.cols() != d_node) throw ShapeError("batch mixes node feature widths");
    nodes += s->features.rows();
  }
  auto& g = b.graphs;
  g.num_graphs = samples.size();
  g.features.resize(nodes, d_node);
  b.text.resize(static_cast<Eigen::Index>(samples.size() * b.tokens), d_text);
  b.targets.resize(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(kNumTargets));
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto* s = samples[i];
    const auto n = s->features.rows();
    g.features.middleRows(off, n) = s->features;
    for (std::size_t e = 0; e < s->src.size(); ++e) {
      g.src.push_back(static_cast<std::uint32_t>(off) + s->src[e]);
      g.dst.push_back(static_cast<std::uint32_t>(off) + s->dst[e]);
    }
    g.node_graph.insert(g.node_graph.end(), static_cast<std::size_t>(n), static_cast<std::uint32_t>(i));
    b.text.middleRows(static_cast<Eigen::Index>(i * b.tokens), static_cast<Eigen::Index>(b.tokens)) = s->text;
    for (std::size_t j = 0; j < kNumTargets; ++j) b.targets(static_cast<Eigen::Index>(i), j) = s->targets[j];
    off += n;
  }
  return b;
}

MpmModel::MpmModel(ParamStore& store, const MpmConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  const auto d = cfg.gnn.hidden;
  if (cfg.heads == 0 || d % cfg.heads != 0) {
    throw ValidationError("heads", "attention heads (" + std::to_string(cfg.heads) + ") must divide hidden (" +
                                       std::to_string(d) + ")");
  }
  if (cfg.text_dim == 0) throw ValidationError("text_dim", "must be positive");
  Rng init(init_seed);
  if (cfg.variant != Variant::text_only) gnn_ = ecognn::Ecognn(store, "gnn", cfg.gnn, init);
  if (cfg.variant == Variant::full) {
    wq_ = nn::Linear(store, "fuse.query", d, d, init);
    wk_ = nn::Linear(store, "fuse.key", cfg.text_dim, d, init);
    wv_ = nn::Linear(store, "fuse.value", cfg.text_dim, d, init);
    wo_ = nn::Linear(store, "fuse.output", d, d, init);
    align_graph_ = nn::Linear(store, "align.graph", d, d, init);
    align_fused_ = nn::Linear(store, "align.fused", d, d, init);
    gate_ = nn::Linear(store, "gate", 2 * d, d, init);
  }
  if (cfg.variant == Variant::text_only) text_proj_ = nn::Linear(store, "text.proj", cfg.text_dim, d, init);
  for (std::size_t j = 0; j < kNumTargets; ++j) {
    heads_.emplace_back(store, std::string("head.") + kTargetNames[j], std::vector<std::size_t>{d, cfg.head_hidden, 1},
                        init);
  }
}

Var MpmModel::mha_fuse(Tape& tape, ParamStore& store, Var h_g, Var h_s, std::size_t tokens) const {
  const auto batch = static_cast<std::size_t>(h_g.rows());
  if (tokens == 0 || static_cast<std::size_t>(h_s.rows()) != batch * tokens) {
    throw ShapeError("text rows " + std::to_string(h_s.rows()) + " do not match " + std::to_string(batch) + " x " +
                     std::to_string(tokens) + " tokens");
  }
  const auto d = static_cast<Eigen::Index>(cfg_.gnn.hidden);
  const auto dh = d / static_cast<Eigen::Index>(cfg_.heads);
  Var q = wq_(tape, store, h_g);
  Var k = wk_(tape, store, h_s);
  Var v = wv_(tape, store, h_s);
  ad::Index owner(batch * tokens);
  for (std::size_t i = 0; i < owner.size(); ++i) owner[i] = static_cast<std::uint32_t>(i / tokens);
  Var qk = ad::row_gather(q, owner) * k;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  for (std::size_t w = 0; w < cfg_.heads; ++w) {
    const auto start = static_cast<Eigen::Index>(w) * dh;
    Var scores = ad::row_sums(ad::slice_cols(qk, start, dh)) * inv;
    Var attn = ad::softmax(ad::reshape(scores, static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(tokens)), 1);
    attn = ad::reshape(attn, static_cast<Eigen::Index>(batch * tokens), 1);
    heads.push_back(ad::index_add_scatter(ad::slice_cols(v, start, dh) * attn, owner, static_cast<Eigen::Index>(batch)));
  }
  return wo_(tape, store, ad::concat_cols(heads));
}

Var MpmModel::gated_combine(Tape& tape, ParamStore& store, Var a, Var b, Matrix* gate_out) const {
  Var g = ad::sigmoid(gate_(tape, store, ad::concat_cols({a, b})));
  if (gate_out) *gate_out = g.value();
  return b + g * (a - b);
}

Var MpmModel::heads(Tape& tape, ParamStore& store, Var h) const {
  std::vector<Var> outs;
  for (const auto& head : heads_) outs.push_back(head(tape, store, h));
  return ad::concat_cols(outs);
}

Var MpmModel::forward(Tape& tape, ParamStore& store, const Batch& batch, const ecognn::EncodeOptions& opts,
                      ForwardTrace* trace) const {
  if (static_cast<std::size_t>(batch.text.cols()) != cfg_.text_dim) {
    throw ShapeError("text embedding width " + std::to_string(batch.text.cols()) + " != configured " +
                     std::to_string(cfg_.text_dim));
  }
  Var h_s = tape.constant(batch.text);
  if (cfg_.variant == Variant::text_only) {
    Var pooled = h_s;
    if (batch.tokens > 1) {
      ad::Index owner(static_cast<std::size_t>(batch.text.rows()));
      for (std::size_t i = 0; i < owner.size(); ++i) owner[i] = static_cast<std::uint32_t>(i / batch.tokens);
      pooled = ad::index_add_scatter(h_s, owner, static_cast<Eigen::Index>(batch.graphs.num_graphs)) *
               (1.0 / static_cast<double>(batch.tokens));
    }
    return heads(tape, store, ad::relu(text_proj_(tape, store, pooled)));
  }
  Var h_g = gnn_.encode(tape, store, batch.graphs, opts);
  if (trace) trace->graph_embedding = h_g.value();
  if (cfg_.variant == Variant::graph_only) return heads(tape, store, h_g);
  Var fused = mha_fuse(tape, store, h_g, h_s, batch.tokens);
  if (trace) trace->fused = fused.value();
  Var a = ad::relu(align_graph_(tape, store, h_g));
  Var b = ad::relu(align_fused_(tape, store, fused));
  return heads(tape, store, gated_combine(tape, store, a, b, trace ? &trace->gate : nullptr));
}

Matrix MpmModel::predict(ParamStore& store, const std::vector<const PreparedSample*>& samples,
                         std::size_t batch_size) const {
  Matrix out(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(kNumTargets));
  if (batch_size == 0) batch_size = 64;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto end = std::min(samples.size(), start + batch_size);
    const std::vector<const PreparedSample*> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                                   samples.begin() + static_cast<std::ptrdiff_t>(end));
    Tape tape;
    Var p = forward(tape, store, make_batch(chunk), {});
    out.middleRows(static_cast<Eigen::Index>(start), p.rows()) = p.value();
  }
  return out;
}

Var rmse_loss(Var pred, const Matrix& targets) {
  Tape& t = *pred.tape;
  if (pred.rows() != targets.rows() || pred.cols() != targets.cols()) {
    throw ShapeError("prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     " vs targets " + std::to_string(targets.rows()) + "x" + std::to_string(targets.cols()));
  }
  Var mse = ad::mean_rows(ad::square(pred - t.constant(targets)));
  return ad::sum_all(ad::sqrt(ad::add_scalar(mse, 1e-12)));
}

std::array<double, kNumTargets> rmse_per_target(const Matrix& pred, const Matrix& targets) {
  if (pred.rows() != targets.rows() || pred.cols() != static_cast<Eigen::Index>(kNumTargets) ||
      targets.cols() != static_cast<Eigen::Index>(kNumTargets) || pred.rows() == 0) {
    throw ShapeError("rmse needs equal non-empty n x 5 matrices");
  }
  std::array<double, kNumTargets> out{};
  for (std::size_t j = 0; j < kNumTargets; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    out[j] = std::sqrt((pred.col(c) - targets.col(c)).squaredNorm() / static_cast<double>(pred.rows()));
  }
  return out;
}

double aggregate(const TargetVector& per_target) {
  double s = 0.0;
  for (const auto v : per_target) s += v;
  return s;
}

Metrics compute_metrics(const Matrix& pred, const Matrix& targets) {
  Metrics m;
  m.rmse = rmse_per_target(pred, targets);
  m.all = aggregate(m.rmse);
  return m;
}

double rmse(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size() || pred.empty()) throw ShapeError("rmse needs equal non-empty inputs");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double mape(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size() || pred.empty()) throw ShapeError("mape needs equal non-empty inputs");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] == 0.0) throw ValidationError("targets[" + std::to_string(i) + "]", "MAPE undefined for a zero target");
    s += std::abs((pred[i] - target[i]) / target[i]);
  }
  return 100.0 * s / static_cast<double>(pred.size());
}

namespace {

Matrix stack_targets(const std::vector<const PreparedSample*>& samples) {
  Matrix t(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(kNumTargets));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < kNumTargets; ++j) t(static_cast<Eigen::Index>(i), j) = samples[i]->targets[j];
  }
  return t;
}

}  // namespace

TrainResult train(const MpmModel& model, ParamStore& store, const std::vector<const PreparedSample*>& train_set,
                  const std::vector<const PreparedSample*>& val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train_set.empty()) throw ValidationError("train", "empty training set");
  if (val_set.empty()) throw ValidationError("val", "empty validation set");
  if (cfg.batch == 0) throw ValidationError("batch", "batch size must be positive");
  if (cfg.epochs == 0) throw ValidationError("epochs", "must be positive");
  const ad::AdamConfig adam{cfg.lr};
  const Matrix val_targets = stack_targets(val_set);

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Matrix train_pred(static_cast<Eigen::Index>(train_set.size()), static_cast<Eigen::Index>(kNumTargets));
  Matrix train_targets(train_pred.rows(), train_pred.cols());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, epoch));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    Eigen::Index row = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const auto end = std::min(order.size(), start + cfg.batch);
      std::vector<const PreparedSample*> chunk;
      for (std::size_t i = start; i < end; ++i) chunk.push_back(train_set[order[i]]);
      const auto batch = make_batch(chunk);
      Tape tape;
      ecognn::EncodeOptions opts;
      opts.mode = ecognn::Mode::train;
      opts.seed = mix_seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL, store.step());
      Var pred = model.forward(tape, store, batch, opts);
      Var loss = rmse_loss(pred, batch.targets);
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) throw Error("training diverged at epoch " + std::to_string(epoch + 1));
      tape.backward(loss);
      ad::adam_step(store, adam);
      loss_sum += lv * static_cast<double>(chunk.size());
      train_pred.middleRows(row, pred.rows()) = pred.value();
      train_targets.middleRows(row, pred.rows()) = batch.targets;
      row += pred.rows();
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train = compute_metrics(train_pred, train_targets);
    rec.val = compute_metrics(model.predict(store, val_set, cfg.batch), val_targets);
    if (!std::isfinite(rec.val.all)) throw Error("training diverged at epoch " + std::to_string(epoch + 1));
    if (result.history.empty() || rec.val.all < result.best_val) {
      result.best_val = rec.val.all;
      result.best_epoch = rec.epoch;
      result.best = store.snapshot();
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (cfg.stop_below > 0.0 && rec.val.all < cfg.stop_below) break;
  }
  store.restore(result.best);
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss";
  for (const auto* n : kTargetNames) out << ",train_" << n;
  for (const auto* n : kTargetNames) out << ",val_" << n;
  out << ",val_all\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_loss;
    for (const auto v : r.train.rmse) out << ',' << v;
    for (const auto v : r.val.rmse) out << ',' << v;
    out << ',' << r.val.all << '\n';
  }
  return out.str();
}

}  // namespace mpmdse::mpm
