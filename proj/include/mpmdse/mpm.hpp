#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpmdse/dataset.hpp"
#include "mpmdse/ecognn.hpp"

/// Multimodal QoR predictor: graph embedding (query) attends over text
/// embedding tokens (keys/values), aligned, gated and fed to five heads.
namespace mpmdse::mpm {

using ad::ParamStore;
using ad::Tape;
using ad::Var;

enum class Variant { full, graph_only, text_only };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

struct MpmConfig {
  ecognn::EcognnConfig gnn;
  std::size_t text_dim = kDefaultTextDim;
  std::size_t heads = 4;
  std::size_t head_hidden = 64;
  Variant variant = Variant::full;

  Json to_json() const;
  static MpmConfig from_json(const Json& doc);
};

/// Ready-to-batch form of a sample: encoded node features and edge lists.
struct PreparedSample {
  Matrix features;
  ad::Index src;
  ad::Index dst;
  Matrix text;  ///< T x d_text
  TargetVector targets{};
};

PreparedSample prepare(const GraphTextSample& s, const NodeFeatureScale& scale);

struct Batch {
  ecognn::GraphBatch graphs;
  Matrix text;  ///< (B T) x d_text, rows grouped per sample
  std::size_t tokens = 1;
  Matrix targets;  ///< B x 5
};

/// All samples must share the token count.
Batch make_batch(const std::vector<const PreparedSample*>& samples);

struct ForwardTrace {
  Matrix graph_embedding;
  Matrix fused;
  Matrix gate;
};

class MpmModel {
 public:
  MpmModel() = default;
  MpmModel(ParamStore& store, const MpmConfig& cfg, std::uint64_t init_seed);

  const MpmConfig& config() const { return cfg_; }
  const ecognn::Ecognn& encoder() const { return gnn_; }

  /// head_w = softmax(Q_w K_w^T / sqrt(d_h)) V_w per sample over its `tokens`
  /// key rows; output Concat(heads) W^O + b^O. `h_g` is B x hidden,
  /// `h_s` is (B tokens) x d_text.
  Var mha_fuse(Tape& tape, ParamStore& store, Var h_g, Var h_s, std::size_t tokens) const;
  /// g = sigmoid(gate(concat(a, b))); g a + (1 - g) b.
  Var gated_combine(Tape& tape, ParamStore& store, Var a, Var b, Matrix* gate_out = nullptr) const;
  /// B x 5 normalized predictions (latency, lut, dsp, ff, bram).
  Var heads(Tape& tape, ParamStore& store, Var h) const;

  Var forward(Tape& tape, ParamStore& store, const Batch& batch, const ecognn::EncodeOptions& opts,
              ForwardTrace* trace = nullptr) const;

  /// Eval-mode predictions, one row per sample.
  Matrix predict(ParamStore& store, const std::vector<const PreparedSample*>& samples,
                 std::size_t batch_size = 64) const;

  // Parameter names of individual blocks for tests.
  const nn::Linear& query() const { return wq_; }
  const nn::Linear& key() const { return wk_; }
  const nn::Linear& value() const { return wv_; }
  const nn::Linear& output() const { return wo_; }
  const nn::Linear& gate() const { return gate_; }

 private:
  MpmConfig cfg_;
  ecognn::Ecognn gnn_;
  nn::Linear wq_, wk_, wv_, wo_;
  nn::Linear align_graph_, align_fused_, gate_;
  nn::Linear text_proj_;
  std::vector<nn::Mlp> heads_;
};

/// sum over targets of sqrt(mean over batch of squared error + 1e-12).
Var rmse_loss(Var pred, const Matrix& targets);

struct Metrics {
  TargetVector rmse{};
  double all = 0.0;  ///< sum of the per-target RMSEs
};

std::array<double, kNumTargets> rmse_per_target(const Matrix& pred, const Matrix& targets);
Metrics compute_metrics(const Matrix& pred, const Matrix& targets);
/// Sum of per-target values.
double aggregate(const TargetVector& per_target);
double rmse(const std::vector<double>& pred, const std::vector<double>& target);
/// Mean absolute percentage error in percent. Throws on a zero target.
double mape(const std::vector<double>& pred, const std::vector<double>& target);

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Stop once validation aggregate RMSE falls below this (0 disables).
  double stop_below = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  Metrics train;
  Metrics val;
};

struct TrainResult {
  std::map<std::string, Matrix> best;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::vector<EpochRecord> history;
};

/// Minibatch Adam on `rmse_loss`. After every epoch the validation set is
/// scored in eval mode and the parameters are kept when it improves. The
/// store is left holding the best parameters. Throws Error naming the epoch
/// on a non-finite loss.
TrainResult train(const MpmModel& model, ParamStore& store, const std::vector<const PreparedSample*>& train_set,
                  const std::vector<const PreparedSample*>& val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// CSV with columns epoch, train_loss, train_<target>..., val_<target>..., val_all.
std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace mpmdse::mpm
