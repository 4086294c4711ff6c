#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mpmdse/common.hpp"

/// Reverse-mode automatic differentiation over dense row-major matrices.
///
/// Every value is a 2-D matrix (vectors are 1 x d rows). A Tape records the
/// forward computation in creation order, which is a topological order, so
/// backward is a single reverse sweep. Parameters live in a ParamStore and
/// enter a tape as leaves whose gradients are accumulated into the store.
namespace mpmdse::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;
};

class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }
  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;

  std::map<std::string, Parameter>& params() { return params_; }
  const std::map<std::string, Parameter>& params() const { return params_; }

  void zero_grad();
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  /// Parameter values only (no optimizer state).
  std::map<std::string, Matrix> snapshot() const;
  void restore(const std::map<std::string, Matrix>& values);

 private:
  std::map<std::string, Parameter> params_;
  std::uint64_t step_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every parameter, then clears gradients.
void adam_step(ParamStore& store, const AdamConfig& cfg = {});

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  /// Receives the node's own value and its accumulated gradient.
  using Backward = std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a stored parameter; backward adds into `p.grad`.
  Var param(Parameter& p);
  Var param(ParamStore& store, const std::string& name) { return param(store.get(name)); }

  /// Records a derived value. `backward` may be empty when no parent needs a gradient.
  Var push(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var push(Matrix value, std::span<const Var> parents, Backward backward);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() root with respect to `v` (zeros if unreachable).
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Accumulates `g` into the gradient slot of `v`. For use by backward rules.
  void accumulate(Var v, const Matrix& g);

  /// Reverse sweep from a 1 x 1 loss. Throws ShapeError for any other shape.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  /// When set, every recorded value is checked for NaN/Inf. On by default in debug builds.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
#ifdef NDEBUG
  bool check_finite_ = false;
#else
  bool check_finite_ = true;
#endif
};

using Index = std::vector<std::uint32_t>;

// Elementwise binary ops broadcast a 1-row or 1-column operand (or 1 x 1).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

Var matmul(Var a, Var b);
Var transpose(Var a);
/// Row-major reinterpretation to (rows x cols).
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
inline Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::span<const Var>(parts.begin(), parts.size())); }
inline Var concat_rows(std::initializer_list<Var> parts) { return concat_rows(std::span<const Var>(parts.begin(), parts.size())); }
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);

/// out[i] = a[index[i]]
Var row_gather(Var a, const Index& index);
/// out = zeros(num_rows, cols); out[index[i]] += src[i]
Var index_add_scatter(Var src, const Index& index, Eigen::Index num_rows);

Var mean_rows(Var a);  ///< 1 x cols, mean over rows
Var sum_rows(Var a);   ///< 1 x cols, sum over rows
Var row_sums(Var a);   ///< rows x 1, sum across each row
Var sum_all(Var a);
Var mean_all(Var a);

Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var log(Var a);
Var exp(Var a);
Var sqrt(Var a);
Var square(Var a);
/// max(a, floor) elementwise; gradient flows only where a > floor.
Var clamp_min(Var a, double floor);
/// axis 1: each row sums to one; axis 0: each column sums to one.
Var softmax(Var a, int axis = 1);
/// Per-row standardization (x - mean) / sqrt(var + eps), no affine part.
Var layer_norm_core(Var a, double eps = 1e-5);
/// Inverted dropout with a mask drawn from `rng`; identity when `train` is false or p == 0.
Var dropout(Var a, double p, Rng& rng, bool train);

/// Result of comparing analytic and central-difference gradients.
struct FiniteDiffReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t coords_checked = 0;
  };
  std::vector<Entry> entries;
  double max_rel_error = 0.0;

  bool passes(double tol) const { return max_rel_error <= tol; }
};

struct FiniteDiffOptions {
  double h = 1e-5;
  /// Coordinates sampled per parameter (all when the parameter is smaller).
  std::size_t max_coords = 64;
  std::uint64_t seed = 0;
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
};

/// `f` must build a scalar loss from parameters in `store` on the given tape,
/// deterministically.
FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& f, ParamStore& store,
                                   const FiniteDiffOptions& opts = {});

/// Checkpoint: magic `MPMCKPT1`, u32 version, u32-length-prefixed manifest
/// document, u32 tensor count, then {u32 name length, name, u32 rows,
/// u32 cols, little-endian f64 values} per tensor.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const Json& manifest);
std::vector<std::uint8_t> serialize_checkpoint(const ParamStore& store, const Json& manifest);

struct Checkpoint {
  ParamStore store;
  Json manifest;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& context);

}  // namespace mpmdse::ad
