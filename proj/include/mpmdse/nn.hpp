#pragma once

#include <string>
#include <vector>

#include "mpmdse/tensor.hpp"

/// Small parameterized building blocks over the autodiff tape. Each block
/// stores parameter names; values live in a ParamStore so a checkpoint can be
/// swapped in without rebuilding the model.
namespace mpmdse::nn {

using ad::ParamStore;
using ad::Tape;
using ad::Var;

/// Glorot-uniform weight, zero bias.
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& init);

  Var operator()(Tape& tape, ParamStore& store, Var x) const;
  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }
  const std::string& weight_name() const { return weight_; }
  const std::string& bias_name() const { return bias_; }

 private:
  std::string weight_;
  std::string bias_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

/// Linear layers with ReLU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, const std::vector<std::size_t>& widths, Rng& init);

  Var operator()(Tape& tape, ParamStore& store, Var x) const;
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
};

/// Row-wise LayerNorm with learnable scale (init 1) and shift (init 0).
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, double eps = 1e-5);

  Var operator()(Tape& tape, ParamStore& store, Var x) const;
  const std::string& scale_name() const { return scale_; }
  const std::string& shift_name() const { return shift_; }

 private:
  std::string scale_;
  std::string shift_;
  std::size_t dim_ = 0;
  double eps_ = 1e-5;
};

}  // namespace mpmdse::nn
