#include "mpmdse/nn.hpp"

#include <cmath>

namespace mpmdse::nn {

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& init)
    : weight_(name + ".weight"), bias_(name + ".bias"), in_(in), out_(out) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * init.uniform() - 1.0) * a;
  store.add(weight_, std::move(w));
  store.add(bias_, Matrix::Zero(1, static_cast<Eigen::Index>(out)));
}

Var Linear::operator()(Tape& tape, ParamStore& store, Var x) const {
  if (static_cast<std::size_t>(x.cols()) != in_) {
    throw ShapeError(weight_ + ": expected input width " + std::to_string(in_) + ", got " +
                     std::to_string(x.cols()));
  }
  return ad::matmul(x, tape.param(store, weight_)) + tape.param(store, bias_);
}

Mlp::Mlp(ParamStore& store, const std::string& name, const std::vector<std::size_t>& widths, Rng& init) {
  if (widths.size() < 2) throw Error(name + ": an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1], init);
  }
}

Var Mlp::operator()(Tape& tape, ParamStore& store, Var x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](tape, store, x);
    if (i + 1 < layers_.size()) x = ad::relu(x);
  }
  return x;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, double eps)
    : scale_(name + ".scale"), shift_(name + ".shift"), dim_(dim), eps_(eps) {
  if (dim == 0) throw ShapeError(name + ": LayerNorm over zero-width rows");
  store.add(scale_, Matrix::Ones(1, static_cast<Eigen::Index>(dim)));
  store.add(shift_, Matrix::Zero(1, static_cast<Eigen::Index>(dim)));
}

Var LayerNorm::operator()(Tape& tape, ParamStore& store, Var x) const {
  if (x.cols() == 0 || static_cast<std::size_t>(x.cols()) != dim_) {
    throw ShapeError(scale_ + ": expected width " + std::to_string(dim_) + ", got " + std::to_string(x.cols()));
  }
  return ad::layer_norm_core(x, eps_) * tape.param(store, scale_) + tape.param(store, shift_);
}

}  // namespace mpmdse::nn
