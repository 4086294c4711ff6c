#include "mpmdse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace mpmdse::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

Eigen::Index broadcast_dim(Eigen::Index x, Eigen::Index y, const char* op, const Matrix& a, const Matrix& b) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  shape_error(op, a, b);
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

/// Sums `g` down to (rows x cols) along broadcast axes.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix r = g;
  if (rows == 1 && r.rows() != 1) r = r.colwise().sum().eval();
  if (cols == 1 && r.cols() != 1) r = r.rowwise().sum().eval();
  return r;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw Error("operands belong to different tapes");
  return *a.tape;
}

template <typename Fwd, typename Dfdx>
Var unary(Var a, Fwd fwd, Dfdx dfdx) {
  Tape& t = *a.tape;
  Matrix out = fwd(a.value());
  return t.push(std::move(out), {a}, [a, dfdx](Tape& tp, const Matrix& y, const Matrix& g) {
    tp.accumulate(a, dfdx(tp.value(a), y, g));
  });
}

}  // namespace

// ---------------------------------------------------------------- ParamStore

Parameter& ParamStore::add(const std::string& name, Matrix init) {
  if (params_.contains(name)) throw Error("duplicate parameter '" + name + "'");
  Parameter p;
  p.name = name;
  p.grad = Matrix::Zero(init.rows(), init.cols());
  p.first_moment = Matrix::Zero(init.rows(), init.cols());
  p.second_moment = Matrix::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.setZero();
}

std::map<std::string, Matrix> ParamStore::snapshot() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, p] : params_) out.emplace(name, p.value);
  return out;
}

void ParamStore::restore(const std::map<std::string, Matrix>& values) {
  for (const auto& [name, v] : values) {
    auto& p = get(name);
    if (p.value.rows() != v.rows() || p.value.cols() != v.cols()) {
      throw ShapeError("restore '" + name + "': " + shape_str(p.value) + " vs " + shape_str(v));
    }
    p.value = v;
  }
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [_, p] : store.params()) {
    p.first_moment = cfg.beta1 * p.first_moment + (1.0 - cfg.beta1) * p.grad;
    p.second_moment = cfg.beta2 * p.second_moment + (1.0 - cfg.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= cfg.lr * (p.first_moment.array() / c1) /
                       ((p.second_moment.array() / c2).sqrt() + cfg.eps);
    p.grad.setZero();
  }
}

// ---------------------------------------------------------------------- Tape

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> parents, Backward backward) {
  if (check_finite_ && !value.allFinite()) {
    throw Error("non-finite value produced at tape node " + std::to_string(nodes_.size()));
  }
  Node n;
  n.value = std::move(value);
  for (const auto& p : parents) {
    if (p.tape != this) throw Error("operand belongs to a different tape");
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Matrix Tape::grad(Var v) const {
  const auto& n = nodes_.at(v.id);
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  auto& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw ShapeError("gradient shape " + shape_str(g) + " does not match value " + shape_str(n.value));
  }
  if (n.has_grad) {
    n.grad += g;
  } else {
    n.grad = g;
    n.has_grad = true;
  }
}

void Tape::backward(Var loss) {
  auto& root = nodes_.at(loss.id);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(root.value));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  root.has_grad = true;
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.value, n.grad);
    if (n.param) n.param->grad += n.grad;
  }
}

// ------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  const auto r = broadcast_dim(A.rows(), B.rows(), "add", A, B);
  const auto c = broadcast_dim(A.cols(), B.cols(), "add", A, B);
  Matrix out = expand(A, r, c) + expand(B, r, c);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    tp.accumulate(b, reduce_to(g, b.rows(), b.cols()));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  const auto r = broadcast_dim(A.rows(), B.rows(), "sub", A, B);
  const auto c = broadcast_dim(A.cols(), B.cols(), "sub", A, B);
  Matrix out = expand(A, r, c) - expand(B, r, c);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    tp.accumulate(b, reduce_to(-g, b.rows(), b.cols()));
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  const auto r = broadcast_dim(A.rows(), B.rows(), "mul", A, B);
  const auto c = broadcast_dim(A.cols(), B.cols(), "mul", A, B);
  Matrix out = expand(A, r, c).cwiseProduct(expand(B, r, c));
  return t.push(std::move(out), {a, b}, [a, b, r, c](Tape& tp, const Matrix&, const Matrix& g) {
    const auto& A = tp.value(a);
    const auto& B = tp.value(b);
    if (tp.requires_grad(a)) tp.accumulate(a, reduce_to(g.cwiseProduct(expand(B, r, c)), A.rows(), A.cols()));
    if (tp.requires_grad(b)) tp.accumulate(b, reduce_to(g.cwiseProduct(expand(A, r, c)), B.rows(), B.cols()));
  });
}

Var div(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  const auto r = broadcast_dim(A.rows(), B.rows(), "div", A, B);
  const auto c = broadcast_dim(A.cols(), B.cols(), "div", A, B);
  Matrix out = expand(A, r, c).cwiseQuotient(expand(B, r, c));
  return t.push(std::move(out), {a, b}, [a, b, r, c](Tape& tp, const Matrix& y, const Matrix& g) {
    const auto& A = tp.value(a);
    const Matrix Bx = expand(tp.value(b), r, c);
    if (tp.requires_grad(a)) tp.accumulate(a, reduce_to(g.cwiseQuotient(Bx), A.rows(), A.cols()));
    if (tp.requires_grad(b)) {
      tp.accumulate(b, reduce_to(-g.cwiseProduct(y).cwiseQuotient(Bx), tp.value(b).rows(), tp.value(b).cols()));
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](const Matrix& x) -> Matrix { return x * s; },
               [s](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g * s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](const Matrix& x) -> Matrix { return (x.array() + s).matrix(); },
               [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g; });
}

Var neg(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------- structure

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  Matrix out(A.rows(), B.cols());
  out.noalias() = A * B;
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(a)) {
      Matrix ga(g.rows(), tp.value(b).rows());
      ga.noalias() = g * tp.value(b).transpose();
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(b)) {
      Matrix gb(tp.value(a).cols(), g.cols());
      gb.noalias() = tp.value(a).transpose() * g;
      tp.accumulate(b, gb);
    }
  });
}

Var transpose(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.transpose(); },
               [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g.transpose(); });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  const auto& A = a.value();
  if (rows * cols != A.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(A) + " as (" + std::to_string(rows) + "x" +
                     std::to_string(cols) + ")");
  }
  const auto r0 = A.rows(), c0 = A.cols();
  return unary(
      a, [&](const Matrix& x) -> Matrix { return Eigen::Map<const Matrix>(x.data(), rows, cols); },
      [r0, c0](const Matrix&, const Matrix&, const Matrix& g) -> Matrix {
        return Eigen::Map<const Matrix>(g.data(), r0, c0);
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& t = *parts[0].tape;
  const auto rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), parts, [ps](Tape& tp, const Matrix&, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : ps) {
      const auto c = tp.value(p).cols();
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleCols(off, c));
      off += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = *parts[0].tape;
  const auto cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), parts, [ps](Tape& tp, const Matrix&, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : ps) {
      const auto r = tp.value(p).rows();
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleRows(off, r));
      off += r;
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  const auto& A = a.value();
  if (start < 0 || count < 0 || start + count > A.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of " + shape_str(A));
  }
  const auto cols = A.cols();
  return unary(
      a, [&](const Matrix& x) -> Matrix { return x.middleCols(start, count); },
      [start, count, cols](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        Matrix out = Matrix::Zero(x.rows(), cols);
        out.middleCols(start, count) = g;
        return out;
      });
}

Var row_gather(Var a, const Index& index) {
  const auto& A = a.value();
  for (auto i : index) {
    if (i >= A.rows()) throw ShapeError("row_gather: index " + std::to_string(i) + " out of " + shape_str(A));
  }
  Matrix out(static_cast<Eigen::Index>(index.size()), A.cols());
  for (std::size_t k = 0; k < index.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = A.row(index[k]);
  auto idx = std::make_shared<const Index>(index);
  return a.tape->push(std::move(out), {a}, [a, idx](Tape& tp, const Matrix&, const Matrix& g) {
    const auto& A = tp.value(a);
    Matrix ga = Matrix::Zero(A.rows(), A.cols());
    for (std::size_t k = 0; k < idx->size(); ++k) ga.row((*idx)[k]) += g.row(static_cast<Eigen::Index>(k));
    tp.accumulate(a, ga);
  });
}

Var index_add_scatter(Var src, const Index& index, Eigen::Index num_rows) {
  const auto& S = src.value();
  if (static_cast<Eigen::Index>(index.size()) != S.rows()) {
    throw ShapeError("index_add_scatter: " + std::to_string(index.size()) + " indices for " + shape_str(S));
  }
  Matrix out = Matrix::Zero(num_rows, S.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= num_rows) {
      throw ShapeError("index_add_scatter: index " + std::to_string(index[k]) + " >= " + std::to_string(num_rows));
    }
    out.row(index[k]) += S.row(static_cast<Eigen::Index>(k));
  }
  auto idx = std::make_shared<const Index>(index);
  return src.tape->push(std::move(out), {src}, [src, idx](Tape& tp, const Matrix&, const Matrix& g) {
    Matrix gs(static_cast<Eigen::Index>(idx->size()), g.cols());
    for (std::size_t k = 0; k < idx->size(); ++k) gs.row(static_cast<Eigen::Index>(k)) = g.row((*idx)[k]);
    tp.accumulate(src, gs);
  });
}

// ---------------------------------------------------------------- reductions

Var sum_rows(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.colwise().sum(); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix { return g.replicate(x.rows(), 1); });
}

Var mean_rows(Var a) {
  if (a.rows() == 0) throw ShapeError("mean_rows: no rows");
  return unary(a, [](const Matrix& x) -> Matrix { return x.colwise().mean(); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
                 return g.replicate(x.rows(), 1) / static_cast<double>(x.rows());
               });
}

Var row_sums(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.rowwise().sum(); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix { return g.replicate(1, x.cols()); });
}

Var sum_all(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return Matrix::Constant(1, 1, x.sum()); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
                 return Matrix::Constant(x.rows(), x.cols(), g(0, 0));
               });
}

Var mean_all(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean_all: empty tensor");
  return unary(a, [](const Matrix& x) -> Matrix { return Matrix::Constant(1, 1, x.mean()); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
                 return Matrix::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size()));
               });
}

// --------------------------------------------------------------- activations

Var relu(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.cwiseMax(0.0); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
                 return (x.array() > 0.0).select(g, 0.0);
               });
}

Var tanh(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.array().tanh().matrix(); },
               [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
                 return (g.array() * (1.0 - y.array().square())).matrix();
               });
}

Var sigmoid(Var a) {
  return unary(a,
               [](const Matrix& x) -> Matrix {
                 return x.unaryExpr([](double v) {
                   if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
                   const double e = std::exp(v);
                   return e / (1.0 + e);
                 });
               },
               [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
                 return (g.array() * y.array() * (1.0 - y.array())).matrix();
               });
}

Var softplus(Var a) {
  return unary(a,
               [](const Matrix& x) -> Matrix {
                 return x.unaryExpr([](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); });
               },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
                 return g.cwiseProduct(x.unaryExpr([](double v) {
                   if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
                   const double e = std::exp(v);
                   return e / (1.0 + e);
                 }));
               });
}

Var log(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.array().log().matrix(); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix { return g.cwiseQuotient(x); });
}

Var exp(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.array().exp().matrix(); },
               [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix { return g.cwiseProduct(y); });
}

Var sqrt(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.array().sqrt().matrix(); },
               [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
                 return (g.array() / (2.0 * y.array())).matrix();
               });
}

Var square(Var a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.array().square().matrix(); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
                 return (2.0 * g.array() * x.array()).matrix();
               });
}

Var clamp_min(Var a, double floor) {
  return unary(a, [floor](const Matrix& x) -> Matrix { return x.cwiseMax(floor); },
               [floor](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
                 return (x.array() > floor).select(g, 0.0);
               });
}

Var softmax(Var a, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  return unary(a,
               [](const Matrix& x) -> Matrix {
                 Matrix y = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
                 y.array().colwise() /= y.rowwise().sum().array();
                 return y;
               },
               [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
                 const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
                 return (y.array() * (g.colwise() - dot).array()).matrix();
               });
}

Var layer_norm_core(Var a, double eps) {
  const auto& A = a.value();
  if (A.cols() == 0) throw ShapeError("layer_norm: zero-width rows");
  const Eigen::VectorXd mean = A.rowwise().mean();
  Matrix centered = A.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(A.cols())) + eps).rsqrt();
  Matrix out = centered.array().colwise() * inv_std.array();
  auto inv = std::make_shared<const Eigen::VectorXd>(inv_std);
  return a.tape->push(std::move(out), {a}, [a, inv](Tape& tp, const Matrix& y, const Matrix& g) {
    const double d = static_cast<double>(g.cols());
    const Eigen::VectorXd gmean = g.rowwise().sum() / d;
    const Eigen::VectorXd gy = g.cwiseProduct(y).rowwise().sum() / d;
    Matrix dx = (g.colwise() - gmean) - y.array().colwise().operator*(gy.array()).matrix();
    dx.array().colwise() *= inv->array();
    tp.accumulate(a, dx);
  });
}

Var dropout(Var a, double p, Rng& rng, bool train) {
  if (!train || p <= 0.0) return a;
  if (p >= 1.0) throw ShapeError("dropout: p must be < 1");
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
  auto m = std::make_shared<const Matrix>(std::move(mask));
  return unary(a, [&](const Matrix& x) -> Matrix { return x.cwiseProduct(*m); },
               [m](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g.cwiseProduct(*m); });
}

// ------------------------------------------------------------ gradient check

FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& f, ParamStore& store,
                                   const FiniteDiffOptions& opts) {
  store.zero_grad();
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape;
    return f(tape).value()(0, 0);
  };
  FiniteDiffReport report;
  Rng rng(opts.seed);
  for (auto& [name, p] : store.params()) {
    const Matrix analytic = p.grad;
    FiniteDiffReport::Entry entry;
    entry.name = name;
    const auto n = static_cast<std::size_t>(p.value.size());
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > opts.max_coords) {
      rng.shuffle(coords);
      coords.resize(opts.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (auto c : coords) {
      double& x = p.value.data()[c];
      const double orig = x;
      x = orig + opts.h;
      const double fp = eval();
      x = orig - opts.h;
      const double fm = eval();
      x = orig;
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double a = analytic.data()[c];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      ++entry.coords_checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  store.zero_grad();
  return report;
}

// ---------------------------------------------------------------- checkpoint

namespace {
constexpr std::string_view kCheckpointMagic = "MPMCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParamStore& store, const Json& manifest) {
  std::vector<std::uint8_t> out;
  le::put_bytes(out, kCheckpointMagic);
  le::put_u32(out, kCheckpointVersion);
  const auto text = manifest.dump();
  le::put_u32(out, static_cast<std::uint32_t>(text.size()));
  le::put_bytes(out, text);
  le::put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, p] : store.params()) {
    le::put_u32(out, static_cast<std::uint32_t>(name.size()));
    le::put_bytes(out, name);
    le::put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    le::put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) le::put_f64(out, p.value.data()[i]);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const Json& manifest) {
  write_binary_file(path, serialize_checkpoint(store, manifest));
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& context) {
  le::Reader in(bytes, context);
  if (in.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw ValidationError(context, "not a checkpoint file");
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw ValidationError(context, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto mlen = in.u32();
  try {
    ck.manifest = Json::parse(in.bytes(mlen));
  } catch (const Json::parse_error& e) {
    throw ValidationError(context, std::string("bad manifest: ") + e.what());
  }
  const auto count = in.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name = in.bytes(in.u32());
    const auto rows = in.u32();
    const auto cols = in.u32();
    Matrix v(rows, cols);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = in.f64();
    ck.store.add(name, std::move(v));
  }
  if (!in.done()) throw ValidationError(context, "trailing bytes after checkpoint");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_binary_file(path), path.string());
}

}  // namespace mpmdse::ad
