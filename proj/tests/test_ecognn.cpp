#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"
#include "golden.hpp"
#include "mpmdse/ecognn.hpp"
#include "oracles.hpp"

using namespace mpmdse;
using namespace mpmdse::ecognn;
using oracles::make_graph;
using oracles::random_graph;
using oracles::random_matrix;

namespace {

EcognnConfig small_config(std::size_t in_dim, std::size_t layers = 2) {
  EcognnConfig c;
  c.in_dim = in_dim;
  c.hidden = 8;
  c.layers = layers;
  c.action_hidden = 6;
  c.temp_hidden = 4;
  return c;
}

Matrix random_distribution(Eigen::Index n, Rng& rng) {
  Matrix a = random_matrix(n, kNumStates, rng, 0.01, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) a.row(i) /= a.row(i).sum();
  return a;
}

Matrix one_hot(int state) {
  Matrix m = Matrix::Zero(1, kNumStates);
  m(0, state) = 1.0;
  return m;
}

Matrix linear_ref(const ParamStore& store, const nn::Linear& l, const Matrix& x) {
  Matrix y = x * store.get(l.weight_name()).value;
  y.rowwise() += store.get(l.bias_name()).value.row(0);
  return y;
}

}  // namespace

TEST_CASE("pre_norm") {
  Rng init(1);
  ParamStore store;
  Ecognn enc(store, "g", small_config(4), init);

  SUBCASE("constant row maps to the shift") {
    Rng rng(2);
    store.get(enc.norm(0).shift_name()).value = random_matrix(1, 8, rng);
    Tape t;
    Var out = enc.pre_norm(t, store, 0, t.constant(Matrix::Constant(2, 8, 3.25)));
    for (Eigen::Index i = 0; i < 2; ++i) {
      CHECK((out.value().row(i) - store.get(enc.norm(0).shift_name()).value.row(0)).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("unit parameters give zero mean and unit variance") {
    Rng rng(3);
    Tape t;
    Var out = enc.pre_norm(t, store, 0, t.constant(random_matrix(5, 8, rng, -4.0, 9.0)));
    for (Eigen::Index i = 0; i < 5; ++i) {
      const auto row = out.value().row(i).array();
      CHECK(std::abs(row.mean()) <= 1e-12);
      CHECK(std::abs((row - row.mean()).square().mean() - 1.0) <= 1e-3);
    }
  }
  SUBCASE("matches brute-force normalization") {
    Rng rng(4);
    auto& scale = store.get(enc.norm(1).scale_name()).value;
    auto& shift = store.get(enc.norm(1).shift_name()).value;
    scale = random_matrix(1, 8, rng);
    shift = random_matrix(1, 8, rng);
    const Matrix x = random_matrix(4, 8, rng);
    Tape t;
    Var out = enc.pre_norm(t, store, 1, t.constant(x));
    for (Eigen::Index i = 0; i < 4; ++i) {
      double mean = 0.0;
      for (Eigen::Index j = 0; j < 8; ++j) mean += x(i, j);
      mean /= 8.0;
      double var = 0.0;
      for (Eigen::Index j = 0; j < 8; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
      var /= 8.0;
      for (Eigen::Index j = 0; j < 8; ++j) {
        const double expected = (x(i, j) - mean) / std::sqrt(var + 1e-5) * scale(0, j) + shift(0, j);
        CHECK(out.value()(i, j) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("zero-width encoders are rejected") {
  Rng init(1);
  ParamStore store;
  auto cfg = small_config(4);
  cfg.hidden = 0;
  CHECK_THROWS_AS(Ecognn(store, "g", cfg, init), ValidationError);
  cfg = small_config(4);
  cfg.layers = 0;
  CHECK_THROWS_AS(Ecognn(store, "h", cfg, init), ValidationError);
}

TEST_CASE("gumbel softmax") {
  Tape t;
  SUBCASE("uniform logits without noise") {
    Var y = gumbel_softmax(t.constant(Matrix::Zero(3, 5)), t.constant(Matrix::Ones(3, 1)), Matrix());
    for (Eigen::Index i = 0; i < y.value().size(); ++i) CHECK(y.value().data()[i] == doctest::Approx(0.2));
  }
  SUBCASE("low temperature picks the perturbed argmax") {
    Rng rng(21);
    for (int draw = 0; draw < 100; ++draw) {
      const Matrix logits = random_matrix(1, 5, rng, -2.0, 2.0);
      const Matrix noise = gumbel_noise(1, 5, rng);
      Var y = gumbel_softmax(t.constant(logits), t.constant(Matrix::Constant(1, 1, 0.01)), noise);
      Eigen::Index want, got;
      (logits + noise).row(0).maxCoeff(&want);
      y.value().row(0).maxCoeff(&got);
      CHECK(want == got);
      CHECK(std::abs(y.value().sum() - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("sampled actions are distributions") {
  Rng init(5);
  ParamStore store;
  Ecognn enc(store, "g", small_config(6), init);
  Rng rng(6);
  const auto g = random_graph(7, 5, 6, rng);
  for (auto mode : {Mode::eval, Mode::train}) {
    Tape t;
    EncodeTrace trace;
    enc.encode(t, store, g, {.mode = mode, .seed = 3}, &trace);
    REQUIRE(trace.actions.size() == 2);
    for (const auto& a : trace.actions) {
      CHECK(a.minCoeff() >= 0.0);
      CHECK(a.maxCoeff() <= 1.0);
      for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) <= 1e-9);
    }
    for (const auto& tau : trace.temperature) CHECK(tau.minCoeff() >= 0.1);
  }
}

TEST_CASE("edge weights") {
  Tape t;
  const Index src{0, 1, 2, 3, 1};
  const Index dst{1, 2, 0, 1, 3};

  SUBCASE("isolated node carries nothing") {
    Matrix a = Matrix::Zero(4, 5);
    a.col(kStandard).setOnes();
    a.row(1) = one_hot(kIsolate);
    const auto w = derive_edge_weights(t.constant(a), src, dst);
    for (std::size_t e = 0; e < src.size(); ++e) {
      const bool touches = src[e] == 1 || dst[e] == 1;
      if (touches) {
        CHECK(w.w_in.value()(e, 0) == 0.0);
        CHECK(w.w_out.value()(e, 0) == 0.0);
      } else {
        CHECK(w.w_in.value()(e, 0) == 1.0);
      }
    }
  }
  SUBCASE("broadcaster into listener") {
    Matrix a(2, 5);
    a.row(0) = one_hot(kBroadcast);
    a.row(1) = one_hot(kListenIn);
    const auto w = derive_edge_weights(t.constant(a), {0}, {1});
    CHECK(w.w_in.value()(0, 0) == 1.0);
    CHECK(w.w_out.value()(0, 0) == 0.0);
  }
  SUBCASE("random distribution matches hand products") {
    Rng rng(7);
    const Matrix a = random_distribution(4, rng);
    const auto w = derive_edge_weights(t.constant(a), src, dst);
    auto bc = [&](int v) { return a(v, kStandard) + a(v, kBroadcast); };
    auto li = [&](int v) { return a(v, kStandard) + a(v, kListenIn); };
    auto lo = [&](int v) { return a(v, kStandard) + a(v, kListenOut); };
    for (std::size_t e = 0; e < src.size(); ++e) {
      const int u = src[e], v = dst[e];
      CHECK(w.w_in.value()(e, 0) == doctest::Approx(bc(u) * li(v)).epsilon(1e-15));
      CHECK(w.w_out.value()(e, 0) == doctest::Approx(bc(v) * lo(u)).epsilon(1e-15));
      CHECK(w.w_in.value()(e, 0) >= 0.0);
      CHECK(w.w_in.value()(e, 0) <= 1.0);
      CHECK(w.w_out.value()(e, 0) >= 0.0);
      CHECK(w.w_out.value()(e, 0) <= 1.0);
    }
  }
}

TEST_CASE("env_update") {
  Rng init(8);
  ParamStore store;
  Ecognn enc(store, "g", small_config(3, 1), init);
  Rng rng(9);

  SUBCASE("zero weights give zero messages") {
    auto g = random_graph(5, 3, 3, rng);
    const Matrix h = random_matrix(5, 8, rng);
    Tape t;
    const auto e = static_cast<Eigen::Index>(g.num_edges());
    EdgeWeights w{t.constant(Matrix::Zero(e, 1)), t.constant(Matrix::Zero(e, 1))};
    Var out = enc.env_update(t, store, 0, t.constant(h), w, g);
    Matrix cat = Matrix::Zero(5, 24);
    cat.leftCols(8) = h;
    const Matrix expected = linear_ref(store, enc.env(0), cat).cwiseMax(0.0);
    CHECK((out.value() - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("single unit edge copies the neighbour") {
    auto g = make_graph(2, {{0, 1}}, 3, rng);
    const Matrix h = random_matrix(2, 8, rng);
    Tape t;
    EdgeWeights w{t.constant(Matrix::Ones(1, 1)), t.constant(Matrix::Zero(1, 1))};
    const Matrix m_in = weighted_mean_messages(t.constant(h), w.w_in, g.src, g.dst, 2, 1e-9).value();
    CHECK(m_in.row(1) == h.row(0));
    CHECK(m_in.row(0).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("random graph matches a brute-force message loop") {
    auto g = random_graph(6, 4, 3, rng);
    const Matrix h = random_matrix(6, 8, rng);
    const auto e = static_cast<Eigen::Index>(g.num_edges());
    const Matrix win = random_matrix(e, 1, rng, 0.0, 1.0);
    const Matrix wout = random_matrix(e, 1, rng, 0.0, 1.0);
    Tape t;
    Var out = enc.env_update(t, store, 0, t.constant(h), {t.constant(win), t.constant(wout)}, g);

    Matrix cat = Matrix::Zero(6, 24);
    cat.leftCols(8) = h;
    for (int v = 0; v < 6; ++v) {
      Eigen::RowVectorXd num_in = Eigen::RowVectorXd::Zero(8), num_out = Eigen::RowVectorXd::Zero(8);
      double den_in = 0.0, den_out = 0.0;
      for (Eigen::Index k = 0; k < e; ++k) {
        if (g.dst[k] == static_cast<std::uint32_t>(v)) {
          num_in += win(k, 0) * h.row(g.src[k]);
          den_in += win(k, 0);
        }
        if (g.src[k] == static_cast<std::uint32_t>(v)) {
          num_out += wout(k, 0) * h.row(g.dst[k]);
          den_out += wout(k, 0);
        }
      }
      cat.block(v, 8, 1, 8) = num_in / std::max(den_in, 1e-9);
      cat.block(v, 16, 1, 8) = num_out / std::max(den_out, 1e-9);
    }
    const Matrix expected = linear_ref(store, enc.env(0), cat).cwiseMax(0.0);
    CHECK((out.value() - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("readout") {
  Rng init(10);
  ParamStore store;
  Ecognn enc(store, "g", small_config(3), init);
  Rng rng(11);

  SUBCASE("saturated gate on a single node") {
    ParamStore sat = store;
    sat.get(enc.readout_gate().weight_name()).value.setZero();
    sat.get(enc.readout_gate().bias_name()).value.setConstant(50.0);
    GraphBatch g = make_graph(1, {}, 3, rng);
    const Matrix h = random_matrix(1, 8, rng);
    Tape t;
    Var out = enc.readout(t, sat, t.constant(h), g);
    const Matrix expected = linear_ref(sat, enc.readout_embed(), h).array().tanh().matrix();
    CHECK((out.value() - expected).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("brute-force sum and permutation invariance") {
    GraphBatch g = make_graph(8, {}, 3, rng);
    const Matrix h = random_matrix(8, 8, rng);
    Tape t;
    const Matrix out = enc.readout(t, store, t.constant(h), g).value();
    const Matrix gate = linear_ref(store, enc.readout_gate(), h);
    const Matrix emb = linear_ref(store, enc.readout_embed(), h);
    Matrix expected = Matrix::Zero(1, 8);
    for (int v = 0; v < 8; ++v) {
      for (int j = 0; j < 8; ++j) expected(0, j) += 1.0 / (1.0 + std::exp(-gate(v, j))) * std::tanh(emb(v, j));
    }
    CHECK((out - expected).cwiseAbs().maxCoeff() <= 1e-12);

    std::vector<int> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle(12);
    for (int trial = 0; trial < 5; ++trial) {
      shuffle.shuffle(perm);
      Matrix hp(8, 8);
      for (int v = 0; v < 8; ++v) hp.row(v) = h.row(perm[v]);
      Tape tp;
      CHECK((enc.readout(tp, store, tp.constant(hp), g).value() - out).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("empty graph is rejected") {
    GraphBatch g;
    Tape t;
    CHECK_THROWS_AS(enc.readout(t, store, t.constant(Matrix::Zero(0, 8)), g), ValidationError);
    CHECK_THROWS_AS(enc.encode(t, store, g, {}), ValidationError);
  }
}

TEST_CASE("encode") {
  Rng init(13);
  ParamStore store;
  Rng rng(14);

  SUBCASE("one layer on one node") {
    Ecognn enc(store, "one", small_config(3, 1), init);
    GraphBatch g = make_graph(1, {}, 3, rng);
    Tape t;
    const Matrix out = enc.encode(t, store, g, {}).value();
    Tape r;
    Var h = enc.pre_norm(r, store, 0, enc.input_projection(r, store, r.constant(g.features)));
    Matrix cat = Matrix::Zero(1, 24);
    cat.leftCols(8) = h.value();
    const Matrix hf = linear_ref(store, enc.env(0), cat).cwiseMax(0.0);
    const Matrix expected = enc.readout(r, store, r.constant(hf), g).value();
    CHECK((out - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("eval mode is deterministic and train mode is seeded") {
    Ecognn enc(store, "det", small_config(6), init);
    const auto g = random_graph(9, 6, 6, rng);
    Tape a, b, c, d;
    CHECK(enc.encode(a, store, g, {}).value() == enc.encode(b, store, g, {}).value());
    const Matrix t1 = enc.encode(c, store, g, {.mode = Mode::train, .seed = 5}).value();
    const Matrix t2 = enc.encode(d, store, g, {.mode = Mode::train, .seed = 5}).value();
    CHECK(t1 == t2);
    Tape e;
    CHECK(enc.encode(e, store, g, {.mode = Mode::train, .seed = 6}).value() != t1);
  }
}

TEST_CASE("train-mode encode matches the stored vector") {
  Rng init(42);
  ParamStore store;
  const auto kernel = fixtures::gemm_kernel();
  const auto graph = build_cdfg(kernel);
  const auto batch = GraphBatch::from_graph(graph);
  Ecognn enc(store, "gold", small_config(static_cast<std::size_t>(batch.features.cols())), init);
  Tape t;
  const Matrix out = enc.encode(t, store, batch, {.mode = Mode::train, .seed = 5}).value();
  CHECK(golden::matrix_deviation("ecognn_train_seed5.txt", out) <= 1e-12);
}

TEST_CASE("all-standard clamp is a plain mean GNN") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng init(seed);
    ParamStore store;
    Rng rng(seed + 50);
    const auto g = random_graph(10, 8, 5, rng);
    Ecognn enc(store, "s", small_config(5, 3), init);
    Tape t;
    const Matrix out = enc.encode_nodes(t, store, g, {.forced_actions = one_hot(kStandard)}).value();
    const Matrix ref = oracles::mean_gnn_reference(enc, store, g);
    CHECK((out - ref).cwiseAbs().maxCoeff() <= 1e-9);
  }
  Rng init(3);
  ParamStore store;
  const auto graph = build_cdfg(fixtures::gemm_kernel());
  const auto g = GraphBatch::from_graph(graph);
  Ecognn enc(store, "s", small_config(static_cast<std::size_t>(g.features.cols()), 4), init);
  Tape t;
  const Matrix out = enc.encode_nodes(t, store, g, {.forced_actions = one_hot(kStandard)}).value();
  CHECK((out - oracles::mean_gnn_reference(enc, store, g)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("all-isolate clamp has no cross-node influence") {
  Rng init(15);
  ParamStore store;
  Rng rng(16);
  const auto g = random_graph(8, 10, 5, rng);
  Ecognn enc(store, "i", small_config(5, 3), init);
  Tape t;
  const Matrix base = enc.encode_nodes(t, store, g, {.forced_actions = one_hot(kIsolate)}).value();
  for (Eigen::Index v = 0; v < 8; ++v) {
    auto perturbed = g;
    perturbed.features.row(v) += random_matrix(1, 5, rng, 1.0, 3.0);
    Tape tp;
    const Matrix out = enc.encode_nodes(tp, store, perturbed, {.forced_actions = one_hot(kIsolate)}).value();
    for (Eigen::Index u = 0; u < 8; ++u) {
      if (u == v) continue;
      CHECK(out.row(u) == base.row(u));
    }
    CHECK(out.row(v) != base.row(v));
  }
}

TEST_CASE("full encode passes finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng init(seed + 200);
    ParamStore store;
    Rng rng(seed + 300);
    auto g1 = random_graph(5, 3, 4, rng);
    auto g2 = random_graph(4, 2, 4, rng);
    GraphBatch g = g1;
    g.features.conservativeResize(9, 4);
    g.features.bottomRows(4) = g2.features;
    for (std::size_t e = 0; e < g2.num_edges(); ++e) {
      g.src.push_back(g2.src[e] + 5);
      g.dst.push_back(g2.dst[e] + 5);
    }
    g.node_graph.insert(g.node_graph.end(), 4, 1);
    g.num_graphs = 2;
    Ecognn enc(store, "fd", small_config(4, 2), init);
    oracles::jitter(store, rng, 0.1);
    const Matrix weights = random_matrix(2, 8, rng);
    const auto report = ad::finite_diff_check(
        [&](Tape& t) { return ad::sum_all(ad::mul(enc.encode(t, store, g, {}), t.constant(weights))); }, store,
        {.h = 1e-6, .seed = seed});
    CHECK_MESSAGE(report.passes(1e-3), "seed " << seed << " error " << report.max_rel_error);
  }
}
