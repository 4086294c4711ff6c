#include <doctest.h>

#include <algorithm>

#include "fixtures.hpp"

using namespace mpmdse;
using fixtures::directive;

namespace {

KernelDescription one_loop() {
  KernelDescription k;
  k.kernel_id = "one";
  k.source_template = "for (;;) {\n__PRAGMA(L0)__\n}\n";
  k.loops = {{"L0", 8, {1, 1, 0, 0}, std::nullopt, {{0, 1}}}};
  return k;
}

KernelDescription two_nested() {
  KernelDescription k;
  k.kernel_id = "nest";
  k.source_template = "__PRAGMA(L0.u)__ __PRAGMA(L1.u)__ __PRAGMA(L1.p)__";
  k.loops = {{"L0", 4, {1, 1, 1, 0}, std::nullopt, {}}, {"L1", 8, {1, 0, 1, 1}, "L0", {}}};
  return k;
}

Cdfg random_graph(Rng& rng, std::size_t n, std::size_t e) {
  Cdfg g;
  g.kernel_id = "r" + std::to_string(rng.index(1000));
  for (std::size_t i = 0; i < n; ++i) {
    g.nodes.push_back({std::uint32_t(rng.index(4)), std::uint32_t(rng.index(9)), std::uint32_t(rng.index(2)),
                       std::uint32_t(rng.index(4)), std::int64_t(rng.index(5)), std::int64_t(rng.index(100)),
                       std::int64_t(rng.index(4)), std::int64_t(rng.index(100))});
  }
  for (std::uint32_t i = 1; i < n; ++i) {
    const auto other = std::uint32_t(rng.index(i));
    if (rng.uniform() < 0.5) g.edges.push_back({other, i, Flow::control, 0});
    else g.edges.push_back({i, other, Flow::data, 0});
  }
  while (g.edges.size() < e) {
    const auto s = std::uint32_t(rng.index(n));
    const auto d = std::uint32_t(rng.index(n));
    if (s == d) continue;
    g.edges.push_back({s, d, Flow(rng.index(4)), std::uint32_t(rng.index(6))});
  }
  return g;
}

}  // namespace

TEST_CASE("one loop with two operations") {
  const auto g = build_cdfg(one_loop());
  CHECK(g.num_nodes() == 3);
  const auto control = std::count_if(g.edges.begin(), g.edges.end(), [](const Edge& e) { return e.flow == Flow::control; });
  CHECK(control == 2);
  CHECK(g.num_edges() == 3);  // plus the declared operand link
  CHECK(g.nodes[0].node_type == node_code::kBlock);
  CHECK(g.nodes[1].instruction_type == node_code::kMul);
  CHECK(g.nodes[2].instruction_type == node_code::kAdd);
}

TEST_CASE("malformed descriptions are rejected with the offending ids") {
  KernelDescription empty;
  empty.kernel_id = "e";
  CHECK_THROWS_WITH_AS(build_cdfg(empty), doctest::Contains("no loops"), ValidationError);

  auto cyclic = two_nested();
  cyclic.loops[0].parent = "L1";
  CHECK_THROWS_WITH_AS(build_cdfg(cyclic), doctest::Contains("L0"), ValidationError);

  auto dangling = one_loop();
  dangling.source_template += "__PRAGMA(L9)__";
  CHECK_THROWS_WITH_AS(build_cdfg(dangling), doctest::Contains("L9"), ValidationError);
}

TEST_CASE("two nested loops follow the construction rule") {
  const auto g = build_cdfg(two_nested());
  // 2 blocks + 3 + 3 instructions; 1 nesting edge + 6 block-to-instruction edges.
  CHECK(g.num_nodes() == 8);
  CHECK(g.num_edges() == 7);
  CHECK(g.edges[0] == Edge{0, 1, Flow::control, 0});
  CHECK(g.nodes[1].block_type == 1);
  for (std::uint32_t i = 2; i < 5; ++i) CHECK(g.edges[i - 1] == Edge{0, i, Flow::control, i - 2});
  for (std::uint32_t i = 5; i < 8; ++i) CHECK(g.edges[i - 1] == Edge{1, i, Flow::control, i - 5});
  CHECK(build_cdfg(two_nested()) == g);
}

TEST_CASE("pragma insertion adds one node and edge per enabled directive") {
  const auto k = two_nested();
  const auto g = build_cdfg(k);
  DesignSpace s({directive("L0.u", PragmaKind::unroll, "L0", {"1", "2", "4", "8"}),
                 directive("L1.u", PragmaKind::unroll, "L1", {"1", "2"}),
                 directive("L1.p", PragmaKind::pipeline, "L1", {"off", "on", "flatten"})});
  CHECK(insert_pragma_nodes(g, s, s.disabled()) == g);

  const auto one = insert_pragma_nodes(g, s, DesignConfiguration{{2, 0, 0}});
  CHECK(one.num_nodes() == g.num_nodes() + 1);
  CHECK(one.num_edges() == g.num_edges() + 1);
  CHECK(one.edges.back() == Edge{8, 0, Flow::pragma, 2});
  CHECK(one.nodes.back().node_type == node_code::kPragma);
  CHECK(one.nodes.back().instruction_type == node_code::kPragmaBase + std::uint32_t(PragmaKind::unroll));

  const auto three = insert_pragma_nodes(g, s, DesignConfiguration{{1, 1, 2}});
  CHECK(three.num_nodes() == g.num_nodes() + 3);
  CHECK(three.num_edges() == g.num_edges() + 3);
  CHECK(three.edges[g.num_edges() + 1] == Edge{9, 1, Flow::pragma, 1});
  CHECK(three.edges[g.num_edges() + 2] == Edge{10, 1, Flow::pragma, 2});
  CHECK(is_weakly_connected(three));
  CHECK(g.num_nodes() == 8);

  DesignSpace stray({directive("X.u", PragmaKind::unroll, "X", {"1", "2"})});
  CHECK_THROWS_WITH_AS(insert_pragma_nodes(g, stray, DesignConfiguration{{1}}), doctest::Contains("X.u"),
                       ValidationError);
}

TEST_CASE("node features are one-hot categories then scaled numerics") {
  Cdfg g;
  g.kernel_id = "f";
  g.vocab_sizes = {5, 3, 2, 2};
  g.nodes = {{2, 0, 1, 0, 0, 0, 0, 0}, {0, 1, 0, 1, 2, 50, 1, 20}, {1, 2, 0, 0, 4, 100, 2, 40}};
  g.edges = {{0, 1, Flow::control, 0}, {1, 2, Flow::data, 0}};
  NodeFeatureScale scale{4.0, 100.0, 2.0, 40.0};
  const Matrix x = encode_node_features(g, scale);
  REQUIRE(x.rows() == 3);
  REQUIRE(x.cols() == 16);
  CHECK(node_feature_dim(g.vocab_sizes) == 16);

  Vector row0(16);
  row0 << 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0;
  CHECK(x.row(0) == row0);
  Vector row1(16);
  row1 << 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 1, 0.5, 0.5, 0.5, 0.5;
  CHECK(x.row(1) == row1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) CHECK(x.row(r).head(12).sum() == 4.0);

  g.nodes[2].node_type = 5;
  CHECK_THROWS_WITH_AS(encode_node_features(g, scale), doctest::Contains("nodes[2]"), ValidationError);
}

TEST_CASE("edge views split by direction") {
  Cdfg chain;
  chain.kernel_id = "c";
  chain.nodes.resize(4);
  chain.edges = {{0, 1, Flow::data, 0}, {1, 2, Flow::data, 0}};
  const auto v = split_edges_by_direction(chain);
  CHECK(v.incoming[1] == std::vector<std::uint32_t>{0});
  CHECK(v.outgoing[1] == std::vector<std::uint32_t>{1});
  CHECK(v.incoming[3].empty());
  CHECK(v.outgoing[3].empty());

  Rng rng(11);
  const auto g = random_graph(rng, 10, 20);
  const auto views = split_edges_by_direction(g);
  std::size_t in_total = 0, out_total = 0;
  for (std::uint32_t n = 0; n < 10; ++n) {
    std::vector<std::uint32_t> in, out;
    for (std::uint32_t e = 0; e < g.edges.size(); ++e) {
      if (g.edges[e].dst == n) in.push_back(e);
      if (g.edges[e].src == n) out.push_back(e);
    }
    CHECK(views.incoming[n] == in);
    CHECK(views.outgoing[n] == out);
    in_total += in.size();
    out_total += out.size();
  }
  CHECK(in_total == g.num_edges());
  CHECK(out_total == g.num_edges());
}

TEST_CASE("graph interchange round-trips") {
  const auto g = insert_pragma_nodes(build_cdfg(fixtures::gemm_kernel()), fixtures::gemm_space(),
                                     DesignConfiguration{{1, 2, 0, 1, 2, 3}});
  const auto text = export_graph(g);
  CHECK(import_graph(text) == g);
  CHECK(export_graph(import_graph(text)) == text);

  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const auto r = random_graph(rng, 2 + rng.index(12), 13 + rng.index(20));
    CHECK(import_graph(export_graph(r)) == r);
  }

  auto doc = export_graph_json(g);
  doc.erase("vocab_sizes");
  CHECK_THROWS_WITH_AS(import_graph_json(doc), doctest::Contains("vocab_sizes"), ValidationError);
  auto bad = export_graph_json(g);
  bad["edges"][0]["dst"] = 999;
  CHECK_THROWS_WITH_AS(import_graph_json(bad), doctest::Contains("edges[0]"), ValidationError);
  auto self = export_graph_json(g);
  self["edges"][0]["dst"] = self["edges"][0]["src"];
  CHECK_THROWS_AS(import_graph_json(self), ValidationError);
}

TEST_CASE("kernel descriptions round-trip") {
  const auto k = fixtures::gemm_kernel();
  const auto back = KernelDescription::from_json(k.to_json());
  CHECK(to_document(back.to_json()) == to_document(k.to_json()));
  CHECK(build_cdfg(back) == build_cdfg(k));
}
