#include <doctest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "mpmdse/pareto.hpp"

using namespace mpmdse;

namespace {

std::vector<Objectives> random_front(Rng& rng, std::size_t n) {
  std::vector<Objectives> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({1.0 + 99.0 * rng.uniform(), 0.01 + rng.uniform()});
  return out;
}

struct Stream {
  std::vector<ArchiveEntry> points;
};

/// Insert stream over the gemm space; objectives are a fixed function of the
/// configuration on a coarse grid so ties and repeats occur.
Stream random_stream(std::uint64_t seed, std::size_t n) {
  const auto space = fixtures::gemm_space();
  Rng rng(seed);
  std::map<DesignConfiguration, Objectives> table;
  Stream s;
  for (std::size_t i = 0; i < n; ++i) {
    const auto cfg = config_at(space, rng.index(space_size(space)));
    auto it = table.find(cfg);
    if (it == table.end()) {
      it = table.emplace(cfg, Objectives{double(1 + rng.index(30)), double(1 + rng.index(30)), double(rng.index(4))})
               .first;
    }
    s.points.push_back({cfg, it->second});
  }
  return s;
}

bool same_set(const std::vector<ArchiveEntry>& a, const std::vector<ArchiveEntry>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].config != b[i].config || a[i].objectives != b[i].objectives) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("dominance") {
  CHECK(dominates({1, 2}, {2, 3}));
  CHECK_FALSE(dominates({2, 3}, {1, 2}));
  CHECK_FALSE(dominates({1, 3}, {3, 1}));
  CHECK_FALSE(dominates({3, 1}, {1, 3}));
  CHECK_FALSE(dominates({2, 2}, {2, 2}));
  CHECK(dominates({2, 2}, {2, 3}));
  CHECK_THROWS_AS(dominates({1, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("archive insertion") {
  const auto space = fixtures::gemm_space();
  ParetoArchive archive;
  const auto c0 = config_at(space, 0), c1 = config_at(space, 1), c2 = config_at(space, 2), c3 = config_at(space, 3);
  CHECK(archive.insert(c0, {10, 10}));
  CHECK_FALSE(archive.insert(c1, {11, 12}));
  CHECK(archive.size() == 1);
  CHECK_FALSE(archive.insert(c0, {1, 1}));
  CHECK(archive.insert(c2, {5, 20}));
  CHECK(archive.insert(c3, {10, 10}));
  CHECK(archive.size() == 3);
  CHECK(archive.insert(c1, {6, 4}));
  REQUIRE(archive.size() == 2);
  CHECK(archive.entries()[0].config == c1);
  CHECK(archive.entries()[1].config == c2);
}

TEST_CASE("archive equals the brute-force filter") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto stream = random_stream(seed, 500);
    ParetoArchive archive;
    for (const auto& p : stream.points) archive.insert(p.config, p.objectives);
    CHECK(same_set(archive.entries(), brute_force_front(stream.points)));
    for (const auto& a : archive.entries()) {
      for (const auto& b : archive.entries()) CHECK_FALSE(dominates(a.objectives, b.objectives));
    }

    auto shuffled = stream.points;
    Rng rng(seed + 1000);
    rng.shuffle(shuffled);
    ParetoArchive other;
    for (const auto& p : shuffled) other.insert(p.config, p.objectives);
    CHECK(same_set(other.entries(), archive.entries()));
  }
}

TEST_CASE("reference front") {
  SUBCASE("single configuration") {
    auto model = fixtures::small_model();
    const DesignSpace one({fixtures::directive("k.unroll", PragmaKind::unroll, "k", {"2"})});
    const auto front = reference_front(model, one);
    REQUIRE(front.size() == 1);
    CHECK(front.entries()[0].config == one.first());
  }
  SUBCASE("toy space matches a hand filter") {
    const auto model = fixtures::small_model();
    const auto space = fixtures::small_space();
    std::vector<ArchiveEntry> feasible;
    for (const auto& cfg : enumerate(space, 24)) {
      const auto m = evaluate(model, space, cfg);
      if (m.feasible) feasible.push_back({cfg, objectives_of(m, model.capacities)});
    }
    std::vector<ArchiveEntry> expected;
    for (const auto& a : feasible) {
      bool dominated = false;
      for (const auto& b : feasible) {
        dominated |= b.objectives[0] <= a.objectives[0] && b.objectives[1] <= a.objectives[1] &&
                     (b.objectives[0] < a.objectives[0] || b.objectives[1] < a.objectives[1]);
      }
      if (!dominated) expected.push_back(a);
    }
    std::sort(expected.begin(), expected.end(), [](const auto& x, const auto& y) { return x.config < y.config; });
    const auto front = reference_front(model, space);
    CHECK(same_set(front.entries(), expected));
    CHECK(front.size() >= 2);
    for (const auto& a : front.entries()) {
      for (const auto& b : front.entries()) CHECK_FALSE(dominates(a.objectives, b.objectives));
    }
  }
  SUBCASE("oversized spaces are refused") {
    CHECK_THROWS_AS(reference_front(fixtures::gemm_model(), fixtures::gemm_space(), 1000), ValidationError);
  }
  SUBCASE("five-objective mode") {
    const auto front = reference_front(fixtures::small_model(), fixtures::small_space(), 100, ObjectiveMode::all_five);
    REQUIRE_FALSE(front.empty());
    CHECK(front.entries()[0].objectives.size() == 5);
  }
}

TEST_CASE("ADRS") {
  CHECK(adrs({{100, 10}}, {{110, 10}}) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(std::abs(adrs({{100, 10}}, {{110, 10}}) - 0.1) <= 1e-12);
  CHECK(std::abs(adrs({{100, 10}, {50, 20}}, {{100, 10}}) - 0.5) <= 1e-12);
  CHECK(adrs_distance({0, 10}, {0.5, 10}) == doctest::Approx(0.5));
  CHECK(adrs_distance({10, 10}, {5, 5}) == 0.0);
  CHECK_THROWS_AS(adrs({}, {{1, 1}}), ValidationError);
  CHECK_THROWS_AS(adrs({{1, 1}}, {}), ValidationError);

  const auto report = adrs_report({{100, 10}, {50, 20}}, {{100, 10}});
  CHECK(report.reference_size == 2);
  CHECK(report.approx_size == 1);
  REQUIRE(report.distances.size() == 2);
  CHECK(report.distances[1] == doctest::Approx(1.0));
  CHECK(report.to_json().at("adrs").get<double>() == doctest::Approx(0.5));

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto gamma = random_front(rng, 1 + rng.index(10));
    CHECK(adrs(gamma, gamma) == 0.0);
    auto omega = random_front(rng, 1 + rng.index(10));
    const double before = adrs(gamma, omega);
    const auto extra = random_front(rng, 1 + rng.index(5));
    omega.insert(omega.end(), extra.begin(), extra.end());
    CHECK(adrs(gamma, omega) <= before);
    auto superset = omega;
    superset.insert(superset.end(), gamma.begin(), gamma.end());
    CHECK(adrs(gamma, superset) == 0.0);
  }
}

TEST_CASE("front files") {
  const auto front = reference_front(fixtures::small_model(), fixtures::small_space());
  const auto csv = front_csv(front.entries());
  CHECK(csv.rfind("config,", 0) == 0);
  const auto back = parse_front_csv(csv, "mem");
  CHECK(same_set(back, front.entries()));
  CHECK(front_csv(back) == csv);
  CHECK_THROWS_AS(parse_front_csv("config,a\n1.2,notanumber\n", "mem"), ValidationError);
}
