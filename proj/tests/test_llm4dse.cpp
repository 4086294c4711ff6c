#include <doctest.h>

#include "fixtures.hpp"
#include "golden.hpp"
#include "mpmdse/llm4dse.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

#include <httplib.h>

using namespace mpmdse;
using namespace mpmdse::dse;

namespace {

std::vector<ExampleSolution> toy_archive() {
  const auto model = fixtures::small_model();
  const auto space = fixtures::small_space();
  std::vector<ExampleSolution> out;
  for (std::uint64_t rank : {0u, 7u, 13u, 23u}) {
    const auto cfg = config_at(space, rank);
    const auto m = evaluate(model, space, cfg);
    out.push_back({cfg, m, max_utilization(m, model.capacities)});
  }
  return out;
}

std::vector<Objectives> gemm_reference() {
  static const auto ref = reference_front(fixtures::gemm_model(), fixtures::gemm_space()).objectives();
  return ref;
}

/// Answers every prompt with the same fixed text.
class FixedBackend final : public LlmBackend {
 public:
  explicit FixedBackend(std::string text) : text_(std::move(text)) {}
  std::string id() const override { return "fixed"; }
  std::string complete(const std::string&) override { return text_; }

 private:
  std::string text_;
};

class FailingBackend final : public LlmBackend {
 public:
  explicit FailingBackend(int after) : after_(after) {}
  std::string id() const override { return "failing"; }
  std::string complete(const std::string& prompt) override {
    if (calls_++ >= after_) throw BackendError("connection refused");
    return inner_.complete(prompt);
  }

 private:
  int after_;
  int calls_ = 0;
  MutationMockBackend inner_{1};
};

}  // namespace

TEST_CASE("prompt structure") {
  const auto space = fixtures::small_space();
  const auto prompt = build_prompt(space, "gemm_small", toy_archive(), {}).render();
  for (const char* header : {kTaskDescriptionHeader, kExamplesHeader, kInstructionHeader, kExemplarHeader}) {
    CHECK(prompt.find(std::string(header) + "\n") != std::string::npos);
  }
  CHECK(prompt.find(kPipelineKnowledge) != std::string::npos);
  CHECK(prompt.find("Propose exactly 5 new configurations") != std::string::npos);
  CHECK(prompt.find("- k.unroll [unroll, k]: 1 | 2 | 4 | 8") != std::string::npos);
  CHECK(prompt == golden::load_or_write("peodse_prompt_small.txt", prompt));

  const auto again = build_prompt(space, "gemm_small", toy_archive(), {}).render();
  CHECK(again == prompt);

  const auto p = build_prompt(space, "gemm_small", toy_archive(), {});
  CHECK_FALSE(p.task_description.empty());
  CHECK_FALSE(p.examples.empty());
  CHECK_FALSE(p.task_instruction.empty());
  CHECK_FALSE(p.generation_exemplars.empty());
}

TEST_CASE("prompt with an empty archive") {
  const auto p = build_prompt(fixtures::small_space(), "gemm_small", {}, {.k = 8, .batch = 3});
  CHECK(p.examples.find("None yet") != std::string::npos);
  CHECK(p.render().find(kExamplesHeader) != std::string::npos);
  CHECK(p.request.find("exactly 3") != std::string::npos);
  CHECK_THROWS_AS(build_prompt(DesignSpace(), "x", {}, {}), ValidationError);
  CHECK_THROWS_AS(build_prompt(fixtures::small_space(), "x", {}, {.k = 0}), ValidationError);
}

TEST_CASE("prompt modes") {
  const auto space = fixtures::small_space();
  auto render = [&](PromptMode m) { return build_prompt(space, "gemm_small", toy_archive(), {.mode = m}).render(); };
  const auto zero = render(PromptMode::zero_shot);
  CHECK(zero.find(kExamplesHeader) == std::string::npos);
  CHECK(zero.find(kInstructionHeader) == std::string::npos);
  CHECK(zero.find(kPipelineKnowledge) == std::string::npos);
  const auto few = render(PromptMode::few_shot);
  CHECK(few.find(kExamplesHeader) != std::string::npos);
  CHECK(few.find(kExemplarHeader) == std::string::npos);
  const auto ins = render(PromptMode::instruction_only);
  CHECK(ins.find(kInstructionHeader) != std::string::npos);
  CHECK(ins.find(kExamplesHeader) == std::string::npos);
  for (auto m : {PromptMode::peodse, PromptMode::zero_shot, PromptMode::few_shot, PromptMode::instruction_only}) {
    CHECK(parse_prompt_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_prompt_mode("cot"), ValidationError);
}

TEST_CASE("example selection") {
  const auto archive = toy_archive();
  const auto picked = select_examples(archive, 8);
  REQUIRE(picked.size() == archive.size());
  for (std::size_t i = 1; i < picked.size(); ++i) {
    CHECK(std::pair(picked[i - 1].utilization, picked[i - 1].metrics.latency) <=
          std::pair(picked[i].utilization, picked[i].metrics.latency));
  }
  const auto two = select_examples(archive, 2);
  REQUIRE(two.size() == 2);
  CHECK(two.front().config == picked.front().config);
  CHECK(two.back().config == picked.back().config);

  auto doubled = archive;
  auto copy = archive[1];
  copy.config = config_at(fixtures::small_space(), 20);
  doubled.push_back(copy);
  CHECK(select_examples(doubled, 8).size() == archive.size());
}

TEST_CASE("parsing solutions") {
  const auto space = fixtures::small_space();
  SUBCASE("three well-formed configurations") {
    const std::string text =
        "Here you go.\n```\nA=1\nj.pipe=on\nk.unroll=2\n---\nA=2\nj.pipe=off\nk.unroll=8\n\nA=2\nj.pipe=flatten\n"
        "k.unroll=1\n```\n";
    const auto r = parse_solutions(text, space, 5);
    REQUIRE(r.configs.size() == 3);
    CHECK(format_config(space, r.configs[0]) == "A=1\nj.pipe=on\nk.unroll=2\n");
    CHECK(format_config(space, r.configs[2]) == "A=2\nj.pipe=flatten\nk.unroll=1\n");
    CHECK(r.diagnostics.empty());
  }
  SUBCASE("out-of-domain value is dropped") {
    const auto r = parse_solutions("```\nA=1\nj.pipe=on\nk.unroll=7\n```\n", space, 5);
    CHECK(r.configs.empty());
    REQUIRE(r.diagnostics.size() == 1);
    CHECK(r.diagnostics[0].find("k.unroll=7") != std::string::npos);
  }
  SUBCASE("prose and two fenced blocks") {
    const std::string text =
        "Step 1: raise k.unroll=4 in prose, which is ignored.\n```\nA=2\nj.pipe=on\nk.unroll=4\n```\n"
        "Then a second block:\n```text\nA=1\nj.pipe=flatten\nk.unroll=8\n---\nA=1\nbogus=3\nk.unroll=8\n---\n"
        "A=1\nj.pipe=on\n```\nDone.\n";
    const auto r = parse_solutions(text, space, 5);
    REQUIRE(r.configs.size() == 2);
    CHECK(format_config(space, r.configs[0]) == "A=2\nj.pipe=on\nk.unroll=4\n");
    CHECK(format_config(space, r.configs[1]) == "A=1\nj.pipe=flatten\nk.unroll=8\n");
    CHECK(r.diagnostics.size() == 2);
  }
  SUBCASE("repeats, evaluated configurations and the batch limit") {
    const std::string text =
        "```\nA=1\nj.pipe=on\nk.unroll=2\n---\nA=1\nj.pipe=on\nk.unroll=2\n---\nA=2\nj.pipe=on\nk.unroll=2\n---\n"
        "A=2\nj.pipe=on\nk.unroll=4\n---\nA=2\nj.pipe=on\nk.unroll=8\n```\n";
    std::set<DesignConfiguration> evaluated{parse_solutions("```\nA=2\nj.pipe=on\nk.unroll=2\n```", space, 1).configs[0]};
    const auto r = parse_solutions(text, space, 2, evaluated);
    CHECK(r.configs.size() == 2);
    CHECK(r.diagnostics.size() == 3);
  }
  SUBCASE("no fenced block") {
    const auto r = parse_solutions("A=1\nj.pipe=on\nk.unroll=2\n", space, 5);
    CHECK(r.configs.empty());
  }
}

TEST_CASE("mutation mock loop") {
  for (const auto& [space, n_max] : {std::pair{fixtures::small_space(), 40}, std::pair{fixtures::gemm_space(), 40}}) {
    const auto model = space.num_directives() == 3 ? fixtures::small_model() : fixtures::gemm_model();
    OracleEvaluator eval(model, space);
    MutationMockBackend mock(3);
    const auto ref = reference_front(model, space).objectives();
    const auto r = run_llm4dse(space, model.kernel.kernel_id, eval, mock, {.n_max = std::size_t(n_max), .seed = 3},
                               &ref);
    CHECK_FALSE(r.error);
    CHECK(r.evaluated.size() <= std::size_t(n_max));
    CHECK(r.evaluated.size() == std::min<std::size_t>(n_max, space_size(space)));
    std::vector<ArchiveEntry> all;
    std::set<DesignConfiguration> distinct;
    for (const auto& p : r.evaluated) {
      CHECK(space.contains(p.config));
      distinct.insert(p.config);
      if (p.eval.metrics.feasible) all.push_back({p.config, p.eval.objectives});
    }
    CHECK(distinct.size() == r.evaluated.size());
    const auto expected = brute_force_front(all);
    REQUIRE(r.archive.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(r.archive.entries()[i].config == expected[i].config);
    for (std::size_t i = 1; i < r.history.size(); ++i) {
      CHECK(r.history[i].evaluations > r.history[i - 1].evaluations);
      CHECK(*r.history[i].adrs <= *r.history[i - 1].adrs);
    }
    CHECK(r.prompts.size() == r.history.size());
  }
}

TEST_CASE("budget smaller than the batch is rejected") {
  OracleEvaluator eval(fixtures::small_model(), fixtures::small_space());
  MutationMockBackend mock(0);
  CHECK_THROWS_AS(run_llm4dse(fixtures::small_space(), "gemm_small", eval, mock, {.n_max = 3, .batch = 5}),
                  ValidationError);
}

TEST_CASE("unparsable responses fall back to random sampling") {
  OracleEvaluator eval(fixtures::small_model(), fixtures::small_space());
  FixedBackend prose("I would rather not answer in the requested format.");
  const auto r = run_llm4dse(fixtures::small_space(), "gemm_small", eval, prose, {.n_max = 10, .batch = 5, .seed = 1});
  CHECK(r.evaluated.size() == 10);
  REQUIRE(r.history.size() == 2);
  CHECK(r.history[0].fallback);
  CHECK(r.history[1].fallback);
}

TEST_CASE("backend failure keeps partial results") {
  OracleEvaluator eval(fixtures::gemm_model(), fixtures::gemm_space());
  FailingBackend failing(2);
  const auto r = run_llm4dse(fixtures::gemm_space(), "gemm", eval, failing, {.n_max = 50, .batch = 5});
  REQUIRE(r.error);
  CHECK(r.error->find("connection refused") != std::string::npos);
  CHECK(r.evaluated.size() == 10);
  CHECK_FALSE(r.archive.empty());
  CHECK(r.to_json(fixtures::gemm_space()).at("error").get<std::string>() == *r.error);
}

TEST_CASE("replay reproduces a recorded run") {
  const auto space = fixtures::gemm_space();
  const auto ref = gemm_reference();
  OracleEvaluator eval(fixtures::gemm_model(), space);
  MutationMockBackend mock(11);
  RecordingBackend recorder(mock);
  const ExploreConfig cfg{.n_max = 30, .batch = 5, .k = 8, .seed = 11};
  const auto original = run_llm4dse(space, "gemm", eval, recorder, cfg, &ref);
  const auto transcript = transcript_from_json(transcript_to_json(recorder.transcript()), "mem");
  REQUIRE(transcript.size() == original.prompts.size());

  std::string first_csv;
  for (int run = 0; run < 2; ++run) {
    ReplayBackend replay(transcript);
    const auto r = run_llm4dse(space, "gemm", eval, replay, cfg, &ref);
    CHECK_FALSE(r.error);
    CHECK(r.prompts == original.prompts);
    CHECK(r.to_json(space).dump() == original.to_json(space).dump());
    const auto csv = convergence_csv(r.history);
    if (run == 0) first_csv = csv;
    CHECK(csv == first_csv);
  }
  CHECK(first_csv == golden::load_or_write("convergence_replay_seed11.csv", first_csv));

  auto tampered = transcript;
  tampered[1].prompt_hash = sha256_hex("something else");
  ReplayBackend bad(tampered);
  const auto r = run_llm4dse(space, "gemm", eval, bad, cfg, &ref);
  REQUIRE(r.error);
  CHECK(r.error->find("hash mismatch") != std::string::npos);

  ReplayBackend short_replay({transcript.front()});
  CHECK(run_llm4dse(space, "gemm", eval, short_replay, cfg, &ref).error->find("exhausted") != std::string::npos);
}

TEST_CASE("convergence CSV") {
  const auto ref = gemm_reference();
  OracleEvaluator eval(fixtures::gemm_model(), fixtures::gemm_space());
  MutationMockBackend mock(2);
  const auto r = run_llm4dse(fixtures::gemm_space(), "gemm", eval, mock, {.n_max = 25, .seed = 2}, &ref);
  const auto csv = convergence_csv(r.history);
  CHECK(csv.rfind("evaluations,adrs\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<std::ptrdiff_t>(r.history.size() + 1));

  std::vector<HistoryRecord> empty_archive{{1, 5, 0, false, std::nullopt}};
  CHECK(convergence_csv(empty_archive) == "evaluations,adrs\n5,inf\n");
}

TEST_CASE("baselines") {
  const auto space = fixtures::small_space();
  const auto model = fixtures::small_model();
  OracleEvaluator eval(model, space);

  SUBCASE("budget one") {
    CHECK(sa_baseline(space, eval, {.budget = 1}).archive.size() == 1);
    CHECK(random_baseline(space, eval, {.budget = 1}).archive.size() == 1);
  }
  SUBCASE("seeded trajectories") {
    const auto a = sa_baseline(space, eval, {.budget = 12, .seed = 4});
    const auto b = sa_baseline(space, eval, {.budget = 12, .seed = 4});
    CHECK(a.to_json(space) == b.to_json(space));
    const auto c = random_baseline(space, eval, {.budget = 12, .seed = 4});
    const auto d = random_baseline(space, eval, {.budget = 12, .seed = 4});
    CHECK(c.to_json(space) == d.to_json(space));
    CHECK(c.evaluated.size() == 12);
  }
  SUBCASE("SA finds the scalarized optimum") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto r = sa_baseline(space, eval, {.budget = 24, .seed = seed});
      const double scale = std::max(1.0, double(r.evaluated.front().eval.metrics.latency));
      double best_seen = 1e300;
      for (const auto& p : r.evaluated) best_seen = std::min(best_seen, sa_cost(p.eval, model.capacities, scale, 1.0));
      double best = 1e300;
      for (const auto& cfg : enumerate(space, 24)) {
        best = std::min(best, sa_cost(eval.evaluate(cfg), model.capacities, scale, 1.0));
      }
      CHECK(best_seen == best);
    }
  }
  SUBCASE("mock search beats random sampling on average") {
    const auto gspace = fixtures::gemm_space();
    const auto ref = gemm_reference();
    OracleEvaluator geval(fixtures::gemm_model(), gspace);
    double mock_sum = 0.0, random_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      MutationMockBackend mock(seed);
      const auto r = run_llm4dse(gspace, "gemm", geval, mock, {.n_max = 60, .seed = seed});
      mock_sum += adrs(ref, r.archive.objectives());
      random_sum += adrs(ref, random_baseline(gspace, geval, {.budget = 60, .seed = seed}).archive.objectives());
    }
    CHECK(mock_sum <= random_sum);
  }
}

TEST_CASE("backend specs") {
  const auto spec = LlmBackendSpec::from_json(Json{{"kind", "mutation-mock"}, {"seed", 4}}, "backend");
  CHECK(spec.kind == LlmBackendSpec::Kind::mutation_mock);
  CHECK(spec.seed == 4);
  CHECK(LlmBackendSpec::from_json(spec.to_json(), "backend").to_json() == spec.to_json());
  CHECK(make_backend(spec)->id() == "mutation-mock");
  CHECK_THROWS_AS(LlmBackendSpec::from_json(Json{{"kind", "oracle"}}, "backend"), ValidationError);
  CHECK_THROWS_AS(LlmBackendSpec::from_json(Json{{"kind", "replay"}, {"seed", 1}}, "backend"), ValidationError);
  CHECK_THROWS_AS(LlmBackendSpec::from_json(Json{{"kind", "http-chat"}, {"model", "m"}}, "backend"), ValidationError);
  CHECK_THROWS_AS(HttpChatBackend({.endpoint = "ftp://x", .model = "m"}), ValidationError);
}

TEST_CASE("chat completions client") {
  httplib::Server server;
  std::atomic<int> calls{0};
  std::vector<int> script;
  Json last_request;
  std::string last_auth;
  std::mutex mu;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    const int n = calls++;
    last_request = Json::parse(req.body);
    last_auth = req.get_header_value("Authorization");
    const int status = n < static_cast<int>(script.size()) ? script[n] : 200;
    res.status = status;
    if (status == 200) {
      res.set_content(Json{{"choices", Json::array({Json{{"message", Json{{"role", "assistant"}, {"content", "ok " +
                                                                                                       std::to_string(n)}}}}})}}
                          .dump(),
                      "application/json");
    } else {
      res.set_content("busy", "text/plain");
    }
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";

  SUBCASE("retries on 500 and 429") {
    script = {500, 429};
    setenv("MPMDSE_TEST_KEY", "secret", 1);
    HttpChatBackend backend({.endpoint = endpoint, .model = "m1", .api_key_env = "MPMDSE_TEST_KEY",
                             .temperature = 0.2, .timeout_seconds = 5, .retries = 3, .backoff_ms = 1});
    CHECK(backend.complete("hello") == "ok 2");
    CHECK(calls == 3);
    CHECK(last_request.at("model") == "m1");
    CHECK(last_request.at("messages").at(0).at("role") == "user");
    CHECK(last_request.at("messages").at(0).at("content") == "hello");
    CHECK(last_request.at("temperature").get<double>() == doctest::Approx(0.2));
    CHECK(last_auth == "Bearer secret");
  }
  SUBCASE("gives up after the retry budget") {
    script = {503, 503, 503, 503, 503};
    HttpChatBackend backend({.endpoint = endpoint, .model = "m", .retries = 3, .backoff_ms = 1});
    CHECK_THROWS_AS(backend.complete("x"), BackendError);
    CHECK(calls == 4);
  }
  SUBCASE("client errors are not retried") {
    script = {400};
    HttpChatBackend backend({.endpoint = endpoint, .model = "m", .retries = 3, .backoff_ms = 1});
    CHECK_THROWS_AS(backend.complete("x"), BackendError);
    CHECK(calls == 1);
  }
  SUBCASE("missing key variable") {
    HttpChatBackend backend({.endpoint = endpoint, .model = "m", .api_key_env = "MPMDSE_UNSET_VARIABLE_FOR_TEST"});
    CHECK_THROWS_AS(backend.complete("x"), BackendError);
    CHECK(calls == 0);
  }
  server.stop();
  worker.join();

  HttpChatBackend closed({.endpoint = endpoint, .model = "m", .timeout_seconds = 1, .retries = 1, .backoff_ms = 1});
  CHECK_THROWS_AS(closed.complete("x"), BackendError);
}
