#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mpmdse/dataset.hpp"
#include "mpmdse/designspace.hpp"
#include "mpmdse/mpm.hpp"
#include "mpmdse/oracle.hpp"
#include "mpmdse/pareto.hpp"

/// LLM-driven design-space exploration: prompt construction, LLM backends,
/// response parsing, the archive-driven loop and comparison baselines.
namespace mpmdse::dse {

// ---------------------------------------------------------------- evaluation

struct Evaluation {
  QorMetrics metrics;
  Objectives objectives;
};

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual Evaluation evaluate(const DesignConfiguration& cfg) = 0;
  virtual const Resources& capacities() const = 0;
};

class OracleEvaluator final : public Evaluator {
 public:
  OracleEvaluator(OracleModel model, DesignSpace space, ObjectiveMode mode = ObjectiveMode::latency_utilization);
  Evaluation evaluate(const DesignConfiguration& cfg) override;
  const Resources& capacities() const override { return model_.capacities; }

 private:
  OracleModel model_;
  DesignSpace space_;
  ObjectiveMode mode_;
};

/// Scores configurations with a trained predictor instead of the oracle.
class MpmEvaluator final : public Evaluator {
 public:
  MpmEvaluator(const mpm::MpmModel& model, ad::ParamStore& store, const OracleModel& kernel, DesignSpace space,
               const EmbeddingProvider& provider, Normalizer normalizer, NodeFeatureScale scale,
               ObjectiveMode mode = ObjectiveMode::latency_utilization);
  Evaluation evaluate(const DesignConfiguration& cfg) override;
  const Resources& capacities() const override { return normalizer_.capacities; }

 private:
  const mpm::MpmModel& model_;
  ad::ParamStore& store_;
  KernelDescription kernel_;
  Cdfg base_graph_;
  DesignSpace space_;
  const EmbeddingProvider& provider_;
  Normalizer normalizer_;
  NodeFeatureScale scale_;
  ObjectiveMode mode_;
};

// ------------------------------------------------------------------- prompts

enum class PromptMode { peodse, zero_shot, few_shot, instruction_only };

std::string_view to_string(PromptMode m);
PromptMode parse_prompt_mode(std::string_view text);

inline constexpr const char* kTaskDescriptionHeader = "## Task Description";
inline constexpr const char* kExamplesHeader = "## High-Quality Solution Examples";
inline constexpr const char* kInstructionHeader = "## Task Instruction";
inline constexpr const char* kExemplarHeader = "## Solution Generation Exemplars";

/// The pipeline sentence of the pragma-impact knowledge.
inline constexpr const char* kPipelineKnowledge =
    "Setting the pipeline directive to \"off\" reduces utilization such as LUTs while relatively increasing "
    "latency. Conversely, setting it to \"flatten\" yields the opposite effect.";

struct ExampleSolution {
  DesignConfiguration config;
  QorMetrics metrics;
  double utilization = 0.0;
};

struct PeodsePrompt {
  std::string task_description;
  std::string examples;
  std::string task_instruction;
  std::string generation_exemplars;
  std::string request;

  /// Sections in order under their headers, empty sections omitted, request last.
  std::string render() const;
};

struct PromptOptions {
  std::size_t k = 8;
  std::size_t batch = 5;
  PromptMode mode = PromptMode::peodse;
};

/// Up to k archive members spread evenly along the quality order
/// (max utilization, then latency), listed in that order. Members repeating
/// an earlier member's objectives are skipped.
std::vector<ExampleSolution> select_examples(const std::vector<ExampleSolution>& archive, std::size_t k);

PeodsePrompt build_prompt(const DesignSpace& space, const std::string& kernel_id,
                          const std::vector<ExampleSolution>& archive, const PromptOptions& opts);

struct ParseResult {
  std::vector<DesignConfiguration> configs;
  std::vector<std::string> diagnostics;
};

/// Reads `name=value` lines from fenced blocks; configurations inside a block
/// are separated by blank lines or `---`. Invalid, incomplete or repeated
/// configurations (including those in `evaluated`) are dropped with a
/// diagnostic. At most `batch` are returned.
ParseResult parse_solutions(const std::string& text, const DesignSpace& space, std::size_t batch,
                            const std::set<DesignConfiguration>& evaluated = {});

/// `name=value` lines of a configuration.
std::string format_config(const DesignSpace& space, const DesignConfiguration& cfg);

// ------------------------------------------------------------------ backends

class BackendError : public Error {
 public:
  using Error::Error;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string id() const = 0;
  /// Raw solution text for `prompt`. Throws BackendError on failure.
  virtual std::string complete(const std::string& prompt) = 0;
};

struct HttpChatConfig {
  std::string endpoint;  ///< e.g. https://api.example.com/v1/chat/completions
  std::string model;
  std::string api_key_env;
  double temperature = 0.7;
  int timeout_seconds = 60;
  int retries = 3;
  int backoff_ms = 500;
};

/// Chat-completions client: {model, messages:[{role:user, content}], temperature};
/// returns choices[0].message.content. Transport errors, 429 and 5xx are
/// retried with exponential backoff.
class HttpChatBackend final : public LlmBackend {
 public:
  explicit HttpChatBackend(HttpChatConfig cfg);
  std::string id() const override { return "http-chat:" + cfg_.model; }
  std::string complete(const std::string& prompt) override;

 private:
  HttpChatConfig cfg_;
  std::string scheme_host_;
  std::string path_;
};

struct TranscriptEntry {
  std::string prompt_hash;
  std::string response;
};

Json transcript_to_json(const std::vector<TranscriptEntry>& entries);
std::vector<TranscriptEntry> transcript_from_json(const Json& doc, const std::string& context);

/// Replays recorded responses in order, checking each prompt's hash.
class ReplayBackend final : public LlmBackend {
 public:
  explicit ReplayBackend(std::vector<TranscriptEntry> entries);
  static ReplayBackend from_file(const std::filesystem::path& path);
  std::string id() const override { return "replay"; }
  std::string complete(const std::string& prompt) override;

 private:
  std::vector<TranscriptEntry> entries_;
  std::size_t next_ = 0;
};

/// Wraps a backend and appends every exchange to a transcript.
class RecordingBackend final : public LlmBackend {
 public:
  explicit RecordingBackend(LlmBackend& inner) : inner_(inner) {}
  std::string id() const override { return inner_.id(); }
  std::string complete(const std::string& prompt) override;
  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }

 private:
  LlmBackend& inner_;
  std::vector<TranscriptEntry> transcript_;
};

/// Offline stand-in for an LLM: reads the directive catalog and the example
/// configurations from the prompt and answers with single- or two-step
/// mutations of the examples (random configurations when there are none),
/// wrapped in a short rationale and one fenced block.
class MutationMockBackend final : public LlmBackend {
 public:
  explicit MutationMockBackend(std::uint64_t seed) : seed_(seed) {}
  std::string id() const override { return "mutation-mock"; }
  std::string complete(const std::string& prompt) override;

 private:
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
  std::set<std::string> proposed_;
};

struct LlmBackendSpec {
  enum class Kind { http_chat, replay, mutation_mock };
  Kind kind = Kind::mutation_mock;
  HttpChatConfig http;
  std::string transcript;
  std::uint64_t seed = 0;

  static LlmBackendSpec from_json(const Json& doc, const std::string& path);
  Json to_json() const;
};

std::unique_ptr<LlmBackend> make_backend(const LlmBackendSpec& spec);

// ---------------------------------------------------------------- exploration

struct ExploreConfig {
  std::size_t n_max = 100;
  std::size_t batch = 5;
  std::size_t k = 8;
  std::uint64_t seed = 0;
  PromptMode mode = PromptMode::peodse;
};

struct HistoryRecord {
  std::size_t iteration = 0;
  std::size_t evaluations = 0;
  std::size_t archive_size = 0;
  bool fallback = false;
  /// ADRS of the archive against the reference, when one is supplied and the
  /// archive is non-empty.
  std::optional<double> adrs;
};

struct EvaluatedPoint {
  DesignConfiguration config;
  Evaluation eval;
};

struct ExploreResult {
  ParetoArchive archive;
  std::vector<EvaluatedPoint> evaluated;  ///< in evaluation order
  std::vector<HistoryRecord> history;
  std::vector<std::string> diagnostics;
  std::vector<std::string> prompts;
  /// Set when the backend failed; the other fields hold the partial run.
  std::optional<std::string> error;

  Json to_json(const DesignSpace& space) const;
};

/// Prompt, ask, parse, evaluate, update the archive; rounds with no valid
/// configuration fall back to random sampling. Stops at n_max evaluations or
/// when the space is exhausted.
ExploreResult run_llm4dse(const DesignSpace& space, const std::string& kernel_id, Evaluator& evaluator,
                          LlmBackend& backend, const ExploreConfig& cfg,
                          const std::vector<Objectives>* reference = nullptr);

struct BaselineConfig {
  std::size_t budget = 100;
  std::uint64_t seed = 0;
  /// Simulated annealing: cost = max utilization + latency_weight * latency / initial latency.
  double latency_weight = 1.0;
  double initial_temperature = 0.1;
  double cooling = 0.95;
  /// Consecutive moves without a new evaluation before a random restart.
  std::size_t stall_limit = 50;
  /// Evaluations between history records.
  std::size_t record_every = 5;
};

ExploreResult sa_baseline(const DesignSpace& space, Evaluator& evaluator, const BaselineConfig& cfg,
                          const std::vector<Objectives>* reference = nullptr);
ExploreResult random_baseline(const DesignSpace& space, Evaluator& evaluator, const BaselineConfig& cfg,
                              const std::vector<Objectives>* reference = nullptr);

/// Scalarized SA cost used by sa_baseline.
double sa_cost(const Evaluation& e, const Resources& capacities, double latency_scale, double latency_weight);

/// `evaluations,adrs` rows, one per history record; the ADRS cell is empty
/// without a reference and `inf` while the archive is empty.
std::string convergence_csv(const std::vector<HistoryRecord>& history);

}  // namespace mpmdse::dse
