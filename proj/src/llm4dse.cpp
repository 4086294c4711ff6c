#include "mpmdse/llm4dse.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mpmdse::dse {

OracleEvaluator::OracleEvaluator(OracleModel model, DesignSpace space, ObjectiveMode mode)
    : model_(std::move(model)), space_(std::move(space)), mode_(mode) {
  check_space(model_, space_);
}

Evaluation OracleEvaluator::evaluate(const DesignConfiguration& cfg) {
  Evaluation e;
  e.metrics = mpmdse::evaluate(model_, space_, cfg);
  e.objectives = objectives_of(e.metrics, model_.capacities, mode_);
  return e;
}

MpmEvaluator::MpmEvaluator(const mpm::MpmModel& model, ad::ParamStore& store, const OracleModel& kernel,
                           DesignSpace space, const EmbeddingProvider& provider, Normalizer normalizer,
                           NodeFeatureScale scale, ObjectiveMode mode)
    : model_(model),
      store_(store),
      kernel_(kernel.kernel),
      base_graph_(build_cdfg(kernel.kernel, kernel.op_costs)),
      space_(std::move(space)),
      provider_(provider),
      normalizer_(std::move(normalizer)),
      scale_(scale),
      mode_(mode) {
  validate_template(space_, {kernel_.kernel_id, kernel_.source_template});
}

Evaluation MpmEvaluator::evaluate(const DesignConfiguration& cfg) {
  GraphTextSample s;
  s.graph = insert_pragma_nodes(base_graph_, space_, cfg);
  s.text = provider_.embed(merge(space_, cfg, {kernel_.kernel_id, kernel_.source_template})).values;
  const auto prepared = mpm::prepare(s, scale_);
  const Matrix pred = model_.predict(store_, {&prepared});
  TargetVector t{};
  for (std::size_t j = 0; j < kNumTargets; ++j) t[j] = pred(0, static_cast<Eigen::Index>(j));
  Evaluation e;
  e.metrics = normalizer_.denormalize(t);
  e.metrics.latency = std::max<std::int64_t>(1, e.metrics.latency);
  e.objectives = objectives_of(e.metrics, normalizer_.capacities, mode_);
  return e;
}

namespace {

/// Shared bookkeeping of the exploration loops.
class Tracker {
 public:
  Tracker(ExploreResult& result, const Resources& capacities, const std::vector<Objectives>* reference)
      : result_(result), capacities_(capacities), reference_(reference) {}

  bool seen(const DesignConfiguration& c) const { return evaluated_.contains(c); }
  const std::set<DesignConfiguration>& evaluated() const { return evaluated_; }
  std::size_t count() const { return evaluated_.size(); }

  const Evaluation& add(const DesignConfiguration& c, Evaluation e) {
    evaluated_.insert(c);
    if (e.metrics.feasible) result_.archive.insert(c, e.objectives);
    result_.evaluated.push_back({c, std::move(e)});
    return result_.evaluated.back().eval;
  }

  void record(std::size_t iteration, bool fallback) {
    HistoryRecord h;
    h.iteration = iteration;
    h.evaluations = count();
    h.archive_size = result_.archive.size();
    h.fallback = fallback;
    if (reference_ && !result_.archive.empty()) h.adrs = adrs(*reference_, result_.archive.objectives());
    result_.history.push_back(h);
  }

  std::vector<ExampleSolution> archive_examples() const {
    std::map<DesignConfiguration, const Evaluation*> lookup;
    for (const auto& p : result_.evaluated) lookup[p.config] = &p.eval;
    std::vector<ExampleSolution> out;
    for (const auto& e : result_.archive.entries()) {
      const auto* ev = lookup.at(e.config);
      out.push_back({e.config, ev->metrics, max_utilization(ev->metrics, capacities_)});
    }
    return out;
  }

 private:
  ExploreResult& result_;
  Resources capacities_;
  const std::vector<Objectives>* reference_;
  std::set<DesignConfiguration> evaluated_;
};

std::vector<DesignConfiguration> random_unevaluated(const DesignSpace& space, const Tracker& t, std::size_t count,
                                                    Rng& rng) {
  std::vector<DesignConfiguration> out;
  const auto size = space_size(space);
  std::set<DesignConfiguration> picked;
  const auto available = size - std::min<std::uint64_t>(size, t.count());
  count = static_cast<std::size_t>(std::min<std::uint64_t>(count, available));
  if (available <= 4 * count || size <= 4096) {
    std::vector<DesignConfiguration> pool;
    for (const auto& c : enumerate(space, size)) {
      if (!t.seen(c)) pool.push_back(c);
    }
    rng.shuffle(pool);
    pool.resize(std::min(pool.size(), count));
    return pool;
  }
  while (out.size() < count) {
    auto c = sample_one(space, rng);
    if (!t.seen(c) && picked.insert(c).second) out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

Json ExploreResult::to_json(const DesignSpace& space) const {
  Json archive_json = Json::array();
  for (const auto& e : archive.entries()) {
    archive_json.push_back(Json{{"key", e.config.key()},
                                {"assignment", space.assignment_json(e.config)},
                                {"objectives", e.objectives}});
  }
  Json evaluated_json = Json::array();
  for (const auto& p : evaluated) {
    evaluated_json.push_back(Json{{"key", p.config.key()},
                                  {"metrics", p.eval.metrics.to_json()},
                                  {"objectives", p.eval.objectives}});
  }
  Json history_json = Json::array();
  for (const auto& h : history) {
    Json row{{"iteration", h.iteration},
             {"evaluations", h.evaluations},
             {"archive_size", h.archive_size},
             {"fallback", h.fallback}};
    row["adrs"] = h.adrs ? Json(*h.adrs) : Json(nullptr);
    history_json.push_back(row);
  }
  Json doc{{"archive", archive_json},
           {"evaluated", evaluated_json},
           {"history", history_json},
           {"diagnostics", diagnostics}};
  doc["error"] = error ? Json(*error) : Json(nullptr);
  return doc;
}

ExploreResult run_llm4dse(const DesignSpace& space, const std::string& kernel_id, Evaluator& evaluator,
                          LlmBackend& backend, const ExploreConfig& cfg, const std::vector<Objectives>* reference) {
  if (cfg.batch == 0) throw ValidationError("batch", "batch size must be at least 1");
  if (cfg.n_max < cfg.batch) {
    throw ValidationError("n_max", "budget " + std::to_string(cfg.n_max) + " is smaller than the batch size " +
                                       std::to_string(cfg.batch));
  }
  ExploreResult result;
  Tracker t(result, evaluator.capacities(), reference);
  const auto size = space_size(space);
  const PromptOptions popts{cfg.k, cfg.batch, cfg.mode};

  for (std::size_t iteration = 1; t.count() < cfg.n_max && t.count() < size; ++iteration) {
    const auto prompt = build_prompt(space, kernel_id, t.archive_examples(), popts).render();
    result.prompts.push_back(prompt);
    std::string response;
    try {
      response = backend.complete(prompt);
    } catch (const BackendError& e) {
      result.error = e.what();
      break;
    }
    const auto remaining = cfg.n_max - t.count();
    auto parsed = parse_solutions(response, space, std::min(cfg.batch, remaining), t.evaluated());
    for (const auto& d : parsed.diagnostics) {
      result.diagnostics.push_back("iteration " + std::to_string(iteration) + ": " + d);
    }
    const bool fallback = parsed.configs.empty();
    if (fallback) {
      Rng rng(mix_seed(cfg.seed, iteration));
      parsed.configs = random_unevaluated(space, t, std::min(cfg.batch, remaining), rng);
      result.diagnostics.push_back("iteration " + std::to_string(iteration) +
                                   ": no valid configuration in the response, sampled " +
                                   std::to_string(parsed.configs.size()) + " at random");
    }
    for (const auto& c : parsed.configs) t.add(c, evaluator.evaluate(c));
    t.record(iteration, fallback);
  }
  return result;
}

double sa_cost(const Evaluation& e, const Resources& capacities, double latency_scale, double latency_weight) {
  return max_utilization(e.metrics, capacities) + latency_weight * double(e.metrics.latency) / latency_scale;
}

ExploreResult sa_baseline(const DesignSpace& space, Evaluator& evaluator, const BaselineConfig& cfg,
                          const std::vector<Objectives>* reference) {
  if (cfg.budget == 0) throw ValidationError("budget", "budget must be at least 1");
  if (cfg.cooling <= 0.0 || cfg.cooling >= 1.0) throw ValidationError("cooling", "must lie in (0, 1)");
  ExploreResult result;
  Tracker t(result, evaluator.capacities(), reference);
  const auto& cap = evaluator.capacities();
  const auto size = space_size(space);
  const auto budget = static_cast<std::size_t>(std::min<std::uint64_t>(cfg.budget, size));
  Rng rng(cfg.seed);
  std::map<DesignConfiguration, double> cost;

  auto current = sample_one(space, rng);
  const auto& first = t.add(current, evaluator.evaluate(current));
  const double scale = std::max(1.0, double(first.metrics.latency));
  cost[current] = sa_cost(first, cap, scale, cfg.latency_weight);
  std::size_t iteration = 1;
  t.record(iteration, false);

  double temperature = cfg.initial_temperature;
  std::size_t stall = 0;
  const std::size_t step_cap = 1000 * budget + 1000;
  for (std::size_t step = 0; t.count() < budget && step < step_cap; ++step) {
    DesignConfiguration candidate;
    bool restart = false;
    if (stall >= cfg.stall_limit) {
      candidate = random_unevaluated(space, t, 1, rng).front();
      restart = true;
      stall = 0;
      temperature = cfg.initial_temperature;
    } else {
      candidate = neighbor(space, current, rng);
    }
    if (!t.seen(candidate)) {
      const auto& e = t.add(candidate, evaluator.evaluate(candidate));
      cost[candidate] = sa_cost(e, cap, scale, cfg.latency_weight);
      stall = 0;
      if (t.count() % cfg.record_every == 0 || t.count() == budget) t.record(++iteration, false);
    } else {
      ++stall;
    }
    const double delta = cost[candidate] - cost[current];
    if (restart || delta <= 0.0 || rng.uniform() < std::exp(-delta / std::max(temperature, 1e-300))) {
      current = candidate;
    }
    temperature *= cfg.cooling;
  }
  if (result.history.empty() || result.history.back().evaluations != t.count()) t.record(++iteration, false);
  return result;
}

ExploreResult random_baseline(const DesignSpace& space, Evaluator& evaluator, const BaselineConfig& cfg,
                              const std::vector<Objectives>* reference) {
  if (cfg.budget == 0) throw ValidationError("budget", "budget must be at least 1");
  ExploreResult result;
  Tracker t(result, evaluator.capacities(), reference);
  Rng rng(cfg.seed);
  const auto configs = random_unevaluated(space, t, cfg.budget, rng);
  std::size_t iteration = 0;
  for (const auto& c : configs) {
    t.add(c, evaluator.evaluate(c));
    if (t.count() % cfg.record_every == 0 || t.count() == configs.size()) t.record(++iteration, false);
  }
  return result;
}

std::string convergence_csv(const std::vector<HistoryRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "evaluations,adrs\n";
  for (const auto& h : history) {
    out << h.evaluations << ',';
    if (h.adrs) {
      out << *h.adrs;
    } else if (h.archive_size == 0) {
      out << "inf";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace mpmdse::dse
