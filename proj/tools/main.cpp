#include <CLI11.hpp>

#include <cstdio>
#include <deque>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include "mpmdse/llm4dse.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace mpmdse;
using mpmdse::cli::RunConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitBackend = 3;
constexpr int kExitBudget = 4;

/// Explore produced no feasible configuration within its budget.
class BudgetExhausted : public Error {
 public:
  using Error::Error;
};

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string full_precision(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

void require_file(const fs::path& p, const std::string& key) {
  if (!fs::exists(p)) throw ValidationError("$." + key, "file not found: " + p.string());
}

template <typename F>
auto load_document(const fs::path& p, const std::string& key, F&& parse) {
  require_file(p, key);
  try {
    return parse(read_json_file(p));
  } catch (const ValidationError& e) {
    throw ValidationError(p.string() + ": " + e.path(), e.message());
  } catch (const Json::exception& e) {
    throw ValidationError(p.string(), e.what());
  }
}

OracleModel load_oracle(const RunConfig& rc) {
  return load_document(rc.path("kernel"), "kernel", [](const Json& d) { return OracleModel::from_json(d); });
}

DesignSpace load_space(const RunConfig& rc) {
  return load_document(rc.path("space"), "space", [](const Json& d) { return DesignSpace::from_json(d); });
}

/// Rebuilds the embedding provider recorded in a dataset manifest.
HashedFeaturizer provider_from_id(const std::string& id) {
  unsigned long long dim = 0, seed = 0;
  char tail = 0;
  if (std::sscanf(id.c_str(), "hashed:%llu:%llu%c", &dim, &seed, &tail) != 2) {
    throw ValidationError("provider", "cannot rebuild provider '" + id + "'; only hashed providers are supported");
  }
  return HashedFeaturizer(dim, seed);
}

struct LoadedModel {
  ad::ParamStore store;
  std::unique_ptr<mpm::MpmModel> model;
  Json manifest;
};

std::unique_ptr<LoadedModel> load_model(const fs::path& p) {
  require_file(p, "checkpoint");
  auto ckpt = ad::load_checkpoint(p);
  auto out = std::make_unique<LoadedModel>();
  out->manifest = ckpt.manifest;
  try {
    const auto cfg = mpm::MpmConfig::from_json(ckpt.manifest.at("model"));
    out->model = std::make_unique<mpm::MpmModel>(out->store, cfg, 0);
  } catch (const Json::exception& e) {
    throw ValidationError(p.string() + ": manifest", e.what());
  }
  if (out->store.size() != ckpt.store.size()) {
    throw ValidationError(p.string(), "checkpoint holds " + std::to_string(ckpt.store.size()) +
                                          " tensors, the model expects " + std::to_string(out->store.size()));
  }
  try {
    out->store.restore(ckpt.store.snapshot());
  } catch (const Error& e) {
    throw ValidationError(p.string(), e.what());
  }
  return out;
}

// ------------------------------------------------------------------ gen-data

int run_gen_data(const RunConfig& rc) {
  const auto model = load_oracle(rc);
  const auto space = load_space(rc);
  const fs::path out = rc.path("out");
  HashedFeaturizer provider(rc.count("text_dim"), rc.count("text_seed"));
  EmbeddingCache cache;
  if (rc.is_set("embeddings")) cache.load_directory(rc.path("embeddings"));
  GenDataOptions opts;
  opts.n = rc.count("n") == 0 ? static_cast<std::size_t>(space_size(space)) : rc.count("n");
  opts.seed = rc.count("seed");
  const auto ds = gen_dataset(model, space, provider, opts, &cache);
  rc.write_snapshot(out);
  save_dataset(out, ds);
  std::cout << "wrote " << ds.samples.size() << " samples of " << ds.kernel_id << " to " << out.string()
            << " (C_max " << ds.normalizer.c_max << ")\n";
  return kExitOk;
}

// --------------------------------------------------------------------- train

std::vector<mpm::PreparedSample> prepare_all(const Dataset& ds) {
  std::vector<mpm::PreparedSample> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) out.push_back(mpm::prepare(s, ds.node_scale));
  return out;
}

std::vector<const mpm::PreparedSample*> pick(const std::vector<mpm::PreparedSample>& all,
                                             const std::vector<std::size_t>& idx) {
  std::vector<const mpm::PreparedSample*> out;
  for (const auto i : idx) out.push_back(&all[i]);
  return out;
}

int run_train(const RunConfig& rc) {
  require_file(rc.path("dataset") / "manifest.json", "dataset");
  const auto ds = load_dataset(rc.path("dataset"));
  const fs::path out = rc.path("out");
  const auto seed = rc.count("seed");
  const auto prepared = prepare_all(ds);
  const auto split = split_dataset(prepared.size(), seed);

  mpm::MpmConfig cfg;
  cfg.gnn.in_dim = prepared.front().features.cols();
  cfg.gnn.hidden = rc.count("hidden");
  cfg.gnn.layers = rc.count("layers");
  cfg.text_dim = prepared.front().text.cols();
  cfg.heads = rc.count("heads");
  cfg.head_hidden = rc.count("head_hidden");
  cfg.variant = mpm::parse_variant(rc.string("variant"));
  if (cfg.gnn.hidden == 0 || cfg.gnn.layers == 0) throw ValidationError("$.hidden", "hidden and layers must be positive");
  if (cfg.heads == 0 || cfg.gnn.hidden % cfg.heads != 0) {
    throw ValidationError("$.heads", "must divide hidden (" + std::to_string(cfg.gnn.hidden) + ")");
  }

  mpm::TrainConfig tc;
  tc.epochs = rc.count("epochs");
  tc.batch = rc.count("batch");
  tc.lr = rc.number("lr");
  tc.seed = seed;
  tc.stop_below = rc.number("stop_below");
  if (tc.epochs == 0) throw ValidationError("$.epochs", "must be at least 1");
  if (tc.batch == 0) throw ValidationError("$.batch", "must be at least 1");
  if (!(tc.lr > 0.0)) throw ValidationError("$.lr", "must be positive");

  rc.write_snapshot(out);
  ad::ParamStore store;
  const mpm::MpmModel model(store, cfg, seed);
  const auto result = mpm::train(model, store, pick(prepared, split.train), pick(prepared, split.val), tc,
                                 [&](const mpm::EpochRecord& r) {
                                   if (rc.flag("verbose")) {
                                     std::cerr << "epoch " << r.epoch << " loss " << fixed(r.train_loss, 5)
                                               << " val " << fixed(r.val.all, 5) << '\n';
                                   }
                                 });
  const Json manifest{{"model", cfg.to_json()},
                      {"kernel_id", ds.kernel_id},
                      {"split_seed", seed},
                      {"best_epoch", result.best_epoch},
                      {"best_val_all", result.best_val},
                      {"split", {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}}}};
  ad::save_checkpoint(out / "checkpoint.bin", store, manifest);
  write_text_file(out / "metrics.csv", mpm::history_csv(result.history));
  std::cout << "best validation aggregate RMSE " << fixed(result.best_val, 4) << " at epoch " << result.best_epoch
            << " of " << result.history.size() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------- eval

struct EvalTable {
  std::array<double, kNumTargets> rmse{};
  double rmse_all = 0.0;
  std::array<std::optional<double>, kNumTargets> mape;
  std::optional<double> mape_all;
  std::size_t samples = 0;
};

constexpr std::array<const char*, kNumTargets> kColumns = {"Latency", "LUT", "DSP", "FF", "BRAM"};

std::string eval_csv(const EvalTable& t) {
  std::string out = "metric";
  for (const auto* c : kColumns) out += std::string(",") + c;
  out += ",All\nRMSE";
  for (const auto v : t.rmse) out += "," + full_precision(v);
  out += "," + full_precision(t.rmse_all) + "\nMAPE";
  for (const auto& v : t.mape) out += "," + (v ? full_precision(*v) : std::string("n/a"));
  out += "," + (t.mape_all ? full_precision(*t.mape_all) : std::string("n/a")) + "\n";
  return out;
}

std::string eval_table_text(const EvalTable& t) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %10s %10s %10s %10s %10s %10s\n", "", "Latency", "LUT", "DSP", "FF", "BRAM",
                "All");
  out << line;
  out << "RMSE  ";
  for (const auto v : t.rmse) out << ' ' << std::string(10 - fixed(v, 4).size(), ' ') << fixed(v, 4);
  out << ' ' << std::string(10 - fixed(t.rmse_all, 4).size(), ' ') << fixed(t.rmse_all, 4) << '\n';
  out << "MAPE% ";
  auto cell = [&](const std::optional<double>& v) {
    const auto s = v ? fixed(*v, 2) : std::string("n/a");
    out << ' ' << std::string(s.size() < 10 ? 10 - s.size() : 0, ' ') << s;
  };
  for (const auto& v : t.mape) cell(v);
  cell(t.mape_all);
  out << '\n';
  return out.str();
}

int run_eval(const RunConfig& rc) {
  const auto loaded = load_model(rc.path("checkpoint"));
  require_file(rc.path("dataset") / "manifest.json", "dataset");
  const auto ds = load_dataset(rc.path("dataset"));
  const fs::path out = rc.path("out");
  const auto prepared = prepare_all(ds);
  const auto which = rc.string("split");
  std::vector<std::size_t> idx;
  if (which == "all") {
    for (std::size_t i = 0; i < prepared.size(); ++i) idx.push_back(i);
  } else {
    const auto seed = loaded->manifest.value("split_seed", std::uint64_t{0});
    const auto split = split_dataset(prepared.size(), seed);
    if (which == "test") idx = split.test;
    else if (which == "val") idx = split.val;
    else if (which == "train") idx = split.train;
    else throw ValidationError("$.split", "expected test, val, train or all, got '" + which + "'");
  }
  if (idx.empty()) throw ValidationError("$.split", "split '" + which + "' is empty");
  if (loaded->model->config().gnn.in_dim != std::size_t(prepared.front().features.cols()) ||
      loaded->model->config().text_dim != std::size_t(prepared.front().text.cols())) {
    throw ValidationError("$.dataset", "feature widths do not match the checkpoint");
  }

  const auto samples = pick(prepared, idx);
  const Matrix pred = loaded->model->predict(loaded->store, samples);
  Matrix targets(pred.rows(), static_cast<Eigen::Index>(kNumTargets));
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    for (std::size_t j = 0; j < kNumTargets; ++j) targets(i, Eigen::Index(j)) = samples[i]->targets[j];
  }
  const auto m = mpm::compute_metrics(pred, targets);
  EvalTable table;
  table.samples = idx.size();
  table.rmse = m.rmse;
  table.rmse_all = m.all;
  std::array<std::vector<double>, kNumTargets> phys_pred, phys_true;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    TargetVector t{};
    for (std::size_t j = 0; j < kNumTargets; ++j) t[j] = pred(i, Eigen::Index(j));
    const auto p = ds.normalizer.denormalize(t).values();
    const auto y = ds.samples[idx[i]].metrics.values();
    for (std::size_t j = 0; j < kNumTargets; ++j) {
      phys_pred[j].push_back(p[j]);
      phys_true[j].push_back(y[j]);
    }
  }
  double mape_sum = 0.0;
  bool all_defined = true;
  for (std::size_t j = 0; j < kNumTargets; ++j) {
    const bool has_zero = std::find(phys_true[j].begin(), phys_true[j].end(), 0.0) != phys_true[j].end();
    if (has_zero) {
      all_defined = false;
      continue;
    }
    table.mape[j] = mpm::mape(phys_pred[j], phys_true[j]);
    mape_sum += *table.mape[j];
  }
  if (all_defined) table.mape_all = mape_sum;

  rc.write_snapshot(out);
  write_text_file(out / "eval.csv", eval_csv(table));
  std::cout << "split " << which << ", " << table.samples << " samples\n" << eval_table_text(table);
  return kExitOk;
}

// ------------------------------------------------------------------- explore

ObjectiveMode parse_objectives(const std::string& s) {
  if (s == "latency_utilization") return ObjectiveMode::latency_utilization;
  if (s == "all_five") return ObjectiveMode::all_five;
  throw ValidationError("$.objectives", "expected latency_utilization or all_five, got '" + s + "'");
}

int run_explore(RunConfig& rc) {
  const auto model = load_oracle(rc);
  const auto space = load_space(rc);
  check_space(model, space);
  const fs::path out = rc.path("out");
  const auto seed = rc.count("seed");
  const auto mode = parse_objectives(rc.string("objectives"));
  const auto strategy = rc.string("strategy");
  if (strategy != "llm4dse" && strategy != "sa" && strategy != "random") {
    throw ValidationError("$.strategy", "expected llm4dse, sa or random, got '" + strategy + "'");
  }

  std::optional<ParetoArchive> reference;
  const auto ref_kind = rc.string("reference");
  if (ref_kind == "exhaustive") {
    reference = reference_front(model, space, rc.count("exhaustive_limit"), mode);
  } else if (ref_kind != "none") {
    throw ValidationError("$.reference", "expected exhaustive or none, got '" + ref_kind + "'");
  }
  const auto reference_objectives = reference ? reference->objectives() : std::vector<Objectives>{};
  const auto* ref_ptr = reference ? &reference_objectives : nullptr;

  std::unique_ptr<LoadedModel> loaded;
  std::optional<Dataset> ds;
  std::optional<HashedFeaturizer> provider;
  std::unique_ptr<dse::Evaluator> evaluator;
  const auto evaluator_kind = rc.string("evaluator");
  if (evaluator_kind == "oracle") {
    evaluator = std::make_unique<dse::OracleEvaluator>(model, space, mode);
  } else if (evaluator_kind == "mpm") {
    loaded = load_model(rc.path("checkpoint"));
    require_file(rc.path("dataset") / "manifest.json", "dataset");
    ds = load_dataset(rc.path("dataset"));
    provider = provider_from_id(ds->provider_id);
    evaluator = std::make_unique<dse::MpmEvaluator>(*loaded->model, loaded->store, model, space, *provider,
                                                    ds->normalizer, ds->node_scale, mode);
  } else {
    throw ValidationError("$.evaluator", "expected oracle or mpm, got '" + evaluator_kind + "'");
  }

  dse::ExploreResult result;
  std::vector<dse::TranscriptEntry> transcript;
  if (strategy == "llm4dse") {
    auto backend_doc = rc.at("backend");
    if (backend_doc.value("kind", "") == "mutation-mock" && !backend_doc.contains("seed")) {
      backend_doc["seed"] = seed;
      rc.set("backend", backend_doc);
    }
    const auto spec = dse::LlmBackendSpec::from_json(backend_doc, "$.backend");
    if (spec.kind == dse::LlmBackendSpec::Kind::replay) require_file(spec.transcript, "backend.transcript");
    auto backend = dse::make_backend(spec);
    dse::RecordingBackend recorder(*backend);
    dse::ExploreConfig ec;
    ec.n_max = rc.count("n_max");
    ec.batch = rc.count("batch");
    ec.k = rc.count("k");
    ec.seed = seed;
    ec.mode = dse::parse_prompt_mode(rc.string("prompt_mode"));
    if (ec.k == 0) throw ValidationError("$.k", "must be at least 1");
    rc.write_snapshot(out);
    result = dse::run_llm4dse(space, model.kernel.kernel_id, *evaluator, recorder, ec, ref_ptr);
    transcript = recorder.transcript();
  } else {
    dse::BaselineConfig bc;
    bc.budget = rc.count("n_max");
    bc.seed = seed;
    bc.latency_weight = rc.number("sa_latency_weight");
    bc.initial_temperature = rc.number("sa_initial_temperature");
    bc.cooling = rc.number("sa_cooling");
    bc.stall_limit = rc.count("sa_stall_limit");
    rc.write_snapshot(out);
    result = strategy == "sa" ? dse::sa_baseline(space, *evaluator, bc, ref_ptr)
                              : dse::random_baseline(space, *evaluator, bc, ref_ptr);
  }

  write_json_file(out / "result.json", result.to_json(space));
  write_text_file(out / "front.csv", front_csv(result.archive.entries()));
  write_text_file(out / "convergence.csv", dse::convergence_csv(result.history));
  if (!result.prompts.empty()) {
    std::string all;
    for (std::size_t i = 0; i < result.prompts.size(); ++i) {
      all += "===== prompt " + std::to_string(i + 1) + " =====\n" + result.prompts[i];
    }
    write_text_file(out / "prompts.txt", all);
  }
  if (rc.flag("record_transcript")) write_json_file(out / "transcript.json", dse::transcript_to_json(transcript));
  if (reference) write_text_file(out / "reference_front.csv", front_csv(reference->entries()));

  std::cout << strategy << ": " << result.evaluated.size() << " evaluations, archive of " << result.archive.size();
  if (reference && !result.archive.empty()) {
    std::vector<Objectives> truth;
    for (const auto& e : result.archive.entries()) {
      truth.push_back(objectives_of(evaluate(model, space, e.config), model.capacities, mode));
    }
    const auto report = adrs_report(reference_objectives, truth);
    write_json_file(out / "adrs.json", report.to_json());
    std::cout << ", ADRS " << fixed(report.adrs, 6);
  }
  std::cout << '\n';
  std::size_t fallbacks = 0;
  for (const auto& h : result.history) fallbacks += h.fallback ? 1 : 0;
  if (fallbacks > 0) std::cerr << "warning: " << fallbacks << " round(s) fell back to random sampling\n";

  if (result.error) throw dse::BackendError(*result.error + " (partial results written to " + out.string() + ")");
  if (result.archive.empty()) {
    throw BudgetExhausted("no feasible configuration among " + std::to_string(result.evaluated.size()) +
                          " evaluations");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------- adrs

std::vector<ArchiveEntry> load_front(const fs::path& p, const std::string& key) {
  require_file(p, key);
  return parse_front_csv(read_text_file(p), p.string());
}

int run_adrs(const RunConfig& rc) {
  const auto reference = load_front(rc.path("reference"), "reference");
  const auto approx = load_front(rc.path("approx"), "approx");
  const fs::path out = rc.path("out");
  auto objectives = [](const std::vector<ArchiveEntry>& front) {
    std::vector<Objectives> o;
    for (const auto& e : front) o.push_back(e.objectives);
    return o;
  };
  if (!reference.empty() && !approx.empty() && reference.front().objectives.size() != approx.front().objectives.size()) {
    throw ValidationError("$.approx", "objective count differs from the reference front");
  }
  const auto report = adrs_report(objectives(reference), objectives(approx));
  rc.write_snapshot(out);
  write_json_file(out / "adrs.json", report.to_json());
  std::cout << "ADRS " << full_precision(report.adrs) << " (|reference| " << report.reference_size
            << ", |approx| " << report.approx_size << ")\n";
  return kExitOk;
}

// -------------------------------------------------------------------- report

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text_file(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string summarize_dir(const fs::path& dir) {
  std::ostringstream out;
  bool any = false;
  if (fs::exists(dir / "manifest.json")) {
    const auto m = read_json_file(dir / "manifest.json");
    out << "| dataset | samples | C_max | provider |\n|---|---|---|---|\n| " << m.value("kernel_id", "?") << " | "
        << m.at("samples").size() << " | " << m.value("c_max", 0) << " | " << m.value("provider", "?") << " |\n\n";
    any = true;
  }
  if (fs::exists(dir / "metrics.csv")) {
    const auto rows = read_csv(dir / "metrics.csv");
    if (rows.size() > 1) {
      const auto& header = rows.front();
      const auto col = std::find(header.begin(), header.end(), "val_all") - header.begin();
      std::size_t best = 1;
      for (std::size_t r = 1; r < rows.size(); ++r) {
        if (std::stod(rows[r][col]) < std::stod(rows[best][col])) best = r;
      }
      out << "| epochs | best epoch | best val All | final train loss |\n|---|---|---|---|\n| " << rows.size() - 1
          << " | " << rows[best][0] << " | " << fixed(std::stod(rows[best][col]), 4) << " | "
          << fixed(std::stod(rows.back()[1]), 4) << " |\n\n";
      any = true;
    }
  }
  if (fs::exists(dir / "eval.csv")) {
    const auto rows = read_csv(dir / "eval.csv");
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out << '|';
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        const auto& cell = rows[r][c];
        out << ' ' << (r > 0 && c > 0 && cell != "n/a" ? fixed(std::stod(cell), 4) : cell) << " |";
      }
      out << '\n';
      if (r == 0) {
        out << '|';
        for (std::size_t c = 0; c < rows[r].size(); ++c) out << "---|";
        out << '\n';
      }
    }
    out << '\n';
    any = true;
  }
  if (fs::exists(dir / "result.json")) {
    const auto r = read_json_file(dir / "result.json");
    std::size_t fallbacks = 0;
    for (const auto& h : r.at("history")) fallbacks += h.at("fallback").get<bool>() ? 1 : 0;
    std::string adrs_cell = "n/a";
    if (fs::exists(dir / "adrs.json")) adrs_cell = fixed(read_json_file(dir / "adrs.json").at("adrs").get<double>(), 6);
    out << "| evaluations | archive | ADRS | fallback rounds | diagnostics | error |\n|---|---|---|---|---|---|\n| "
        << r.at("evaluated").size() << " | " << r.at("archive").size() << " | " << adrs_cell << " | " << fallbacks
        << " | " << r.at("diagnostics").size() << " | " << (r.at("error").is_null() ? "none" : "yes") << " |\n\n";
    any = true;
  }
  if (fs::exists(dir / "adrs.json") && !fs::exists(dir / "result.json")) {
    const auto a = read_json_file(dir / "adrs.json");
    out << "| ADRS | reference | approx |\n|---|---|---|\n| " << fixed(a.at("adrs").get<double>(), 6) << " | "
        << a.at("reference_size") << " | " << a.at("approx_size") << " |\n\n";
    any = true;
  }
  return any ? out.str() : std::string();
}

int run_report(const RunConfig& rc) {
  const fs::path run = rc.path("run");
  if (!fs::is_directory(run)) throw ValidationError("$.run", "not a directory: " + run.string());
  std::vector<fs::path> dirs{run};
  std::vector<fs::path> children;
  for (const auto& e : fs::directory_iterator(run)) {
    if (e.is_directory()) children.push_back(e.path());
  }
  std::sort(children.begin(), children.end());
  dirs.insert(dirs.end(), children.begin(), children.end());
  std::string text;
  for (const auto& d : dirs) {
    const auto s = summarize_dir(d);
    if (s.empty()) continue;
    text += "## " + (d == run ? run.filename().string() : d.filename().string()) + "\n\n" + s;
  }
  if (text.empty()) throw ValidationError("$.run", "no run outputs found under " + run.string());
  const fs::path out = rc.path("out");
  rc.write_snapshot(out);
  write_text_file(out / "report.md", text);
  std::cout << text;
  return kExitOk;
}

// ---------------------------------------------------------------- front end

struct FlagBinding {
  std::string key;
  std::string text;
  bool literal = false;  ///< store the text as a string instead of reading it as a value
  CLI::Option* option = nullptr;
};

struct Command {
  CLI::App* app = nullptr;
  Json defaults;
  std::function<int(RunConfig&)> run;
  std::string config;
  std::vector<std::string> sets;
  std::deque<FlagBinding> flags;

  void bind(const std::string& flag, const std::string& key, const std::string& help, bool literal = false) {
    auto& b = flags.emplace_back();
    b.key = key;
    b.literal = literal;
    b.option = app->add_option(flag, b.text, help);
  }
};

Command& add_command(CLI::App& app, std::deque<Command>& commands, const std::string& name,
                     const std::string& description, Json defaults, std::function<int(RunConfig&)> run) {
  auto& c = commands.emplace_back();
  c.app = app.add_subcommand(name, description);
  c.defaults = std::move(defaults);
  c.run = std::move(run);
  c.app->add_option("-c,--config", c.config, "Config document (unknown keys are rejected)");
  c.app->add_option("--set", c.sets, "Override a config key, e.g. --set epochs=10");
  c.bind("-o,--out", "out", "Output directory", true);
  if (c.defaults.contains("seed")) c.bind("--seed", "seed", "Global seed");
  return c;
}

int execute(Command& c) {
  RunConfig rc(c.defaults);
  if (!c.config.empty()) rc.merge_file(c.config);
  for (const auto& s : c.sets) rc.apply_override(s);
  for (const auto& b : c.flags) {
    if (b.option->count() == 0) continue;
    if (b.key == "backend.kind" && rc.at("backend").value("kind", "") != b.text) {
      rc.set("backend", Json{{"kind", b.text}});
    } else if (b.literal) {
      rc.set(b.key, b.text);
    } else {
      rc.apply_override(b.key + "=" + b.text);
    }
  }
  return c.run(rc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal QoR prediction and LLM-driven pragma design-space exploration"};
  app.require_subcommand(1);
  std::deque<Command> commands;

  auto& gen = add_command(app, commands, "gen-data", "Generate a labelled graph-text dataset from an oracle model",
                          Json{{"kernel", nullptr},
                               {"space", nullptr},
                               {"n", 0},
                               {"seed", 0},
                               {"text_dim", kDefaultTextDim},
                               {"text_seed", 0},
                               {"embeddings", nullptr},
                               {"out", "out/gen-data"}},
                          run_gen_data);
  gen.bind("--kernel", "kernel", "Oracle model file", true);
  gen.bind("--space", "space", "Design space file", true);
  gen.bind("-n,--samples", "n", "Number of samples (0 = whole space)");

  auto& train = add_command(app, commands, "train", "Train the predictor on a dataset",
                            Json{{"dataset", nullptr},
                                 {"seed", 0},
                                 {"epochs", 500},
                                 {"batch", 64},
                                 {"lr", 1e-3},
                                 {"hidden", 128},
                                 {"layers", 4},
                                 {"heads", 4},
                                 {"head_hidden", 64},
                                 {"variant", "full"},
                                 {"stop_below", 0.0},
                                 {"verbose", false},
                                 {"out", "out/train"}},
                            run_train);
  train.bind("--dataset", "dataset", "Dataset directory", true);
  train.bind("--epochs", "epochs", "Training epochs");
  train.bind("--variant", "variant", "full, graph_only or text_only", true);

  auto& ev = add_command(app, commands, "eval", "Score a checkpoint on a dataset split",
                         Json{{"checkpoint", nullptr}, {"dataset", nullptr}, {"split", "test"}, {"out", "out/eval"}},
                         run_eval);
  ev.bind("--checkpoint", "checkpoint", "Checkpoint file", true);
  ev.bind("--dataset", "dataset", "Dataset directory", true);
  ev.bind("--split", "split", "test, val, train or all", true);

  auto& ex = add_command(app, commands, "explore", "Explore a design space",
                         Json{{"kernel", nullptr},
                              {"space", nullptr},
                              {"seed", 0},
                              {"strategy", "llm4dse"},
                              {"n_max", 100},
                              {"batch", 5},
                              {"k", 8},
                              {"prompt_mode", "peodse"},
                              {"objectives", "latency_utilization"},
                              {"reference", "exhaustive"},
                              {"exhaustive_limit", 100000},
                              {"evaluator", "oracle"},
                              {"checkpoint", nullptr},
                              {"dataset", nullptr},
                              {"backend", Json{{"kind", "mutation-mock"}}},
                              {"record_transcript", false},
                              {"sa_latency_weight", 1.0},
                              {"sa_initial_temperature", 0.1},
                              {"sa_cooling", 0.95},
                              {"sa_stall_limit", 50},
                              {"out", "out/explore"}},
                         run_explore);
  ex.bind("--kernel", "kernel", "Oracle model file", true);
  ex.bind("--space", "space", "Design space file", true);
  ex.bind("--strategy", "strategy", "llm4dse, sa or random", true);
  ex.bind("--n-max", "n_max", "Evaluation budget");
  ex.bind("--backend", "backend.kind", "http-chat, replay or mutation-mock", true);
  ex.bind("--transcript", "backend.transcript", "Replay transcript file", true);
  ex.bind("--prompt-mode", "prompt_mode", "peodse, zero_shot, few_shot or instruction_only", true);
  ex.bind("--evaluator", "evaluator", "oracle or mpm", true);
  ex.bind("--checkpoint", "checkpoint", "Checkpoint for the mpm evaluator", true);
  ex.bind("--dataset", "dataset", "Dataset directory for the mpm evaluator", true);
  ex.bind("--record", "record_transcript", "Write transcript.json (true/false)");

  auto& ad = add_command(app, commands, "adrs", "ADRS of an approximate front against a reference front",
                         Json{{"reference", nullptr}, {"approx", nullptr}, {"out", "out/adrs"}}, run_adrs);
  ad.bind("--reference", "reference", "Reference front CSV", true);
  ad.bind("--approx", "approx", "Approximate front CSV", true);

  auto& rep = add_command(app, commands, "report", "Summary tables of a run directory",
                          Json{{"run", nullptr}, {"out", "out/report"}}, run_report);
  rep.bind("--run", "run", "Run directory", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  for (auto& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      return execute(c);
    } catch (const ValidationError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitValidation;
    } catch (const Json::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitValidation;
    } catch (const dse::BackendError& e) {
      std::cerr << "backend error: " << e.what() << '\n';
      return kExitBackend;
    } catch (const BudgetExhausted& e) {
      std::cerr << "budget exhausted: " << e.what() << '\n';
      return kExitBudget;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitFailure;
    }
  }
  return kExitFailure;
}
