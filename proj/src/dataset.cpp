#include "mpmdse/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace mpmdse {

TargetVector Normalizer::normalize(const QorMetrics& m) const {
  return {std::log1p(double(m.latency)) / std::log1p(double(c_max)), double(m.lut) / double(capacities.lut),
          double(m.dsp) / double(capacities.dsp), double(m.ff) / double(capacities.ff),
          double(m.bram) / double(capacities.bram)};
}

QorMetrics Normalizer::denormalize(const TargetVector& t) const {
  auto res = [](double frac, std::int64_t cap) {
    return static_cast<std::int64_t>(std::llround(std::max(0.0, frac) * double(cap)));
  };
  QorMetrics m;
  m.latency = static_cast<std::int64_t>(std::llround(std::max(0.0, std::expm1(t[0] * std::log1p(double(c_max))))));
  m.lut = res(t[1], capacities.lut);
  m.dsp = res(t[2], capacities.dsp);
  m.ff = res(t[3], capacities.ff);
  m.bram = res(t[4], capacities.bram);
  m.feasible = m.lut <= capacities.lut && m.dsp <= capacities.dsp && m.ff <= capacities.ff &&
               m.bram <= capacities.bram;
  return m;
}

GraphTextSample make_sample(const OracleModel& model, const Cdfg& base_graph, const DesignSpace& space,
                            const DesignConfiguration& cfg, const EmbeddingProvider& provider,
                            const Normalizer& normalizer, EmbeddingCache* cache) {
  GraphTextSample s;
  s.config = cfg;
  s.id = model.kernel.kernel_id + "-" + cfg.key();
  const auto text = merge(space, cfg, {model.kernel.kernel_id, model.kernel.source_template});
  s.embedding_key = EmbeddingCache::key_for(text);
  const auto emb = cache ? embed_cached(provider, *cache, text) : provider.embed(text);
  s.text = emb.values;
  s.graph = insert_pragma_nodes(base_graph, space, cfg);
  s.metrics = evaluate(model, space, cfg);
  s.targets = normalizer.normalize(s.metrics);
  return s;
}

Dataset gen_dataset(const OracleModel& model, const DesignSpace& space, const EmbeddingProvider& provider,
                    const GenDataOptions& opts, EmbeddingCache* cache) {
  const auto size = space_size(space);
  if (opts.n == 0) throw ValidationError("n", "dataset size must be positive");
  if (opts.n > size) {
    throw ValidationError("n", "requested " + std::to_string(opts.n) + " samples but the space has only " +
                                   std::to_string(size) + " configurations");
  }
  check_space(model, space);
  validate_template(space, {model.kernel.kernel_id, model.kernel.source_template});
  const auto configs = opts.n == size ? enumerate(space, size) : sample_distinct(space, opts.seed, opts.n);

  Dataset ds;
  ds.kernel_id = model.kernel.kernel_id;
  ds.provider_id = provider.id();
  ds.normalizer.capacities = model.capacities;
  ds.normalizer.c_max = 1;
  for (const auto& c : configs) ds.normalizer.c_max = std::max(ds.normalizer.c_max, evaluate(model, space, c).latency);

  const auto base = build_cdfg(model.kernel, model.op_costs);
  ds.samples.reserve(configs.size());
  for (const auto& c : configs) {
    ds.samples.push_back(make_sample(model, base, space, c, provider, ds.normalizer, cache));
  }
  std::vector<const Cdfg*> graphs;
  for (const auto& s : ds.samples) graphs.push_back(&s.graph);
  ds.node_scale = NodeFeatureScale::fit(graphs);
  return ds;
}

Split split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw ValidationError("samples", "need at least 10 samples to split, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto held = n * 15 / 100;
  Split s;
  s.test.assign(order.begin(), order.begin() + held);
  s.val.assign(order.begin() + held, order.begin() + 2 * held);
  s.train.assign(order.begin() + 2 * held, order.end());
  return s;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  EmbeddingCache cache;
  Json samples = Json::array();
  for (const auto& s : ds.samples) {
    if (s.text.rows() != 1) throw ValidationError("samples." + s.id, "only pooled embeddings can be saved");
    cache.put(s.embedding_key, {s.text.row(0), ds.provider_id});
    const auto graph_file = "graphs/" + s.id + ".json";
    write_text_file(dir / graph_file, export_graph(s.graph));
    samples.push_back(Json{{"id", s.id},
                           {"graph", graph_file},
                           {"embedding_key", s.embedding_key},
                           {"config", s.config.indices},
                           {"targets", s.targets},
                           {"metrics", s.metrics.to_json()}});
  }
  cache.save(dir / "embeddings.bin");
  write_json_file(dir / "manifest.json", Json{{"kernel_id", ds.kernel_id},
                                              {"capacities", ds.normalizer.capacities.to_json()},
                                              {"c_max", ds.normalizer.c_max},
                                              {"node_scale", ds.node_scale.to_json()},
                                              {"provider", ds.provider_id},
                                              {"embeddings", "embeddings.bin"},
                                              {"samples", samples}});
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto doc = read_json_file(manifest_path);
  try {
    doc::reject_unknown(doc, {"kernel_id", "capacities", "c_max", "node_scale", "provider", "embeddings", "samples"},
                        "$");
    Dataset ds;
    ds.kernel_id = doc::get_string(doc, "kernel_id", "$");
    ds.normalizer.capacities = Resources::from_json(doc::get_object(doc, "capacities", "$"), "$.capacities");
    ds.normalizer.c_max = doc::get_int(doc, "c_max", "$");
    if (ds.normalizer.c_max < 1) throw ValidationError("$.c_max", "must be at least 1");
    const auto& cap = ds.normalizer.capacities;
    if (cap.lut <= 0 || cap.dsp <= 0 || cap.ff <= 0 || cap.bram <= 0) {
      throw ValidationError("$.capacities", "capacities must be positive");
    }
    ds.node_scale = NodeFeatureScale::from_json(doc::get_object(doc, "node_scale", "$"), "$.node_scale");
    ds.provider_id = doc::get_string(doc, "provider", "$");
    const auto cache = EmbeddingCache::load(dir / doc::get_string(doc, "embeddings", "$"));
    const auto& samples = doc::get_array(doc, "samples", "$");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto path = "$.samples[" + std::to_string(i) + "]";
      const auto& item = samples[i];
      doc::reject_unknown(item, {"id", "graph", "embedding_key", "config", "targets", "metrics"}, path);
      GraphTextSample s;
      s.id = doc::get_string(item, "id", path);
      const auto graph_file = dir / doc::get_string(item, "graph", path);
      try {
        s.graph = import_graph(read_text_file(graph_file));
      } catch (const ValidationError& e) {
        throw e.under(graph_file.string());
      }
      s.embedding_key = doc::get_string(item, "embedding_key", path);
      const auto emb = cache.get(s.embedding_key);
      if (!emb) throw ValidationError(path + ".embedding_key", "no cached embedding for key " + s.embedding_key);
      s.text = emb->values;
      for (const auto& v : doc::get_array(item, "config", path)) {
        if (!v.is_number_unsigned()) throw ValidationError(path + ".config", "expected value indices");
        s.config.indices.push_back(v.get<std::uint32_t>());
      }
      const auto& t = doc::get_array(item, "targets", path);
      if (t.size() != kNumTargets) throw ValidationError(path + ".targets", "expected 5 targets");
      for (std::size_t j = 0; j < kNumTargets; ++j) {
        if (!t[j].is_number()) throw ValidationError(path + ".targets[" + std::to_string(j) + "]", "expected a number");
        s.targets[j] = t[j].get<double>();
      }
      s.metrics = QorMetrics::from_json(doc::get_object(item, "metrics", path), path + ".metrics");
      ds.samples.push_back(std::move(s));
    }
    return ds;
  } catch (const ValidationError& e) {
    throw e.under(manifest_path.string());
  }
}

}  // namespace mpmdse
