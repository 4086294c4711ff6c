#include "mpmdse/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

namespace mpmdse {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::int64_t round_nonneg(double x) { return static_cast<std::int64_t>(std::llround(std::max(0.0, x))); }

struct OpAggregate {
  double lut = 0;
  double ff = 0;
  std::int64_t dsp = 0;
};

OpAggregate op_totals(const OpCounts& ops, const OpCostTable& c) {
  OpAggregate a;
  a.lut = double(ops.add * c.add.lut + ops.mul * c.mul.lut + ops.load * c.load.lut + ops.store * c.store.lut);
  a.ff = double(ops.add * c.add.ff + ops.mul * c.mul.ff + ops.load * c.load.ff + ops.store * c.store.ff);
  a.dsp = ops.add * c.add.dsp + ops.mul * c.mul.dsp + ops.load * c.load.dsp + ops.store * c.store.dsp;
  return a;
}

std::int64_t body_depth(const OpCounts& ops, const OpCostTable& c, std::int64_t ports, std::int64_t partition) {
  std::int64_t chain = 0;
  if (ops.load) chain += c.load.latency;
  if (ops.mul) chain += c.mul.latency;
  if (ops.add) chain += c.add.latency;
  if (ops.store) chain += c.store.latency;
  const auto mem = ops.load + ops.store;
  const auto stalls = mem > 0 ? ceil_div(mem, ports * partition) - 1 : 0;
  return std::max<std::int64_t>(1, chain) + stalls;
}

QorMetrics compute(const OracleModel& model, const ResolvedKnobs& knobs) {
  const auto& k = model.kernel;
  const auto& co = model.coefficients;
  std::int64_t p_min = 1;
  bool any_array = false;
  for (const auto& a : k.arrays) {
    const auto it = knobs.partition.find(a.name);
    const auto p = it == knobs.partition.end() ? 1 : it->second;
    p_min = any_array ? std::min(p_min, p) : p;
    any_array = true;
  }

  std::map<std::string, std::vector<std::size_t>> children;
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < k.loops.size(); ++i) {
    if (k.loops[i].parent) {
      children[*k.loops[i].parent].push_back(i);
    } else {
      roots.push_back(i);
    }
  }

  const ResolvedKnobs::Loop identity;
  auto knob = [&](const std::string& id) -> const ResolvedKnobs::Loop& {
    const auto it = knobs.loops.find(id);
    return it == knobs.loops.end() ? identity : it->second;
  };

  std::function<std::int64_t(std::size_t)> latency = [&](std::size_t i) -> std::int64_t {
    const auto& l = k.loops[i];
    const auto& kn = knob(l.id);
    std::int64_t s = 0;
    for (const auto c : children[l.id]) s += latency(c);
    const auto d = body_depth(l.ops, model.op_costs, co.memory_ports, p_min);
    const auto iters = ceil_div(l.trip_count, kn.unroll);
    std::int64_t total = 0;
    switch (kn.pipeline) {
      case ResolvedKnobs::Pipeline::off: total = iters * (d + s); break;
      case ResolvedKnobs::Pipeline::on: total = (iters - 1) * std::max<std::int64_t>(1, s) + d + s; break;
      case ResolvedKnobs::Pipeline::flatten: total = (iters - 1) + d + s; break;
    }
    return total + co.tile_latency * (kn.tile - 1);
  };

  QorMetrics m;
  for (const auto r : roots) m.latency += latency(r);
  m.latency = std::max<std::int64_t>(1, m.latency);

  double lut = double(model.base.lut);
  double ff = double(model.base.ff);
  std::int64_t dsp = model.base.dsp;
  std::int64_t bram = model.base.bram;
  for (const auto& l : k.loops) {
    const auto& kn = knob(l.id);
    const auto ops = op_totals(l.ops, model.op_costs);
    double pipe_lut = 0, pipe_ff = 0;
    if (kn.pipeline == ResolvedKnobs::Pipeline::on) {
      pipe_lut = co.pipeline_on_lut;
      pipe_ff = co.pipeline_on_ff;
    } else if (kn.pipeline == ResolvedKnobs::Pipeline::flatten) {
      pipe_lut = co.pipeline_flatten_lut;
      pipe_ff = co.pipeline_flatten_ff;
    }
    const double u = double(kn.unroll - 1);
    lut += ops.lut * (1.0 + co.unroll_lut * u) * (1.0 + pipe_lut);
    ff += ops.ff * (1.0 + co.unroll_ff * u) * (1.0 + pipe_ff);
    dsp += ops.dsp * kn.unroll;
    lut += double(co.tile_lut * (kn.tile - 1));
  }
  for (const auto& a : k.arrays) {
    const auto it = knobs.partition.find(a.name);
    const auto p = it == knobs.partition.end() ? 1 : it->second;
    lut += double(co.partition_lut * (p - 1));
    ff += double(co.partition_ff * (p - 1));
    bram += co.partition_bram * p;
  }
  m.lut = round_nonneg(lut);
  m.ff = round_nonneg(ff);
  m.dsp = dsp;
  m.bram = bram;
  const auto& cap = model.capacities;
  m.feasible = m.lut <= cap.lut && m.dsp <= cap.dsp && m.ff <= cap.ff && m.bram <= cap.bram;
  return m;
}

}  // namespace

Json Resources::to_json() const { return Json{{"lut", lut}, {"dsp", dsp}, {"ff", ff}, {"bram", bram}}; }

Resources Resources::from_json(const Json& doc, const std::string& path) {
  doc::reject_unknown(doc, {"lut", "dsp", "ff", "bram"}, path);
  return {doc::get_nonneg(doc, "lut", path), doc::get_nonneg(doc, "dsp", path), doc::get_nonneg(doc, "ff", path),
          doc::get_nonneg(doc, "bram", path)};
}

Json QorMetrics::to_json() const {
  return Json{{"latency", latency}, {"lut", lut},   {"dsp", dsp},
              {"ff", ff},           {"bram", bram}, {"feasible", feasible}};
}

QorMetrics QorMetrics::from_json(const Json& doc, const std::string& path) {
  doc::reject_unknown(doc, {"latency", "lut", "dsp", "ff", "bram", "feasible"}, path);
  QorMetrics m;
  m.latency = doc::get_nonneg(doc, "latency", path);
  m.lut = doc::get_nonneg(doc, "lut", path);
  m.dsp = doc::get_nonneg(doc, "dsp", path);
  m.ff = doc::get_nonneg(doc, "ff", path);
  m.bram = doc::get_nonneg(doc, "bram", path);
  const auto& f = doc::require(doc, "feasible", path);
  if (!f.is_boolean()) throw ValidationError(path + ".feasible", "expected a boolean");
  m.feasible = f.get<bool>();
  return m;
}

Json OracleCoefficients::to_json() const {
  return Json{{"unroll_lut", unroll_lut},
              {"unroll_ff", unroll_ff},
              {"pipeline_on_lut", pipeline_on_lut},
              {"pipeline_flatten_lut", pipeline_flatten_lut},
              {"pipeline_on_ff", pipeline_on_ff},
              {"pipeline_flatten_ff", pipeline_flatten_ff},
              {"partition_lut", partition_lut},
              {"partition_ff", partition_ff},
              {"partition_bram", partition_bram},
              {"tile_latency", tile_latency},
              {"tile_lut", tile_lut},
              {"memory_ports", memory_ports}};
}

OracleCoefficients OracleCoefficients::from_json(const Json& doc, const std::string& path) {
  doc::reject_unknown(doc,
                      {"unroll_lut", "unroll_ff", "pipeline_on_lut", "pipeline_flatten_lut", "pipeline_on_ff",
                       "pipeline_flatten_ff", "partition_lut", "partition_ff", "partition_bram", "tile_latency",
                       "tile_lut", "memory_ports"},
                      path);
  OracleCoefficients c;
  auto num = [&](const char* key, double& out) {
    if (doc.contains(key)) out = doc::get_number(doc, key, path);
    if (out < 0) throw ValidationError(path + "." + key, "coefficient must be non-negative");
  };
  auto integer = [&](const char* key, std::int64_t& out) {
    if (doc.contains(key)) out = doc::get_nonneg(doc, key, path);
  };
  num("unroll_lut", c.unroll_lut);
  num("unroll_ff", c.unroll_ff);
  num("pipeline_on_lut", c.pipeline_on_lut);
  num("pipeline_flatten_lut", c.pipeline_flatten_lut);
  num("pipeline_on_ff", c.pipeline_on_ff);
  num("pipeline_flatten_ff", c.pipeline_flatten_ff);
  integer("partition_lut", c.partition_lut);
  integer("partition_ff", c.partition_ff);
  integer("partition_bram", c.partition_bram);
  integer("tile_latency", c.tile_latency);
  integer("tile_lut", c.tile_lut);
  integer("memory_ports", c.memory_ports);
  if (c.memory_ports < 1) throw ValidationError(path + ".memory_ports", "must be at least 1");
  if (c.pipeline_on_lut > c.pipeline_flatten_lut || c.pipeline_on_ff > c.pipeline_flatten_ff) {
    throw ValidationError(path, "flatten coefficients must be at least the pipeline-on coefficients");
  }
  return c;
}

void OracleModel::validate() const {
  validate_description(kernel);
  const auto b = baseline(*this);
  if (capacities.lut <= b.lut || capacities.dsp < b.dsp || capacities.ff <= b.ff || capacities.bram < b.bram ||
      capacities.lut <= 0 || capacities.dsp <= 0 || capacities.ff <= 0 || capacities.bram <= 0) {
    throw ValidationError("capacities", "capacities must be positive and exceed baseline usage");
  }
}

Json OracleModel::to_json() const {
  auto cost = [](const OpCost& c) {
    return Json{{"latency", c.latency}, {"lut", c.lut}, {"dsp", c.dsp}, {"ff", c.ff}};
  };
  return Json{{"kernel", kernel.to_json()},
              {"op_costs",
               {{"add", cost(op_costs.add)},
                {"mul", cost(op_costs.mul)},
                {"load", cost(op_costs.load)},
                {"store", cost(op_costs.store)}}},
              {"base", base.to_json()},
              {"capacities", capacities.to_json()},
              {"coefficients", coefficients.to_json()}};
}

OracleModel OracleModel::from_json(const Json& doc) {
  doc::reject_unknown(doc, {"kernel", "op_costs", "base", "capacities", "coefficients"}, "$");
  OracleModel m;
  try {
    m.kernel = KernelDescription::from_json(doc::get_object(doc, "kernel", "$"));
  } catch (const ValidationError& e) {
    throw e.under("kernel");
  }
  if (doc.contains("op_costs")) {
    const auto& oc = doc::get_object(doc, "op_costs", "$");
    doc::reject_unknown(oc, {"add", "mul", "load", "store"}, "op_costs");
    auto read = [&](const char* key, OpCost& out) {
      if (!oc.contains(key)) return;
      const auto path = std::string("op_costs.") + key;
      const auto& c = doc::get_object(oc, key, "op_costs");
      doc::reject_unknown(c, {"latency", "lut", "dsp", "ff"}, path);
      out = {doc::get_nonneg(c, "latency", path), doc::get_nonneg(c, "lut", path), doc::get_nonneg(c, "dsp", path),
             doc::get_nonneg(c, "ff", path)};
    };
    read("add", m.op_costs.add);
    read("mul", m.op_costs.mul);
    read("load", m.op_costs.load);
    read("store", m.op_costs.store);
  }
  m.base = Resources::from_json(doc::get_object(doc, "base", "$"), "base");
  m.capacities = Resources::from_json(doc::get_object(doc, "capacities", "$"), "capacities");
  if (doc.contains("coefficients")) {
    m.coefficients = OracleCoefficients::from_json(doc::get_object(doc, "coefficients", "$"), "coefficients");
  }
  m.validate();
  return m;
}

ResolvedKnobs resolve_knobs(const OracleModel& model, const DesignSpace& space, const DesignConfiguration& cfg) {
  space.validate(cfg);
  std::set<std::string> loop_ids, array_names;
  for (const auto& l : model.kernel.loops) loop_ids.insert(l.id);
  for (const auto& a : model.kernel.arrays) array_names.insert(a.name);

  ResolvedKnobs out;
  std::set<std::pair<std::string, PragmaKind>> seen;
  for (std::size_t i = 0; i < space.num_directives(); ++i) {
    const auto& d = space.directive(i);
    const auto path = "directive " + d.name;
    if (!seen.insert({d.target, d.kind}).second) {
      throw ValidationError(path, "duplicate " + std::string(to_string(d.kind)) + " knob on '" + d.target + "'");
    }
    const auto v = cfg.indices[i];
    if (d.kind == PragmaKind::array_partition) {
      if (!array_names.contains(d.target)) throw ValidationError(path, "targets unknown array '" + d.target + "'");
      out.partition[d.target] = d.factor(v);
      continue;
    }
    if (!loop_ids.contains(d.target)) throw ValidationError(path, "targets unknown loop '" + d.target + "'");
    auto& loop = out.loops[d.target];
    switch (d.kind) {
      case PragmaKind::pipeline:
        loop.pipeline = d.domain[v] == "flatten" ? ResolvedKnobs::Pipeline::flatten
                        : d.domain[v] == "on"    ? ResolvedKnobs::Pipeline::on
                                                 : ResolvedKnobs::Pipeline::off;
        break;
      case PragmaKind::unroll: loop.unroll = d.factor(v); break;
      case PragmaKind::tile: loop.tile = d.factor(v); break;
      case PragmaKind::array_partition: break;
    }
  }
  return out;
}

void check_space(const OracleModel& model, const DesignSpace& space) {
  if (space.num_directives() == 0) throw ValidationError("directives", "design space has no directives");
  resolve_knobs(model, space, space.first());
}

QorMetrics evaluate(const OracleModel& model, const DesignSpace& space, const DesignConfiguration& cfg) {
  return compute(model, resolve_knobs(model, space, cfg));
}

QorMetrics baseline(const OracleModel& model) { return compute(model, ResolvedKnobs{}); }

double max_utilization(const QorMetrics& m, const Resources& cap) {
  return std::max({double(m.lut) / double(cap.lut), double(m.dsp) / double(cap.dsp), double(m.ff) / double(cap.ff),
                   double(m.bram) / double(cap.bram)});
}

}  // namespace mpmdse
