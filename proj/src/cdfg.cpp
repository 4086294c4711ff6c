#include "mpmdse/cdfg.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace mpmdse {

namespace {

const char* const kFieldNames[4] = {"node_type", "instruction_type", "function_type", "block_type"};

std::uint32_t category(const NodeFeatures& n, int field) {
  switch (field) {
    case 0: return n.node_type;
    case 1: return n.instruction_type;
    case 2: return n.function_type;
    default: return n.block_type;
  }
}

std::string join(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

std::string slot_target(const std::string& slot) { return slot.substr(0, slot.find('.')); }

std::uint32_t checked_u32(const Json& obj, const std::string& key, const std::string& path) {
  const auto v = doc::get_nonneg(obj, key, path);
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError(path + "." + key, "value out of range");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void Cdfg::validate() const {
  for (std::size_t f = 0; f < 4; ++f) {
    if (vocab_sizes[f] == 0) {
      throw ValidationError("vocab_sizes[" + std::to_string(f) + "]", "vocabulary size must be positive");
    }
  }
  for (std::size_t v = 0; v < nodes.size(); ++v) {
    const auto& n = nodes[v];
    for (int f = 0; f < 4; ++f) {
      if (category(n, f) >= vocab_sizes[f]) {
        throw ValidationError("nodes[" + std::to_string(v) + "]." + kFieldNames[f],
                              "index " + std::to_string(category(n, f)) + " >= vocabulary size " +
                                  std::to_string(vocab_sizes[f]));
      }
    }
    if (n.latency < 0 || n.lut < 0 || n.dsp < 0 || n.ff < 0) {
      throw ValidationError("nodes[" + std::to_string(v) + "]", "negative numeric feature");
    }
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& edge = edges[e];
    const auto path = "edges[" + std::to_string(e) + "]";
    if (edge.src >= nodes.size()) throw ValidationError(path + ".src", "node id out of range");
    if (edge.dst >= nodes.size()) throw ValidationError(path + ".dst", "node id out of range");
    if (edge.src == edge.dst) throw ValidationError(path, "self-loop");
    if (static_cast<std::uint32_t>(edge.flow) > 3) throw ValidationError(path + ".flow", "unknown flow kind");
  }
  for (const auto& [name, id] : anchors) {
    if (id >= nodes.size()) throw ValidationError("anchors." + name, "node id out of range");
  }
}

bool is_weakly_connected(const Cdfg& g) {
  const auto n = g.num_nodes();
  if (n == 0) return false;
  std::vector<std::uint32_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0u);
  auto find = [&](std::uint32_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t components = n;
  for (const auto& e : g.edges) {
    const auto a = find(e.src), b = find(e.dst);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

Json KernelDescription::to_json() const {
  Json loops_json = Json::array();
  for (const auto& l : loops) {
    Json links_json = Json::array();
    for (const auto& [a, b] : l.links) links_json.push_back(Json::array({a, b}));
    Json item{{"id", l.id},
              {"trip", l.trip_count},
              {"ops", {{"add", l.ops.add}, {"mul", l.ops.mul}, {"load", l.ops.load}, {"store", l.ops.store}}},
              {"links", links_json}};
    if (l.parent) item["parent"] = *l.parent;
    loops_json.push_back(std::move(item));
  }
  Json arrays_json = Json::array();
  for (const auto& a : arrays) arrays_json.push_back({{"name", a.name}, {"size", a.size}});
  return Json{{"kernel_id", kernel_id},
              {"source_template", source_template},
              {"loops", loops_json},
              {"arrays", arrays_json}};
}

KernelDescription KernelDescription::from_json(const Json& doc) {
  doc::reject_unknown(doc, {"kernel_id", "source_template", "loops", "arrays"}, "$");
  KernelDescription desc;
  desc.kernel_id = doc::get_string(doc, "kernel_id", "$");
  desc.source_template = doc::get_string(doc, "source_template", "$");
  const auto& loops = doc::get_array(doc, "loops", "$");
  for (std::size_t i = 0; i < loops.size(); ++i) {
    const auto path = "$.loops[" + std::to_string(i) + "]";
    const auto& item = loops[i];
    doc::reject_unknown(item, {"id", "trip", "ops", "parent", "links"}, path);
    LoopSpec l;
    l.id = doc::get_string(item, "id", path);
    l.trip_count = doc::get_int(item, "trip", path);
    const auto& ops = doc::get_object(item, "ops", path);
    doc::reject_unknown(ops, {"add", "mul", "load", "store"}, path + ".ops");
    auto opt = [&](const char* key) {
      return ops.contains(key) ? doc::get_nonneg(ops, key, path + ".ops") : 0;
    };
    l.ops = {opt("add"), opt("mul"), opt("load"), opt("store")};
    if (item.contains("parent") && !item["parent"].is_null()) {
      l.parent = doc::get_string(item, "parent", path);
    }
    if (item.contains("links")) {
      const auto& links = doc::get_array(item, "links", path);
      for (std::size_t j = 0; j < links.size(); ++j) {
        const auto& lk = links[j];
        if (!lk.is_array() || lk.size() != 2 || !lk[0].is_number_unsigned() || !lk[1].is_number_unsigned()) {
          throw ValidationError(path + ".links[" + std::to_string(j) + "]", "expected [producer, consumer]");
        }
        l.links.emplace_back(lk[0].get<std::uint32_t>(), lk[1].get<std::uint32_t>());
      }
    }
    desc.loops.push_back(std::move(l));
  }
  if (doc.contains("arrays")) {
    const auto& arrays = doc::get_array(doc, "arrays", "$");
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      const auto path = "$.arrays[" + std::to_string(i) + "]";
      doc::reject_unknown(arrays[i], {"name", "size"}, path);
      desc.arrays.push_back({doc::get_string(arrays[i], "name", path), doc::get_int(arrays[i], "size", path)});
    }
  }
  validate_description(desc);
  return desc;
}

void validate_description(const KernelDescription& desc) {
  if (desc.loops.empty()) throw ValidationError("loops", "no loops");
  std::map<std::string, std::size_t> index;
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < desc.loops.size(); ++i) {
    const auto& l = desc.loops[i];
    if (l.id.empty() || !index.emplace(l.id, i).second) bad.push_back(l.id.empty() ? "<empty>" : l.id);
  }
  if (!bad.empty()) throw ValidationError("loops", "duplicate or empty loop ids: " + join(bad));
  for (const auto& l : desc.loops) {
    if (l.trip_count < 1) bad.push_back(l.id);
  }
  if (!bad.empty()) throw ValidationError("loops", "non-positive trip counts: " + join(bad));
  for (const auto& l : desc.loops) {
    if (l.ops.add < 0 || l.ops.mul < 0 || l.ops.load < 0 || l.ops.store < 0) bad.push_back(l.id);
  }
  if (!bad.empty()) throw ValidationError("loops", "negative operation counts: " + join(bad));
  for (const auto& l : desc.loops) {
    if (l.parent && !index.contains(*l.parent)) bad.push_back(l.id + "->" + *l.parent);
  }
  if (!bad.empty()) throw ValidationError("loops", "unknown parent loops: " + join(bad));
  for (const auto& l : desc.loops) {
    // Walk up the parent chain; a chain longer than the loop count is a cycle.
    std::optional<std::string> cur = l.parent;
    std::size_t steps = 0;
    while (cur && steps <= desc.loops.size()) {
      cur = desc.loops[index.at(*cur)].parent;
      ++steps;
    }
    if (cur) bad.push_back(l.id);
  }
  if (!bad.empty()) throw ValidationError("loops", "cyclic loop nesting: " + join(bad));
  for (const auto& l : desc.loops) {
    const auto n = static_cast<std::uint64_t>(l.ops.total());
    for (const auto& [a, b] : l.links) {
      if (a >= n || b >= n || a == b) {
        bad.push_back(l.id + "[" + std::to_string(a) + "," + std::to_string(b) + "]");
      }
    }
  }
  if (!bad.empty()) throw ValidationError("loops", "invalid operand links: " + join(bad));

  std::set<std::string> arrays;
  for (const auto& a : desc.arrays) {
    if (a.name.empty() || a.size < 1 || index.contains(a.name) || !arrays.insert(a.name).second) {
      bad.push_back(a.name.empty() ? "<empty>" : a.name);
    }
  }
  if (!bad.empty()) throw ValidationError("arrays", "invalid arrays: " + join(bad));

  BehavioralDescription b{desc.kernel_id, desc.source_template};
  for (const auto& slot : b.slots()) {
    const auto target = slot_target(slot);
    if (!index.contains(target) && !arrays.contains(target)) bad.push_back(slot);
  }
  if (!bad.empty()) throw ValidationError("source_template", "dangling pragma slots: " + join(bad));
}

Cdfg build_cdfg(const KernelDescription& desc, const OpCostTable& costs) {
  validate_description(desc);
  Cdfg g;
  g.kernel_id = desc.kernel_id;
  const auto num_loops = desc.loops.size();
  std::map<std::string, std::uint32_t> block_of;
  for (std::uint32_t i = 0; i < num_loops; ++i) block_of[desc.loops[i].id] = i;

  auto depth_of = [&](const LoopSpec& l) {
    std::uint32_t d = 0;
    for (auto p = l.parent; p; p = desc.loops[block_of.at(*p)].parent) ++d;
    return std::min(d, g.vocab_sizes[3] - 1);
  };

  for (const auto& l : desc.loops) {
    NodeFeatures n;
    n.node_type = node_code::kBlock;
    n.block_type = depth_of(l);
    g.nodes.push_back(n);
  }

  // Control edges between blocks: parent to first child, then sibling chain.
  std::map<std::optional<std::string>, std::vector<std::uint32_t>> children;
  for (std::uint32_t i = 0; i < num_loops; ++i) children[desc.loops[i].parent].push_back(i);
  for (const auto& [parent, kids] : children) {
    for (std::size_t k = 0; k < kids.size(); ++k) {
      if (k == 0) {
        if (parent) g.edges.push_back({block_of.at(*parent), kids[0], Flow::control, 0});
      } else {
        g.edges.push_back({kids[k - 1], kids[k], Flow::control, 0});
      }
    }
  }

  for (std::uint32_t i = 0; i < num_loops; ++i) {
    const auto& l = desc.loops[i];
    const auto block_type = g.nodes[i].block_type;
    const auto first = static_cast<std::uint32_t>(g.nodes.size());
    auto emit = [&](std::int64_t count, std::uint32_t code, const OpCost& c) {
      for (std::int64_t k = 0; k < count; ++k) {
        const auto id = static_cast<std::uint32_t>(g.nodes.size());
        g.nodes.push_back({node_code::kInstruction, code, 0, block_type, c.latency, c.lut, c.dsp, c.ff});
        g.edges.push_back({i, id, Flow::control, id - first});
      }
    };
    emit(l.ops.load, node_code::kLoad, costs.load);
    emit(l.ops.mul, node_code::kMul, costs.mul);
    emit(l.ops.add, node_code::kAdd, costs.add);
    emit(l.ops.store, node_code::kStore, costs.store);
    std::map<std::uint32_t, std::uint32_t> operand_slot;
    for (const auto& [a, b] : l.links) {
      g.edges.push_back({first + a, first + b, Flow::data, operand_slot[b]++});
    }
  }

  for (const auto& [id, node] : block_of) g.anchors[id] = node;
  if (!desc.arrays.empty()) {
    const auto& top = children.at(std::nullopt);
    for (const auto& a : desc.arrays) g.anchors[a.name] = top.front();
  }
  return g;
}

Cdfg insert_pragma_nodes(const Cdfg& g, const DesignSpace& space, const DesignConfiguration& cfg) {
  space.validate(cfg);
  Cdfg out = g;
  for (std::size_t i = 0; i < space.num_directives(); ++i) {
    const auto& d = space.directive(i);
    auto it = g.anchors.find(d.target);
    if (it == g.anchors.end()) {
      throw ValidationError("directive " + d.name, "targets unknown block '" + d.target + "'");
    }
    if (d.is_disabled(cfg.indices[i])) continue;
    const auto id = static_cast<std::uint32_t>(out.nodes.size());
    NodeFeatures n;
    n.node_type = node_code::kPragma;
    n.instruction_type = node_code::kPragmaBase + static_cast<std::uint32_t>(d.kind);
    n.block_type = g.nodes[it->second].block_type;
    out.nodes.push_back(n);
    out.edges.push_back({id, it->second, Flow::pragma, cfg.indices[i]});
  }
  return out;
}

NodeFeatureScale NodeFeatureScale::fit(const std::vector<const Cdfg*>& graphs) {
  NodeFeatureScale s{0, 0, 0, 0};
  for (const auto* g : graphs) {
    for (const auto& n : g->nodes) {
      s.latency = std::max(s.latency, static_cast<double>(n.latency));
      s.lut = std::max(s.lut, static_cast<double>(n.lut));
      s.dsp = std::max(s.dsp, static_cast<double>(n.dsp));
      s.ff = std::max(s.ff, static_cast<double>(n.ff));
    }
  }
  return s;
}

Json NodeFeatureScale::to_json() const {
  return Json{{"latency", latency}, {"lut", lut}, {"dsp", dsp}, {"ff", ff}};
}

NodeFeatureScale NodeFeatureScale::from_json(const Json& doc, const std::string& path) {
  doc::reject_unknown(doc, {"latency", "lut", "dsp", "ff"}, path);
  return {doc::get_number(doc, "latency", path), doc::get_number(doc, "lut", path),
          doc::get_number(doc, "dsp", path), doc::get_number(doc, "ff", path)};
}

std::size_t node_feature_dim(const std::array<std::uint32_t, 4>& vocab_sizes) {
  return std::accumulate(vocab_sizes.begin(), vocab_sizes.end(), std::size_t{0}) + 4;
}

Matrix encode_node_features(const Cdfg& g, const NodeFeatureScale& scale) {
  const auto n = g.num_nodes();
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(node_feature_dim(g.vocab_sizes)));
  auto scaled = [](std::int64_t v, double max) {
    if (max <= 0.0) return 0.0;
    return std::clamp(static_cast<double>(v) / max, 0.0, 1.0);
  };
  for (std::size_t v = 0; v < n; ++v) {
    const auto& node = g.nodes[v];
    std::size_t offset = 0;
    for (int f = 0; f < 4; ++f) {
      const auto c = category(node, f);
      if (c >= g.vocab_sizes[f]) {
        throw ValidationError("nodes[" + std::to_string(v) + "]." + kFieldNames[f],
                              "index " + std::to_string(c) + " >= vocabulary size " +
                                  std::to_string(g.vocab_sizes[f]));
      }
      x(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(offset + c)) = 1.0;
      offset += g.vocab_sizes[f];
    }
    const auto r = static_cast<Eigen::Index>(v);
    const auto o = static_cast<Eigen::Index>(offset);
    x(r, o + 0) = scaled(node.latency, scale.latency);
    x(r, o + 1) = scaled(node.lut, scale.lut);
    x(r, o + 2) = scaled(node.dsp, scale.dsp);
    x(r, o + 3) = scaled(node.ff, scale.ff);
  }
  return x;
}

EdgeViews split_edges_by_direction(const Cdfg& g) {
  EdgeViews views;
  views.incoming.resize(g.num_nodes());
  views.outgoing.resize(g.num_nodes());
  for (std::uint32_t e = 0; e < g.edges.size(); ++e) {
    views.incoming.at(g.edges[e].dst).push_back(e);
    views.outgoing.at(g.edges[e].src).push_back(e);
  }
  return views;
}

Json export_graph_json(const Cdfg& g) {
  Json nodes = Json::array();
  for (const auto& n : g.nodes) {
    nodes.push_back({{"nt", n.node_type},
                     {"it", n.instruction_type},
                     {"ft", n.function_type},
                     {"bt", n.block_type},
                     {"lat", n.latency},
                     {"lut", n.lut},
                     {"dsp", n.dsp},
                     {"ff", n.ff}});
  }
  Json edges = Json::array();
  for (const auto& e : g.edges) {
    edges.push_back({{"src", e.src}, {"dst", e.dst}, {"flow", static_cast<std::uint32_t>(e.flow)}, {"pos", e.position}});
  }
  Json doc{{"kernel_id", g.kernel_id},
           {"vocab_sizes", Json::array({g.vocab_sizes[0], g.vocab_sizes[1], g.vocab_sizes[2], g.vocab_sizes[3]})},
           {"nodes", nodes},
           {"edges", edges}};
  if (!g.anchors.empty()) doc["anchors"] = g.anchors;
  return doc;
}

std::string export_graph(const Cdfg& g) { return to_document(export_graph_json(g)); }

Cdfg import_graph_json(const Json& doc) {
  if (!doc.is_object()) throw ValidationError("$", "expected an object");
  doc::reject_unknown(doc, {"kernel_id", "vocab_sizes", "nodes", "edges", "anchors"}, "$");
  Cdfg g;
  g.kernel_id = doc::get_string(doc, "kernel_id", "$");
  const auto& vocab = doc::get_array(doc, "vocab_sizes", "$");
  if (vocab.size() != 4) throw ValidationError("$.vocab_sizes", "expected 4 entries");
  for (std::size_t f = 0; f < 4; ++f) {
    if (!vocab[f].is_number_unsigned()) {
      throw ValidationError("$.vocab_sizes[" + std::to_string(f) + "]", "expected a non-negative integer");
    }
    g.vocab_sizes[f] = vocab[f].get<std::uint32_t>();
  }
  const auto& nodes = doc::get_array(doc, "nodes", "$");
  if (nodes.empty()) throw ValidationError("$.nodes", "graph has no nodes");
  for (std::size_t v = 0; v < nodes.size(); ++v) {
    const auto path = "$.nodes[" + std::to_string(v) + "]";
    const auto& item = nodes[v];
    doc::reject_unknown(item, {"nt", "it", "ft", "bt", "lat", "lut", "dsp", "ff"}, path);
    g.nodes.push_back({checked_u32(item, "nt", path), checked_u32(item, "it", path),
                       checked_u32(item, "ft", path), checked_u32(item, "bt", path),
                       doc::get_nonneg(item, "lat", path), doc::get_nonneg(item, "lut", path),
                       doc::get_nonneg(item, "dsp", path), doc::get_nonneg(item, "ff", path)});
  }
  const auto& edges = doc::get_array(doc, "edges", "$");
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto path = "$.edges[" + std::to_string(e) + "]";
    const auto& item = edges[e];
    doc::reject_unknown(item, {"src", "dst", "flow", "pos"}, path);
    const auto flow = checked_u32(item, "flow", path);
    if (flow > 3) throw ValidationError(path + ".flow", "unknown flow kind " + std::to_string(flow));
    g.edges.push_back({checked_u32(item, "src", path), checked_u32(item, "dst", path),
                       static_cast<Flow>(flow), checked_u32(item, "pos", path)});
  }
  if (doc.contains("anchors")) {
    const auto& anchors = doc::get_object(doc, "anchors", "$");
    for (const auto& [name, _] : anchors.items()) g.anchors[name] = checked_u32(anchors, name, "$.anchors");
  }
  try {
    g.validate();
  } catch (const ValidationError& e) {
    throw e.under("$");
  }
  if (!is_weakly_connected(g)) throw ValidationError("$.edges", "graph is not weakly connected");
  return g;
}

Cdfg import_graph(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError("$", std::string("malformed document: ") + e.what());
  }
  return import_graph_json(doc);
}

}  // namespace mpmdse
