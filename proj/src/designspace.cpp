#include "mpmdse/designspace.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

namespace mpmdse {

namespace {

constexpr std::string_view kSlotOpen = "__PRAGMA(";
constexpr std::string_view kSlotClose = ")__";

bool is_pipeline_token(std::string_view v) { return v == "off" || v == "on" || v == "flatten"; }

std::int64_t parse_factor(std::string_view v) {
  std::int64_t out = 0;
  if (v.empty()) return -1;
  for (char c : v) {
    if (c < '0' || c > '9') return -1;
    out = out * 10 + (c - '0');
    if (out > (std::int64_t{1} << 40)) return -1;
  }
  return out;
}

}  // namespace

std::string_view to_string(PragmaKind kind) {
  switch (kind) {
    case PragmaKind::pipeline: return "pipeline";
    case PragmaKind::unroll: return "unroll";
    case PragmaKind::array_partition: return "array_partition";
    case PragmaKind::tile: return "tile";
  }
  return "?";
}

PragmaKind parse_pragma_kind(std::string_view text) {
  if (text == "pipeline") return PragmaKind::pipeline;
  if (text == "unroll") return PragmaKind::unroll;
  if (text == "array_partition") return PragmaKind::array_partition;
  if (text == "tile") return PragmaKind::tile;
  throw ValidationError("kind", "unknown pragma kind '" + std::string(text) + "'");
}

bool PragmaDirective::is_disabled(std::size_t value_index) const {
  const auto& v = domain.at(value_index);
  return kind == PragmaKind::pipeline ? v == "off" : v == "1";
}

std::int64_t PragmaDirective::factor(std::size_t value_index) const {
  if (kind == PragmaKind::pipeline) throw Error("pipeline directive '" + name + "' has no factor");
  return parse_factor(domain.at(value_index));
}

std::optional<std::size_t> PragmaDirective::find_value(std::string_view value) const {
  for (std::size_t i = 0; i < domain.size(); ++i) {
    if (domain[i] == value) return i;
  }
  return std::nullopt;
}

std::string PragmaDirective::render(std::size_t value_index) const {
  if (is_disabled(value_index)) return {};
  const auto& v = domain.at(value_index);
  switch (kind) {
    case PragmaKind::pipeline:
      return v == "flatten" ? "#pragma HLS PIPELINE flatten" : "#pragma HLS PIPELINE";
    case PragmaKind::unroll: return "#pragma HLS UNROLL factor=" + v;
    case PragmaKind::array_partition:
      return "#pragma HLS ARRAY_PARTITION variable=" + target + " factor=" + v;
    case PragmaKind::tile: return "#pragma HLS TILE factor=" + v;
  }
  return {};
}

std::string DesignConfiguration::key() const {
  std::string out;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i) out.push_back('.');
    out += std::to_string(indices[i]);
  }
  return out;
}

DesignSpace::DesignSpace(std::vector<PragmaDirective> directives)
    : directives_(std::move(directives)) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < directives_.size(); ++i) {
    const auto& d = directives_[i];
    const auto path = "directives[" + std::to_string(i) + "]";
    if (d.name.empty()) throw ValidationError(path + ".name", "empty directive name");
    if (!names.insert(d.name).second) {
      throw ValidationError(path + ".name", "duplicate directive name '" + d.name + "'");
    }
    if (d.domain.empty()) throw ValidationError(path + ".domain", "empty domain");
    std::set<std::string> seen;
    for (std::size_t j = 0; j < d.domain.size(); ++j) {
      const auto& v = d.domain[j];
      const auto vpath = path + ".domain[" + std::to_string(j) + "]";
      if (!seen.insert(v).second) throw ValidationError(vpath, "duplicate value '" + v + "'");
      if (d.kind == PragmaKind::pipeline) {
        if (!is_pipeline_token(v)) throw ValidationError(vpath, "expected off, on or flatten");
      } else if (parse_factor(v) < 1) {
        throw ValidationError(vpath, "expected a positive integer factor");
      }
    }
    if (d.kind == PragmaKind::pipeline) {
      auto rank = [](const std::string& v) { return v == "off" ? 0 : v == "on" ? 1 : 2; };
      if (!std::is_sorted(d.domain.begin(), d.domain.end(),
                          [&](auto& a, auto& b) { return rank(a) < rank(b); })) {
        throw ValidationError(path + ".domain", "pipeline values must be ordered off, on, flatten");
      }
    } else if (!std::is_sorted(d.domain.begin(), d.domain.end(), [](auto& a, auto& b) {
                 return parse_factor(a) < parse_factor(b);
               })) {
      throw ValidationError(path + ".domain", "factors must be ascending");
    }
  }
}

std::optional<std::size_t> DesignSpace::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < directives_.size(); ++i) {
    if (directives_[i].name == name) return i;
  }
  return std::nullopt;
}

void DesignSpace::validate(const DesignConfiguration& cfg) const {
  if (cfg.indices.size() != directives_.size()) {
    throw ValidationError("assignment", "expected " + std::to_string(directives_.size()) +
                                            " directives, got " +
                                            std::to_string(cfg.indices.size()));
  }
  for (std::size_t i = 0; i < directives_.size(); ++i) {
    if (cfg.indices[i] >= directives_[i].domain.size()) {
      throw ValidationError("assignment." + directives_[i].name,
                            "value index " + std::to_string(cfg.indices[i]) + " out of domain");
    }
  }
}

bool DesignSpace::contains(const DesignConfiguration& cfg) const {
  if (cfg.indices.size() != directives_.size()) return false;
  for (std::size_t i = 0; i < directives_.size(); ++i) {
    if (cfg.indices[i] >= directives_[i].domain.size()) return false;
  }
  return true;
}

DesignConfiguration DesignSpace::first() const {
  return DesignConfiguration{std::vector<std::uint32_t>(directives_.size(), 0)};
}

DesignConfiguration DesignSpace::disabled() const {
  DesignConfiguration cfg = first();
  for (std::size_t i = 0; i < directives_.size(); ++i) {
    for (std::size_t j = 0; j < directives_[i].domain.size(); ++j) {
      if (directives_[i].is_disabled(j)) {
        cfg.indices[i] = static_cast<std::uint32_t>(j);
        break;
      }
    }
  }
  return cfg;
}

Json DesignSpace::assignment_json(const DesignConfiguration& cfg) const {
  validate(cfg);
  Json out = Json::object();
  for (std::size_t i = 0; i < directives_.size(); ++i) {
    const auto& d = directives_[i];
    const auto& v = d.domain[cfg.indices[i]];
    if (d.kind == PragmaKind::pipeline) {
      out[d.name] = v;
    } else {
      out[d.name] = parse_factor(v);
    }
  }
  return out;
}

DesignConfiguration DesignSpace::from_assignment_json(const Json& assignment,
                                                      const std::string& path) const {
  if (!assignment.is_object()) throw ValidationError(path, "expected an object");
  DesignConfiguration cfg = first();
  for (const auto& [key, _] : assignment.items()) {
    if (!index_of(key)) throw ValidationError(path + "." + key, "unknown directive");
  }
  for (std::size_t i = 0; i < directives_.size(); ++i) {
    const auto& d = directives_[i];
    auto it = assignment.find(d.name);
    if (it == assignment.end()) throw ValidationError(path + "." + d.name, "missing directive");
    std::string text;
    if (it->is_string()) {
      text = it->get<std::string>();
    } else if (it->is_number_integer()) {
      text = std::to_string(it->get<std::int64_t>());
    } else {
      throw ValidationError(path + "." + d.name, "expected a string or integer value");
    }
    auto idx = d.find_value(text);
    if (!idx) throw ValidationError(path + "." + d.name, "value '" + text + "' not in domain");
    cfg.indices[i] = static_cast<std::uint32_t>(*idx);
  }
  return cfg;
}

Json DesignSpace::to_json() const {
  Json dirs = Json::array();
  for (const auto& d : directives_) {
    Json domain = Json::array();
    for (const auto& v : d.domain) {
      if (d.kind == PragmaKind::pipeline) {
        domain.push_back(v);
      } else {
        domain.push_back(parse_factor(v));
      }
    }
    dirs.push_back({{"name", d.name},
                    {"kind", std::string(to_string(d.kind))},
                    {"target", d.target},
                    {"domain", domain}});
  }
  return Json{{"directives", dirs}};
}

DesignSpace DesignSpace::from_json(const Json& doc) {
  doc::reject_unknown(doc, {"directives"}, "$");
  const auto& arr = doc::get_array(doc, "directives", "$");
  std::vector<PragmaDirective> dirs;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto path = "$.directives[" + std::to_string(i) + "]";
    const auto& item = arr[i];
    doc::reject_unknown(item, {"name", "kind", "target", "domain"}, path);
    PragmaDirective d;
    d.name = doc::get_string(item, "name", path);
    try {
      d.kind = parse_pragma_kind(doc::get_string(item, "kind", path));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ".kind", e.message());
    }
    d.target = doc::get_string(item, "target", path);
    const auto& domain = doc::get_array(item, "domain", path);
    for (std::size_t j = 0; j < domain.size(); ++j) {
      const auto& v = domain[j];
      if (v.is_string()) {
        d.domain.push_back(v.get<std::string>());
      } else if (v.is_number_integer()) {
        d.domain.push_back(std::to_string(v.get<std::int64_t>()));
      } else {
        throw ValidationError(path + ".domain[" + std::to_string(j) + "]",
                              "expected a string or integer");
      }
    }
    dirs.push_back(std::move(d));
  }
  try {
    return DesignSpace(std::move(dirs));
  } catch (const ValidationError& e) {
    throw e.under("$");
  }
}

std::uint64_t space_size(const DesignSpace& space) {
  std::uint64_t n = 1;
  for (const auto& d : space.directives()) {
    const std::uint64_t k = d.domain.size();
    if (n > std::numeric_limits<std::uint64_t>::max() / k) throw Error("design space size overflows");
    n *= k;
  }
  return n;
}

DesignConfiguration config_at(const DesignSpace& space, std::uint64_t rank) {
  DesignConfiguration cfg = space.first();
  for (std::size_t i = space.num_directives(); i-- > 0;) {
    const std::uint64_t k = space.directive(i).domain.size();
    cfg.indices[i] = static_cast<std::uint32_t>(rank % k);
    rank /= k;
  }
  return cfg;
}

std::uint64_t rank_of(const DesignSpace& space, const DesignConfiguration& cfg) {
  space.validate(cfg);
  std::uint64_t rank = 0;
  for (std::size_t i = 0; i < space.num_directives(); ++i) {
    rank = rank * space.directive(i).domain.size() + cfg.indices[i];
  }
  return rank;
}

std::vector<DesignConfiguration> enumerate(const DesignSpace& space, std::uint64_t limit) {
  const auto n = std::min(limit, space_size(space));
  std::vector<DesignConfiguration> out;
  out.reserve(static_cast<std::size_t>(n));
  DesignConfiguration cur = space.first();
  for (std::uint64_t r = 0; r < n; ++r) {
    out.push_back(cur);
    // odometer increment, last directive fastest
    for (std::size_t i = space.num_directives(); i-- > 0;) {
      if (++cur.indices[i] < space.directive(i).domain.size()) break;
      cur.indices[i] = 0;
    }
  }
  return out;
}

DesignConfiguration sample_one(const DesignSpace& space, Rng& rng) {
  DesignConfiguration cfg = space.first();
  for (std::size_t i = 0; i < space.num_directives(); ++i) {
    cfg.indices[i] = static_cast<std::uint32_t>(rng.index(space.directive(i).domain.size()));
  }
  return cfg;
}

std::vector<DesignConfiguration> sample_random(const DesignSpace& space, std::uint64_t seed,
                                               std::size_t k) {
  Rng rng(seed);
  std::vector<DesignConfiguration> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(sample_one(space, rng));
  return out;
}

std::vector<DesignConfiguration> sample_distinct(const DesignSpace& space, std::uint64_t seed,
                                                 std::size_t k) {
  const auto total = space_size(space);
  if (k > total) {
    throw ValidationError("n", "requested " + std::to_string(k) + " distinct configurations from a space of " +
                                   std::to_string(total));
  }
  Rng rng(seed);
  std::vector<DesignConfiguration> out;
  out.reserve(k);
  if (total <= 4 * static_cast<std::uint64_t>(k) + 64) {
    // dense case: partial Fisher-Yates over ranks
    std::vector<std::uint64_t> ranks(static_cast<std::size_t>(total));
    std::iota(ranks.begin(), ranks.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(ranks[i], ranks[i + rng.index(ranks.size() - i)]);
      out.push_back(config_at(space, ranks[i]));
    }
    return out;
  }
  std::unordered_set<std::uint64_t> seen;
  while (out.size() < k) {
    auto cfg = sample_one(space, rng);
    if (seen.insert(rank_of(space, cfg)).second) out.push_back(std::move(cfg));
  }
  return out;
}

DesignConfiguration neighbor(const DesignSpace& space, const DesignConfiguration& cfg, Rng& rng) {
  space.validate(cfg);
  // Every (directive, other value) pair is one move; pick one uniformly.
  std::size_t moves = 0;
  for (const auto& d : space.directives()) moves += d.domain.size() - 1;
  if (moves == 0) return cfg;
  std::size_t pick = rng.index(moves);
  DesignConfiguration out = cfg;
  for (std::size_t i = 0; i < space.num_directives(); ++i) {
    const auto others = space.directive(i).domain.size() - 1;
    if (pick < others) {
      const auto v = static_cast<std::uint32_t>(pick);
      out.indices[i] = v >= cfg.indices[i] ? v + 1 : v;
      return out;
    }
    pick -= others;
  }
  return out;
}

DesignConfiguration neighbor(const DesignSpace& space, const DesignConfiguration& cfg,
                             std::uint64_t seed) {
  Rng rng(seed);
  return neighbor(space, cfg, rng);
}

std::vector<std::string> BehavioralDescription::slots() const {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = source_template.find(kSlotOpen, pos)) != std::string::npos) {
    const auto start = pos + kSlotOpen.size();
    const auto end = source_template.find(kSlotClose, start);
    if (end == std::string::npos) {
      throw ValidationError("source_template", "unterminated slot at offset " + std::to_string(pos));
    }
    out.push_back(source_template.substr(start, end - start));
    pos = end + kSlotClose.size();
  }
  return out;
}

void validate_template(const DesignSpace& space, const BehavioralDescription& desc) {
  std::map<std::string, int> count;
  for (const auto& s : desc.slots()) ++count[s];
  for (const auto& [name, n] : count) {
    if (!space.index_of(name)) {
      throw ValidationError("source_template", "slot '" + name + "' has no directive");
    }
    if (n != 1) throw ValidationError("source_template", "slot '" + name + "' appears " + std::to_string(n) + " times");
  }
  for (const auto& d : space.directives()) {
    if (!count.contains(d.name)) {
      throw ValidationError("source_template", "directive '" + d.name + "' has no slot");
    }
  }
}

std::string merge(const DesignSpace& space, const DesignConfiguration& cfg,
                  const BehavioralDescription& desc) {
  space.validate(cfg);
  const auto& src = desc.source_template;
  std::string out;
  out.reserve(src.size() + 64);
  std::size_t pos = 0;
  while (true) {
    const auto open = src.find(kSlotOpen, pos);
    if (open == std::string::npos) break;
    const auto start = open + kSlotOpen.size();
    const auto end = src.find(kSlotClose, start);
    if (end == std::string::npos) {
      throw ValidationError("source_template", "unterminated slot at offset " + std::to_string(open));
    }
    const auto name = src.substr(start, end - start);
    const auto idx = space.index_of(name);
    if (!idx) throw ValidationError("source_template", "slot '" + name + "' has no assignment");
    out.append(src, pos, open - pos);
    out += space.directive(*idx).render(cfg.indices[*idx]);
    pos = end + kSlotClose.size();
  }
  out.append(src, pos, std::string::npos);
  return out;
}

Json config_document(const DesignSpace& space, const std::string& kernel_id,
                     const DesignConfiguration& cfg) {
  return Json{{"kernel_id", kernel_id}, {"assignment", space.assignment_json(cfg)}};
}

}  // namespace mpmdse
