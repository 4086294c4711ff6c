#include "mpmdse/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace mpmdse {

bool dominates(const Objectives& a, const Objectives& b) {
  if (a.size() != b.size()) {
    throw ShapeError("objective vectors of length " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  bool strict = false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (a[j] > b[j]) return false;
    if (a[j] < b[j]) strict = true;
  }
  return strict;
}

bool ParetoArchive::insert(const DesignConfiguration& cfg, const Objectives& obj) {
  for (const auto& e : entries_) {
    if (e.config == cfg || dominates(e.objectives, obj)) return false;
  }
  std::erase_if(entries_, [&](const ArchiveEntry& e) { return dominates(obj, e.objectives); });
  const auto pos = std::lower_bound(entries_.begin(), entries_.end(), cfg,
                                    [](const ArchiveEntry& e, const DesignConfiguration& c) { return e.config < c; });
  entries_.insert(pos, {cfg, obj});
  return true;
}

std::vector<Objectives> ParetoArchive::objectives() const {
  std::vector<Objectives> out;
  for (const auto& e : entries_) out.push_back(e.objectives);
  return out;
}

std::vector<ArchiveEntry> brute_force_front(const std::vector<ArchiveEntry>& points) {
  std::vector<ArchiveEntry> unique;
  std::set<DesignConfiguration> seen;
  for (const auto& p : points) {
    if (seen.insert(p.config).second) unique.push_back(p);
  }
  std::vector<ArchiveEntry> front;
  for (const auto& p : unique) {
    bool dominated = false;
    for (const auto& q : unique) {
      if (dominates(q.objectives, p.objectives)) {
        dominated = true;
        break;
      }
    }
    if (!dominated) front.push_back(p);
  }
  std::sort(front.begin(), front.end(), [](const auto& a, const auto& b) { return a.config < b.config; });
  return front;
}

Objectives objectives_of(const QorMetrics& m, const Resources& cap, ObjectiveMode mode) {
  if (mode == ObjectiveMode::all_five) {
    return {double(m.latency), double(m.lut), double(m.dsp), double(m.ff), double(m.bram)};
  }
  return {double(m.latency), max_utilization(m, cap)};
}

ParetoArchive reference_front(const OracleModel& model, const DesignSpace& space, std::uint64_t limit,
                              ObjectiveMode mode) {
  const auto size = space_size(space);
  if (size > limit) {
    throw ValidationError("space", "design space has " + std::to_string(size) +
                                       " configurations, above the exhaustive limit of " + std::to_string(limit) +
                                       "; use a sampled reference instead");
  }
  std::vector<ArchiveEntry> points;
  for (const auto& c : enumerate(space, size)) {
    const auto m = evaluate(model, space, c);
    if (m.feasible) points.push_back({c, objectives_of(m, model.capacities, mode)});
  }
  ParetoArchive archive;
  for (const auto& p : brute_force_front(points)) archive.insert(p.config, p.objectives);
  return archive;
}

Json AdrsReport::to_json() const {
  return Json{{"adrs", adrs}, {"reference_size", reference_size}, {"approx_size", approx_size},
              {"distances", distances}};
}

double adrs_distance(const Objectives& lambda, const Objectives& mu) {
  if (lambda.size() != mu.size()) throw ShapeError("objective vectors differ in length");
  double worst = 0.0;
  for (std::size_t j = 0; j < lambda.size(); ++j) {
    const double gap = lambda[j] == 0.0 ? mu[j] - lambda[j] : (mu[j] - lambda[j]) / lambda[j];
    worst = std::max(worst, std::max(0.0, gap));
  }
  return worst;
}

AdrsReport adrs_report(const std::vector<Objectives>& reference, const std::vector<Objectives>& approx) {
  if (reference.empty()) throw ValidationError("reference", "empty reference front");
  if (approx.empty()) throw ValidationError("approx", "empty approximate front");
  AdrsReport r;
  r.reference_size = reference.size();
  r.approx_size = approx.size();
  double total = 0.0;
  for (const auto& l : reference) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : approx) best = std::min(best, adrs_distance(l, m));
    r.distances.push_back(best);
    total += best;
  }
  r.adrs = total / static_cast<double>(reference.size());
  return r;
}

double adrs(const std::vector<Objectives>& reference, const std::vector<Objectives>& approx) {
  return adrs_report(reference, approx).adrs;
}

std::string front_csv(const std::vector<ArchiveEntry>& entries) {
  std::ostringstream out;
  out.precision(17);
  const auto m = entries.empty() ? 2 : entries.front().objectives.size();
  out << "config";
  for (std::size_t j = 0; j < m; ++j) out << ",obj" << j;
  out << '\n';
  for (const auto& e : entries) {
    out << e.config.key();
    for (const auto v : e.objectives) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::vector<ArchiveEntry> parse_front_csv(const std::string& text, const std::string& context) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("config", 0) != 0) {
    throw ValidationError(context + ":1", "missing `config,obj0,...` header");
  }
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (columns < 2) throw ValidationError(context + ":1", "need at least two objective columns");
  std::vector<ArchiveEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = context + ":" + std::to_string(lineno);
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns + 1) throw ValidationError(where, "expected " + std::to_string(columns + 1) + " cells");
    ArchiveEntry e;
    std::stringstream key(cells[0]);
    std::string part;
    while (std::getline(key, part, '.')) {
      try {
        std::size_t used = 0;
        const auto v = std::stoul(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
        e.config.indices.push_back(static_cast<std::uint32_t>(v));
      } catch (const std::exception&) {
        throw ValidationError(where, "bad configuration key '" + cells[0] + "'");
      }
    }
    for (std::size_t j = 1; j < cells.size(); ++j) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cells[j], &used);
        if (used != cells[j].size() || !std::isfinite(v)) throw std::invalid_argument(cells[j]);
        e.objectives.push_back(v);
      } catch (const std::exception&) {
        throw ValidationError(where, "bad objective value '" + cells[j] + "'");
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace mpmdse
