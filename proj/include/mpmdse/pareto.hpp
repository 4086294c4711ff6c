#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mpmdse/designspace.hpp"
#include "mpmdse/oracle.hpp"

namespace mpmdse {

/// Minimized objectives, default (latency, max utilization).
using Objectives = std::vector<double>;

/// a <= b everywhere and a < b somewhere. Throws on a length mismatch.
bool dominates(const Objectives& a, const Objectives& b);

struct ArchiveEntry {
  DesignConfiguration config;
  Objectives objectives;
};

/// Mutually non-dominated set without duplicate configurations, kept sorted
/// by configuration.
class ParetoArchive {
 public:
  /// Rejects candidates dominated by a member or duplicating a member's
  /// configuration; otherwise evicts the members it dominates. Members with
  /// equal objectives coexist.
  bool insert(const DesignConfiguration& cfg, const Objectives& obj);

  const std::vector<ArchiveEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<Objectives> objectives() const;

 private:
  std::vector<ArchiveEntry> entries_;
};

/// Non-dominated subset by pairwise comparison, deduplicated by configuration
/// (first occurrence wins), sorted by configuration. Reference filter for tests.
std::vector<ArchiveEntry> brute_force_front(const std::vector<ArchiveEntry>& points);

enum class ObjectiveMode { latency_utilization, all_five };

Objectives objectives_of(const QorMetrics& m, const Resources& capacities,
                         ObjectiveMode mode = ObjectiveMode::latency_utilization);

/// Exhaustive front over feasible configurations. Throws when the space is
/// larger than `limit`.
ParetoArchive reference_front(const OracleModel& model, const DesignSpace& space, std::uint64_t limit = 100000,
                              ObjectiveMode mode = ObjectiveMode::latency_utilization);

struct AdrsReport {
  double adrs = 0.0;
  std::size_t reference_size = 0;
  std::size_t approx_size = 0;
  std::vector<double> distances;

  Json to_json() const;
};

/// f(l, m) = max_j max(0, (m_j - l_j) / l_j), with m_j - l_j for l_j == 0.
double adrs_distance(const Objectives& lambda, const Objectives& mu);
/// Mean over the reference set of the smallest distance to the approximation.
AdrsReport adrs_report(const std::vector<Objectives>& reference, const std::vector<Objectives>& approx);
double adrs(const std::vector<Objectives>& reference, const std::vector<Objectives>& approx);

/// Front CSV: `config,obj0,obj1,...` with the configuration key in column one.
std::string front_csv(const std::vector<ArchiveEntry>& entries);
std::vector<ArchiveEntry> parse_front_csv(const std::string& text, const std::string& context);

}  // namespace mpmdse
