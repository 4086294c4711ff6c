#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "mpmdse/cdfg.hpp"
#include "mpmdse/designspace.hpp"

/// Closed-form synthetic HLS model: (kernel, configuration) -> latency and
/// resource usage. Monotone by construction so reference fronts are
/// meaningful and the prompt's pragma-impact rules hold.
namespace mpmdse {

struct Resources {
  std::int64_t lut = 0;
  std::int64_t dsp = 0;
  std::int64_t ff = 0;
  std::int64_t bram = 0;

  bool operator==(const Resources&) const = default;
  Json to_json() const;
  static Resources from_json(const Json& doc, const std::string& path);
};

/// Target order used by every five-element QoR vector.
inline constexpr std::array<const char*, 5> kTargetNames = {"latency", "lut", "dsp", "ff", "bram"};
inline constexpr std::size_t kNumTargets = 5;

struct QorMetrics {
  std::int64_t latency = 0;
  std::int64_t lut = 0;
  std::int64_t dsp = 0;
  std::int64_t ff = 0;
  std::int64_t bram = 0;
  bool feasible = true;

  bool operator==(const QorMetrics&) const = default;
  std::array<double, 5> values() const {
    return {double(latency), double(lut), double(dsp), double(ff), double(bram)};
  }
  Json to_json() const;
  static QorMetrics from_json(const Json& doc, const std::string& path);
};

/// Tunable coefficients of the closed form. See `evaluate`.
struct OracleCoefficients {
  double unroll_lut = 1.0;
  double unroll_ff = 1.0;
  double pipeline_on_lut = 0.5;
  double pipeline_flatten_lut = 1.0;
  double pipeline_on_ff = 0.5;
  double pipeline_flatten_ff = 1.0;
  std::int64_t partition_lut = 48;
  std::int64_t partition_ff = 32;
  std::int64_t partition_bram = 2;
  std::int64_t tile_latency = 4;
  std::int64_t tile_lut = 24;
  std::int64_t memory_ports = 2;

  Json to_json() const;
  static OracleCoefficients from_json(const Json& doc, const std::string& path);
};

struct OracleModel {
  KernelDescription kernel;
  OpCostTable op_costs;
  /// Fixed overhead outside the loop bodies.
  Resources base;
  Resources capacities;
  OracleCoefficients coefficients;

  void validate() const;
  Json to_json() const;
  static OracleModel from_json(const Json& doc);
};

/// Per-loop and per-array knob values resolved from a configuration.
struct ResolvedKnobs {
  enum class Pipeline { off = 0, on = 1, flatten = 2 };
  struct Loop {
    std::int64_t unroll = 1;
    Pipeline pipeline = Pipeline::off;
    std::int64_t tile = 1;
  };
  std::map<std::string, Loop> loops;
  std::map<std::string, std::int64_t> partition;
};

/// Throws ValidationError when a directive targets an unknown loop/array,
/// applies a loop kind to an array (or the reverse), or duplicates a knob.
ResolvedKnobs resolve_knobs(const OracleModel& model, const DesignSpace& space, const DesignConfiguration& cfg);
void check_space(const OracleModel& model, const DesignSpace& space);

/// Per loop with unroll u, pipeline mode m, tile t, child latency S and
/// body depth D = max(1, sum of present op-class latencies) + memory stalls:
///   iters = ceil(trip / u)
///   off:     iters (D + S)
///   on:      (iters - 1) max(1, S) + D + S
///   flatten: (iters - 1) + D + S
/// plus tile_latency (t - 1). Kernel latency sums the top-level loops.
/// Memory stalls = ceil((load + store) / (ports p)) - 1 with p the smallest
/// partition factor among the kernel's arrays.
/// Resources: base + per loop op cost x (1 + unroll coef (u - 1)) x (1 + pipeline coef),
/// DSP = base + mul dsp u, per array partition increments on LUT/FF and
/// BRAM = partition_bram p, tile LUT increments. Never throws for valid
/// inputs; exceeding a capacity clears `feasible`.
QorMetrics evaluate(const OracleModel& model, const DesignSpace& space, const DesignConfiguration& cfg);

/// Metrics with every knob disabled, computed without a design space.
QorMetrics baseline(const OracleModel& model);

/// Largest resource fraction of capacity (the second DSE objective).
double max_utilization(const QorMetrics& m, const Resources& capacities);

}  // namespace mpmdse
