#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpmdse/common.hpp"

namespace mpmdse {

enum class PragmaKind { pipeline, unroll, array_partition, tile };

inline constexpr int kNumPragmaKinds = 4;

std::string_view to_string(PragmaKind kind);
PragmaKind parse_pragma_kind(std::string_view text);

/// One tunable directive. Pipeline domains hold the tokens `off`, `on` and
/// `flatten`; every other kind holds positive integer factors where 1 means
/// disabled.
struct PragmaDirective {
  std::string name;
  PragmaKind kind = PragmaKind::unroll;
  std::string target;
  std::vector<std::string> domain;

  bool is_disabled(std::size_t value_index) const;
  /// Integer factor of a non-pipeline value.
  std::int64_t factor(std::size_t value_index) const;
  std::optional<std::size_t> find_value(std::string_view value) const;
  /// Canonical pragma line, or the empty string for a disabled value.
  std::string render(std::size_t value_index) const;
};

/// Assignment of a value index to every directive of a space, in directive order.
struct DesignConfiguration {
  std::vector<std::uint32_t> indices;

  auto operator<=>(const DesignConfiguration&) const = default;
  /// Compact key such as `0.2.1`, used for hashing and file names.
  std::string key() const;
};

class DesignSpace {
 public:
  DesignSpace() = default;
  explicit DesignSpace(std::vector<PragmaDirective> directives);

  const std::vector<PragmaDirective>& directives() const { return directives_; }
  std::size_t num_directives() const { return directives_.size(); }
  const PragmaDirective& directive(std::size_t i) const { return directives_.at(i); }
  std::optional<std::size_t> index_of(std::string_view name) const;

  /// Throws ValidationError unless the configuration covers every directive
  /// with an in-domain index.
  void validate(const DesignConfiguration& cfg) const;
  bool contains(const DesignConfiguration& cfg) const;
  /// Configuration with every directive at its first domain value.
  DesignConfiguration first() const;
  /// Configuration with every directive at its disabled value (or index 0).
  DesignConfiguration disabled() const;

  /// `{name: value}` view of a configuration.
  Json assignment_json(const DesignConfiguration& cfg) const;
  DesignConfiguration from_assignment_json(const Json& assignment, const std::string& path) const;

  Json to_json() const;
  static DesignSpace from_json(const Json& doc);

 private:
  std::vector<PragmaDirective> directives_;
};

/// Exact product of domain sizes. Throws if it overflows 64 bits.
std::uint64_t space_size(const DesignSpace& space);

/// First `limit` configurations in lexicographic order of value indices
/// (last directive varies fastest).
std::vector<DesignConfiguration> enumerate(const DesignSpace& space, std::uint64_t limit);

/// Configuration at lexicographic rank `rank`.
DesignConfiguration config_at(const DesignSpace& space, std::uint64_t rank);
std::uint64_t rank_of(const DesignSpace& space, const DesignConfiguration& cfg);

/// k independent uniform draws.
std::vector<DesignConfiguration> sample_random(const DesignSpace& space, std::uint64_t seed,
                                               std::size_t k);
DesignConfiguration sample_one(const DesignSpace& space, Rng& rng);
/// k distinct uniform draws without replacement. Requires k <= space_size.
std::vector<DesignConfiguration> sample_distinct(const DesignSpace& space, std::uint64_t seed,
                                                 std::size_t k);

/// Uniform over all single-directive changes. Returns `cfg` itself when no
/// directive has more than one value.
DesignConfiguration neighbor(const DesignSpace& space, const DesignConfiguration& cfg,
                             std::uint64_t seed);
DesignConfiguration neighbor(const DesignSpace& space, const DesignConfiguration& cfg, Rng& rng);

/// Kernel source with `__PRAGMA(name)__` slots (symbol b_d).
struct BehavioralDescription {
  std::string kernel_id;
  std::string source_template;

  /// Slot names in order of appearance.
  std::vector<std::string> slots() const;
};

/// Substitutes each slot with the directive's canonical line under `cfg`.
std::string merge(const DesignSpace& space, const DesignConfiguration& cfg,
                  const BehavioralDescription& desc);

/// Checks that the template has exactly one slot per directive name.
void validate_template(const DesignSpace& space, const BehavioralDescription& desc);

Json config_document(const DesignSpace& space, const std::string& kernel_id,
                     const DesignConfiguration& cfg);

}  // namespace mpmdse
