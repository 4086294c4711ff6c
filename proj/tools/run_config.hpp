#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mpmdse/common.hpp"

namespace mpmdse::cli {

/// Layers a subcommand's settings: defaults, then the config document, then
/// `--set key=value` overrides, then dedicated flags. Keys absent from the
/// defaults are rejected at every layer.
class RunConfig {
 public:
  explicit RunConfig(Json defaults);

  void merge_file(const std::filesystem::path& path);
  void merge_document(const Json& doc, const std::string& context);
  /// `key=value` with a dotted key; the value is read as JSON and falls back
  /// to a plain string.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, Json value);

  const Json& values() const { return values_; }
  const Json& at(const std::string& key) const;
  bool is_set(const std::string& key) const { return !at(key).is_null(); }

  std::string string(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const { return string(key); }
  std::uint64_t count(const std::string& key) const;
  double number(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// Writes resolved_config.json into `dir`.
  void write_snapshot(const std::filesystem::path& dir) const;

 private:
  Json defaults_;
  Json values_;
};

}  // namespace mpmdse::cli
