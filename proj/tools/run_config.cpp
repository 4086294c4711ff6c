#include "run_config.hpp"

namespace mpmdse::cli {

namespace {

bool compatible(const Json& def, const Json& value) {
  if (def.is_null() || value.is_null()) return true;
  if (def.is_number() && value.is_number()) return true;
  return def.type() == value.type();
}

std::string type_name(const Json& v) { return v.is_null() ? "null" : v.type_name(); }

}  // namespace

RunConfig::RunConfig(Json defaults) : defaults_(std::move(defaults)), values_(defaults_) {}

void RunConfig::merge_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError(path.string(), "config file not found");
  Json doc;
  try {
    doc = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string(), std::string("not a valid document: ") + e.what());
  }
  merge_document(doc, path.string());
}

void RunConfig::merge_document(const Json& doc, const std::string& context) {
  if (!doc.is_object()) throw ValidationError(context, "config document must be an object");
  for (const auto& [key, value] : doc.items()) {
    if (!defaults_.contains(key)) {
      throw ValidationError(context + ": $." + key, "unknown key for this subcommand");
    }
    if (!compatible(defaults_[key], value)) {
      throw ValidationError(context + ": $." + key,
                            "expected " + type_name(defaults_[key]) + ", got " + type_name(value));
    }
    values_[key] = value;
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("--set", "expected key=value, got '" + assignment + "'");
  }
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  set(key, std::move(value));
}

void RunConfig::set(const std::string& key, Json value) {
  const auto dot = key.find('.');
  const auto top = key.substr(0, dot);
  if (!defaults_.contains(top)) throw ValidationError("$." + key, "unknown key for this subcommand");
  if (dot == std::string::npos) {
    if (!compatible(defaults_[top], value)) {
      throw ValidationError("$." + key, "expected " + type_name(defaults_[top]) + ", got " + type_name(value));
    }
    values_[top] = std::move(value);
    return;
  }
  if (!values_[top].is_object()) throw ValidationError("$." + top, "is not an object");
  values_[top][Json::json_pointer("/" + key.substr(dot + 1))] = std::move(value);
}

const Json& RunConfig::at(const std::string& key) const {
  if (!values_.contains(key)) throw ValidationError("$." + key, "unknown key");
  return values_.at(key);
}

std::string RunConfig::string(const std::string& key) const {
  const auto& v = at(key);
  if (v.is_null()) throw ValidationError("$." + key, "is required");
  if (!v.is_string()) throw ValidationError("$." + key, "expected a string");
  return v.get<std::string>();
}

std::uint64_t RunConfig::count(const std::string& key) const {
  const auto& v = at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ValidationError("$." + key, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double RunConfig::number(const std::string& key) const {
  const auto& v = at(key);
  if (!v.is_number()) throw ValidationError("$." + key, "expected a number");
  return v.get<double>();
}

bool RunConfig::flag(const std::string& key) const {
  const auto& v = at(key);
  if (!v.is_boolean()) throw ValidationError("$." + key, "expected true or false");
  return v.get<bool>();
}

void RunConfig::write_snapshot(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "resolved_config.json", values_);
}

}  // namespace mpmdse::cli
