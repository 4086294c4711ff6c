#include "mpmdse/llm4dse.hpp"

#include <cstdlib>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace mpmdse::dse {

HttpChatBackend::HttpChatBackend(HttpChatConfig cfg) : cfg_(std::move(cfg)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, url)) {
    throw ValidationError("backend.endpoint", "expected an http(s) URL, got '" + cfg_.endpoint + "'");
  }
  scheme_host_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
  if (cfg_.model.empty()) throw ValidationError("backend.model", "model name is required");
  if (cfg_.retries < 0) throw ValidationError("backend.retries", "must be non-negative");
}

std::string HttpChatBackend::complete(const std::string& prompt) {
  httplib::Client client(scheme_host_);
  client.set_connection_timeout(cfg_.timeout_seconds, 0);
  client.set_read_timeout(cfg_.timeout_seconds, 0);
  client.set_write_timeout(cfg_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (!key || !*key) throw BackendError("environment variable " + cfg_.api_key_env + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const Json body{{"model", cfg_.model},
                  {"messages", Json::array({Json{{"role", "user"}, {"content", prompt}}})},
                  {"temperature", cfg_.temperature}};
  const auto payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms << (attempt - 1)));
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) throw BackendError("HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
      const auto doc = Json::parse(res->body);
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
      throw BackendError(std::string("malformed chat completion response: ") + e.what());
    }
  }
  throw BackendError("request failed after " + std::to_string(cfg_.retries) + " retries: " + last_error);
}

Json transcript_to_json(const std::vector<TranscriptEntry>& entries) {
  Json out = Json::array();
  for (const auto& e : entries) out.push_back(Json{{"prompt_hash", e.prompt_hash}, {"response", e.response}});
  return out;
}

std::vector<TranscriptEntry> transcript_from_json(const Json& doc, const std::string& context) {
  if (!doc.is_array()) throw ValidationError(context, "transcript must be an array");
  std::vector<TranscriptEntry> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto path = context + "[" + std::to_string(i) + "]";
    doc::reject_unknown(doc[i], {"prompt_hash", "response"}, path);
    out.push_back({doc::get_string(doc[i], "prompt_hash", path), doc::get_string(doc[i], "response", path)});
  }
  return out;
}

ReplayBackend::ReplayBackend(std::vector<TranscriptEntry> entries) : entries_(std::move(entries)) {}

ReplayBackend ReplayBackend::from_file(const std::filesystem::path& path) {
  return ReplayBackend(transcript_from_json(read_json_file(path), path.string()));
}

std::string ReplayBackend::complete(const std::string& prompt) {
  if (next_ >= entries_.size()) {
    throw BackendError("replay transcript exhausted after " + std::to_string(entries_.size()) + " responses");
  }
  const auto& e = entries_[next_];
  const auto hash = sha256_hex(prompt);
  if (hash != e.prompt_hash) {
    throw BackendError("replay prompt " + std::to_string(next_) + " hash mismatch: expected " + e.prompt_hash +
                       ", got " + hash);
  }
  ++next_;
  return e.response;
}

std::string RecordingBackend::complete(const std::string& prompt) {
  auto response = inner_.complete(prompt);
  transcript_.push_back({sha256_hex(prompt), response});
  return response;
}

namespace {

struct MockView {
  DesignSpace space;
  std::vector<DesignConfiguration> examples;
  std::size_t batch = 1;
};

std::optional<MockView> read_prompt(const std::string& prompt) {
  static const std::regex catalog(R"(^- (\S+) \[(\w+), (\S+)\]: (.+)$)");
  static const std::regex request(R"(Propose exactly (\d+) new configurations)");
  std::vector<PragmaDirective> directives;
  std::vector<std::string> example_lines;
  std::string section;
  std::istringstream in(prompt);
  std::string line;
  bool fenced = false;
  while (std::getline(in, line)) {
    if (line.rfind("## ", 0) == 0) {
      section = line;
      continue;
    }
    if (section == kTaskDescriptionHeader) {
      std::smatch m;
      if (std::regex_match(line, m, catalog)) {
        PragmaDirective d;
        d.name = m[1].str();
        d.kind = parse_pragma_kind(m[2].str());
        d.target = m[3].str();
        std::stringstream values(m[4].str());
        std::string v;
        while (std::getline(values, v, '|')) {
          const auto b = v.find_first_not_of(' ');
          const auto e = v.find_last_not_of(' ');
          if (b != std::string::npos) d.domain.push_back(v.substr(b, e - b + 1));
        }
        directives.push_back(std::move(d));
      }
    } else if (section == kExamplesHeader) {
      if (line.rfind("```", 0) == 0) {
        fenced = !fenced;
        example_lines.push_back("```");
        continue;
      }
      if (fenced) example_lines.push_back(line);
    }
  }
  if (directives.empty()) return std::nullopt;
  MockView view;
  try {
    view.space = DesignSpace(std::move(directives));
  } catch (const Error&) {
    return std::nullopt;
  }
  std::string examples;
  for (const auto& l : example_lines) examples += l + "\n";
  view.examples = parse_solutions(examples, view.space, std::numeric_limits<std::size_t>::max()).configs;
  std::smatch m;
  if (std::regex_search(prompt, m, request)) view.batch = std::stoul(m[1].str());
  return view;
}

}  // namespace

std::string MutationMockBackend::complete(const std::string& prompt) {
  Rng rng(mix_seed(seed_, calls_++));
  const auto view = read_prompt(prompt);
  if (!view) return "I could not find a directive catalog in the request.\n";
  const auto& space = view->space;
  std::set<DesignConfiguration> shown(view->examples.begin(), view->examples.end());

  std::vector<DesignConfiguration> out;
  std::set<DesignConfiguration> batch_seen;
  auto fresh = [&](const DesignConfiguration& c) {
    return !shown.contains(c) && !batch_seen.contains(c) && !proposed_.contains(c.key());
  };
  for (std::size_t b = 0; b < view->batch; ++b) {
    std::optional<DesignConfiguration> pick;
    for (int attempt = 0; attempt < 64 && !pick && !view->examples.empty(); ++attempt) {
      auto c = view->examples[rng.index(view->examples.size())];
      const int changes = rng.uniform() < 0.5 ? 1 : 2;
      for (int ch = 0; ch < changes; ++ch) {
        const auto i = rng.index(space.num_directives());
        const auto n = space.directive(i).domain.size();
        if (n < 2) continue;
        const bool up = c.indices[i] == 0 || (c.indices[i] + 1 < n && rng.uniform() < 0.5);
        c.indices[i] = up ? c.indices[i] + 1 : c.indices[i] - 1;
      }
      if (fresh(c)) pick = c;
    }
    for (int attempt = 0; attempt < 64 && !pick; ++attempt) {
      auto c = sample_one(space, rng);
      if (fresh(c)) pick = c;
    }
    if (!pick) break;
    batch_seen.insert(*pick);
    proposed_.insert(pick->key());
    out.push_back(*pick);
  }

  std::string text = view->examples.empty()
                         ? "No examples are available yet, so I start with a spread of configurations.\n"
                         : "Each proposal changes one or two directives of a listed example by one step.\n";
  text += "```\n";
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i) text += "---\n";
    text += format_config(space, out[i]);
  }
  text += "```\n";
  return text;
}

LlmBackendSpec LlmBackendSpec::from_json(const Json& doc, const std::string& path) {
  const auto kind = doc::get_string(doc, "kind", path);
  LlmBackendSpec s;
  if (kind == "http-chat") {
    doc::reject_unknown(doc,
                        {"kind", "endpoint", "model", "api_key_env", "temperature", "timeout_seconds", "retries",
                         "backoff_ms"},
                        path);
    s.kind = Kind::http_chat;
    s.http.endpoint = doc::get_string(doc, "endpoint", path);
    s.http.model = doc::get_string(doc, "model", path);
    if (doc.contains("api_key_env")) s.http.api_key_env = doc::get_string(doc, "api_key_env", path);
    if (doc.contains("temperature")) s.http.temperature = doc::get_number(doc, "temperature", path);
    if (doc.contains("timeout_seconds")) s.http.timeout_seconds = int(doc::get_nonneg(doc, "timeout_seconds", path));
    if (doc.contains("retries")) s.http.retries = int(doc::get_nonneg(doc, "retries", path));
    if (doc.contains("backoff_ms")) s.http.backoff_ms = int(doc::get_nonneg(doc, "backoff_ms", path));
  } else if (kind == "replay") {
    doc::reject_unknown(doc, {"kind", "transcript"}, path);
    s.kind = Kind::replay;
    s.transcript = doc::get_string(doc, "transcript", path);
  } else if (kind == "mutation-mock") {
    doc::reject_unknown(doc, {"kind", "seed"}, path);
    s.kind = Kind::mutation_mock;
    if (doc.contains("seed")) s.seed = static_cast<std::uint64_t>(doc::get_nonneg(doc, "seed", path));
  } else {
    throw ValidationError(path + ".kind", "unknown backend kind '" + kind +
                                              "' (expected http-chat, replay or mutation-mock)");
  }
  return s;
}

Json LlmBackendSpec::to_json() const {
  switch (kind) {
    case Kind::http_chat:
      return Json{{"kind", "http-chat"},        {"endpoint", http.endpoint},
                  {"model", http.model},        {"api_key_env", http.api_key_env},
                  {"temperature", http.temperature}, {"timeout_seconds", http.timeout_seconds},
                  {"retries", http.retries},    {"backoff_ms", http.backoff_ms}};
    case Kind::replay: return Json{{"kind", "replay"}, {"transcript", transcript}};
    case Kind::mutation_mock: return Json{{"kind", "mutation-mock"}, {"seed", seed}};
  }
  return Json::object();
}

std::unique_ptr<LlmBackend> make_backend(const LlmBackendSpec& spec) {
  switch (spec.kind) {
    case LlmBackendSpec::Kind::http_chat: return std::make_unique<HttpChatBackend>(spec.http);
    case LlmBackendSpec::Kind::replay: return std::make_unique<ReplayBackend>(ReplayBackend::from_file(spec.transcript));
    case LlmBackendSpec::Kind::mutation_mock: return std::make_unique<MutationMockBackend>(spec.seed);
  }
  throw ValidationError("backend", "unknown backend kind");
}

}  // namespace mpmdse::dse
