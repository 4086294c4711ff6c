#include "mpmdse/textembed.hpp"

#include <cctype>
#include <cmath>
#include <mutex>

namespace mpmdse {

namespace {

constexpr std::string_view kCacheMagic = "MPMEMB01";

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ mix_seed(seed, 0x7e57);
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(h, 1);
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_hex_key(const std::string& key) {
  if (key.size() != 64) return false;
  for (char c : key) {
    if (!std::isxdigit(static_cast<unsigned char>(c)) || std::isupper(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

}  // namespace

std::vector<std::string> tokenize_source(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (is_ident_start(c)) {
      const auto start = i;
      while (i < text.size() && is_ident(text[i])) ++i;
      tokens.emplace_back(text.substr(start, i - start));
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      const auto start = i;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      tokens.emplace_back(text.substr(start, i - start));
    } else {
      tokens.emplace_back(1, c);
      ++i;
    }
  }
  return tokens;
}

TextEmbedding hashed_featurizer(std::string_view text, std::size_t d_text, std::uint64_t seed) {
  if (d_text < 8) throw ValidationError("d_text", "must be at least 8");
  TextEmbedding out;
  out.provider_id = "hashed:" + std::to_string(d_text) + ":" + std::to_string(seed);
  out.values = Vector::Zero(static_cast<Eigen::Index>(d_text));
  const auto tokens = tokenize_source(text);
  auto add = [&](std::string_view feature) {
    const auto h = fnv1a(feature, seed);
    const auto bucket = static_cast<Eigen::Index>(h % d_text);
    out.values(bucket) += (h >> 63) ? -1.0 : 1.0;
  };
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    add(tokens[t]);
    if (t + 1 < tokens.size()) add(tokens[t] + '\x1f' + tokens[t + 1]);
  }
  const double norm = out.values.norm();
  if (norm > 0.0) out.values /= norm;
  return out;
}

HashedFeaturizer::HashedFeaturizer(std::size_t d_text, std::uint64_t seed) : d_text_(d_text), seed_(seed) {
  if (d_text_ < 8) throw ValidationError("d_text", "must be at least 8");
}

std::string HashedFeaturizer::id() const {
  return "hashed:" + std::to_string(d_text_) + ":" + std::to_string(seed_);
}

TextEmbedding HashedFeaturizer::embed(std::string_view text) const {
  return hashed_featurizer(text, d_text_, seed_);
}

void EmbeddingCache::put(const std::string& key, const TextEmbedding& e) {
  std::unique_lock lock(mutex_);
  entries_.insert_or_assign(key, e);
}

std::optional<TextEmbedding> EmbeddingCache::get(const std::string& key) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool EmbeddingCache::contains(const std::string& key) const {
  std::shared_lock lock(mutex_);
  return entries_.contains(key);
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<std::uint8_t> EmbeddingCache::serialize() const {
  std::shared_lock lock(mutex_);
  std::vector<std::uint8_t> out;
  le::put_bytes(out, kCacheMagic);
  for (const auto& [key, e] : entries_) {
    if (!is_hex_key(key)) throw Error("cache key is not a 64-character hex digest: " + key);
    le::put_bytes(out, key);
    le::put_u32(out, static_cast<std::uint32_t>(e.dim()));
    for (Eigen::Index i = 0; i < e.values.size(); ++i) le::put_f64(out, e.values(i));
  }
  return out;
}

EmbeddingCache EmbeddingCache::deserialize(const std::vector<std::uint8_t>& bytes, const std::string& context) {
  le::Reader in(bytes, context);
  if (in.bytes(kCacheMagic.size()) != kCacheMagic) throw ValidationError(context, "bad embedding cache magic");
  EmbeddingCache cache;
  while (!in.done()) {
    const auto key = in.bytes(64);
    if (!is_hex_key(key)) throw ValidationError(context, "corrupt record key at byte " + std::to_string(in.pos() - 64));
    try {
      const auto d = in.u32();
      if (d == 0) throw ValidationError(context, "zero dimension");
      TextEmbedding e;
      e.provider_id = "cache";
      e.values.resize(d);
      for (std::uint32_t i = 0; i < d; ++i) {
        e.values(i) = in.f64();
        if (!std::isfinite(e.values(i))) throw ValidationError(context, "non-finite value");
      }
      cache.entries_.insert_or_assign(key, std::move(e));
    } catch (const ValidationError& err) {
      throw ValidationError(context, "corrupt entry " + key + ": " + err.message());
    }
  }
  return cache;
}

void EmbeddingCache::save(const std::filesystem::path& path) const { write_binary_file(path, serialize()); }

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& path) {
  return deserialize(read_binary_file(path), path.string());
}

void EmbeddingCache::load_directory(const std::filesystem::path& dir, const std::string& provider_id) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto doc = read_json_file(f);
    const auto path = f.filename().string();
    const auto key = doc::get_string(doc, "key", path);
    const auto& values = doc::get_array(doc, "values", path);
    TextEmbedding e;
    e.provider_id = provider_id;
    e.values.resize(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!values[i].is_number()) throw ValidationError(path + ".values[" + std::to_string(i) + "]", "expected a number");
      e.values(static_cast<Eigen::Index>(i)) = values[i].get<double>();
    }
    put(key, e);
  }
}

TextEmbedding embed_cached(const EmbeddingProvider& provider, EmbeddingCache& cache, std::string_view text,
                           std::string* key_out) {
  const auto key = EmbeddingCache::key_for(text);
  if (key_out) *key_out = key;
  if (auto hit = cache.get(key)) return *hit;
  auto e = provider.embed(text);
  cache.put(key, e);
  return e;
}

}  // namespace mpmdse
