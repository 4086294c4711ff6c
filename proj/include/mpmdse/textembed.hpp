#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>

#include "mpmdse/common.hpp"

namespace mpmdse {

inline constexpr std::size_t kDefaultTextDim = 768;

/// Pooled text representation (symbol h_S).
struct TextEmbedding {
  Vector values;
  std::string provider_id;

  std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
  bool operator==(const TextEmbedding& o) const {
    return provider_id == o.provider_id && values.size() == o.values.size() && values == o.values;
  }
};

/// Mean of per-layer CLS vectors, one row per layer. The stack's rows are the
/// l transformer layer outputs; the embedding-layer output is not included.
template <typename Derived>
RowVec<typename Derived::Scalar> average_cls(const Eigen::MatrixBase<Derived>& layers) {
  if (layers.rows() == 0 || layers.cols() == 0) throw ValidationError("layers", "empty CLS stack");
  return layers.colwise().mean();
}

/// Maps merged source text to an embedding. Implementations must be pure
/// functions of (text, provider configuration).
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual TextEmbedding embed(std::string_view text) const = 0;
};

/// Splits on identifier, number and single punctuation boundaries.
std::vector<std::string> tokenize_source(std::string_view text);

/// Signed feature hashing of token unigrams and bigrams, L2-normalized.
TextEmbedding hashed_featurizer(std::string_view text, std::size_t d_text, std::uint64_t seed);

class HashedFeaturizer final : public EmbeddingProvider {
 public:
  explicit HashedFeaturizer(std::size_t d_text = kDefaultTextDim, std::uint64_t seed = 0);
  std::string id() const override;
  std::size_t dim() const override { return d_text_; }
  TextEmbedding embed(std::string_view text) const override;

 private:
  std::size_t d_text_;
  std::uint64_t seed_;
};

/// Content-addressed embedding store keyed by the SHA-256 of the merged text.
/// Concurrent readers, single writer.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  EmbeddingCache(EmbeddingCache&& other) noexcept : entries_(std::move(other.entries_)) {}
  EmbeddingCache& operator=(EmbeddingCache&& other) noexcept {
    if (this != &other) {
      std::unique_lock lock(mutex_);
      entries_ = std::move(other.entries_);
    }
    return *this;
  }

  static std::string key_for(std::string_view text) { return sha256_hex(text); }

  void put(const std::string& key, const TextEmbedding& e);
  std::optional<TextEmbedding> get(const std::string& key) const;
  bool contains(const std::string& key) const;
  std::size_t size() const;

  /// Binary format: magic `MPMEMB01`, then records of
  /// {64 ASCII hex key bytes, u32 d_text, d_text little-endian f64}.
  void save(const std::filesystem::path& path) const;
  static EmbeddingCache load(const std::filesystem::path& path);
  std::vector<std::uint8_t> serialize() const;
  static EmbeddingCache deserialize(const std::vector<std::uint8_t>& bytes, const std::string& context);

  /// Merges a directory of `{key, values}` documents (one file per
  /// configuration) of precomputed external embeddings.
  void load_directory(const std::filesystem::path& dir, const std::string& provider_id = "external");

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, TextEmbedding> entries_;
};

/// Returns the cached embedding for `text`, computing and storing it on a miss.
TextEmbedding embed_cached(const EmbeddingProvider& provider, EmbeddingCache& cache,
                           std::string_view text, std::string* key_out = nullptr);

}  // namespace mpmdse
