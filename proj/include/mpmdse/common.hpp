#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace mpmdse {

using Json = nlohmann::json;

/// Row-major dense matrix, the storage type for every tensor in the library.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = Mat<double>;
using Vector = RowVec<double>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input failed a schema or invariant check. `path()` points at the offending
/// field (e.g. `nodes[3].nt`).
class ValidationError : public Error {
 public:
  ValidationError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)), message_(what) {}
  const std::string& path() const { return path_; }
  /// The message without the path prefix.
  const std::string& message() const { return message_; }
  /// Same error re-rooted under `prefix` (e.g. `$`).
  ValidationError under(const std::string& prefix) const {
    return ValidationError(path_.empty() ? prefix : prefix + "." + path_, message_);
  }

 private:
  std::string path_;
  std::string message_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Lower-case hex SHA-256 of `data` (64 characters).
std::string sha256_hex(std::string_view data);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

Json read_json_file(const std::filesystem::path& path);
/// Canonical document form: sorted keys, two-space indent, trailing newline.
std::string to_document(const Json& doc);
void write_json_file(const std::filesystem::path& path, const Json& doc);

/// Little-endian byte packing used by the binary file formats.
namespace le {
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);
void put_bytes(std::vector<std::uint8_t>& out, std::string_view s);

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, std::string context)
      : buf_(buf), context_(std::move(context)) {}
  std::uint32_t u32();
  double f64();
  std::string bytes(std::size_t n);
  bool done() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const;
  const std::vector<std::uint8_t>& buf_;
  std::string context_;
  std::size_t pos_ = 0;
};
}  // namespace le

/// Typed accessors for schema-checked documents.
namespace doc {
const Json& require(const Json& obj, const std::string& key, const std::string& path);
std::int64_t get_int(const Json& obj, const std::string& key, const std::string& path);
std::int64_t get_nonneg(const Json& obj, const std::string& key, const std::string& path);
double get_number(const Json& obj, const std::string& key, const std::string& path);
std::string get_string(const Json& obj, const std::string& key, const std::string& path);
const Json& get_array(const Json& obj, const std::string& key, const std::string& path);
const Json& get_object(const Json& obj, const std::string& key, const std::string& path);
/// Rejects any key of `obj` not in `allowed`.
void reject_unknown(const Json& obj, std::initializer_list<std::string_view> allowed,
                    const std::string& path);
}  // namespace doc

}  // namespace mpmdse

#include <random>

namespace mpmdse {

/// Seeded stream with platform-independent draws (std::mt19937_64 is fully
/// specified; the std distributions are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);
  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform double in (0, 1).
  double open_uniform();
  double normal();
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a tag.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace mpmdse
