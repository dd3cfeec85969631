#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vidloop {

/// Immutable pool of cached frame embeddings with their timestamps.
///
/// The persisted payload is kept exactly as given (32-bit floats plus the
/// flags word) so that save/load is bit-exact. All arithmetic goes through
/// `row()`, a 64-bit copy of each frame normalized to unit length.
class EmbeddingStore {
 public:
  static constexpr std::uint32_t kFlagNormalized = 1u;

  /// `vectors` is row-major, frame i occupying [i*dim, (i+1)*dim).
  /// Throws ValidationError when any invariant fails.
  EmbeddingStore(std::size_t n_frames, std::size_t dim,
                 std::vector<float> vectors, std::vector<double> timestamps,
                 std::uint32_t flags = 0);

  /// Convenience for tests and synthetic pools; rows are narrowed to float.
  static EmbeddingStore from_rows(const std::vector<std::vector<double>>& rows,
                                  std::vector<double> timestamps,
                                  std::uint32_t flags = 0);

  /// Rows at t = 0, 1, 2, ... seconds.
  static EmbeddingStore from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t n_frames() const noexcept { return n_frames_; }
  std::size_t dim() const noexcept { return dim_; }
  std::uint32_t flags() const noexcept { return flags_; }
  bool normalized() const noexcept { return (flags_ & kFlagNormalized) != 0; }

  std::span<const float> raw() const noexcept { return raw_; }
  std::span<const float> raw_row(std::size_t frame) const;
  std::span<const double> row(std::size_t frame) const;
  std::span<const double> timestamps() const noexcept { return timestamps_; }
  double timestamp(std::size_t frame) const;

  /// Field-for-field equality of the persisted representation.
  bool operator==(const EmbeddingStore& other) const;

 private:
  void check_frame(std::size_t frame) const;

  std::size_t n_frames_;
  std::size_t dim_;
  std::uint32_t flags_;
  std::vector<float> raw_;
  std::vector<double> timestamps_;
  std::vector<double> unit_;
};

/// Search text together with its unit-normalized embedding.
struct SearchState {
  std::string text;
  std::vector<double> embedding;

  /// Normalizes `embedding`; throws ValidationError on a near-zero vector.
  static SearchState make(std::string text, std::span<const double> embedding);
};

/// Returns x / ||x||. Throws ValidationError when ||x|| <= 1e-12.
std::vector<double> normalize(std::span<const double> vector);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

// Store file format, little-endian:
//   0..3 magic "UVEB", 4..7 version (1), 8..11 N, 12..15 d, 16..19 flags,
//   N*d float32 row-major, then N float64 timestamps.
inline constexpr std::string_view kStoreMagic = "UVEB";
inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::size_t kStoreHeaderBytes = 20;

std::uint64_t store_file_size(std::uint64_t n_frames, std::uint64_t dim);

std::string encode_store(const EmbeddingStore& store);
EmbeddingStore decode_store(std::string_view bytes);

EmbeddingStore load_store(const std::filesystem::path& path);
void save_store(const EmbeddingStore& store, const std::filesystem::path& path);

}  // namespace vidloop
