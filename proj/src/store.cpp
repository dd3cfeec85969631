#include "vidloop/store.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include <fmt/format.h>

#include "vidloop/errors.hpp"

namespace vidloop {

namespace {

constexpr double kMinNorm = 1e-12;
constexpr double kUnitTolerance = 1e-6;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

std::uint64_t get_u64(std::string_view in, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError(fmt::format("dimension mismatch: {} vs {}", a.size(), b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> normalize(std::span<const double> vector) {
  const double n = norm(vector);
  if (!(n > kMinNorm)) {
    throw ValidationError(fmt::format("cannot normalize vector with norm {}", n));
  }
  std::vector<double> out(vector.begin(), vector.end());
  for (double& x : out) x /= n;
  return out;
}

EmbeddingStore::EmbeddingStore(std::size_t n_frames, std::size_t dim,
                               std::vector<float> vectors,
                               std::vector<double> timestamps,
                               std::uint32_t flags)
    : n_frames_(n_frames),
      dim_(dim),
      flags_(flags),
      raw_(std::move(vectors)),
      timestamps_(std::move(timestamps)) {
  if (n_frames_ < 1 || dim_ < 1) {
    throw ValidationError(fmt::format("store needs n_frames >= 1 and dim >= 1 (got {}x{})",
                                      n_frames_, dim_));
  }
  if (raw_.size() != n_frames_ * dim_) {
    throw ValidationError(fmt::format("expected {} vector entries, got {}",
                                      n_frames_ * dim_, raw_.size()));
  }
  if (timestamps_.size() != n_frames_) {
    throw ValidationError(fmt::format("expected {} timestamps, got {}", n_frames_,
                                      timestamps_.size()));
  }
  for (std::size_t i = 0; i < n_frames_; ++i) {
    if (!std::isfinite(timestamps_[i])) {
      throw ValidationError(fmt::format("timestamp {} is not finite", i));
    }
    if (i > 0 && !(timestamps_[i] > timestamps_[i - 1])) {
      throw ValidationError(fmt::format(
          "timestamps must be strictly increasing (frame {}: {} after {})", i,
          timestamps_[i], timestamps_[i - 1]));
    }
  }

  unit_.resize(raw_.size());
  for (std::size_t i = 0; i < n_frames_; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) {
      const double x = raw_[i * dim_ + k];
      if (!std::isfinite(x)) {
        throw ValidationError(fmt::format("frame {} has a non-finite component", i));
      }
      sq += x * x;
    }
    const double n = std::sqrt(sq);
    if (!(n > kMinNorm)) {
      throw ValidationError(fmt::format("frame {} has zero norm", i));
    }
    if (normalized() && std::abs(n - 1.0) > kUnitTolerance) {
      throw ValidationError(fmt::format(
          "frame {} has norm {} but the store is flagged as normalized", i, n));
    }
    for (std::size_t k = 0; k < dim_; ++k) {
      unit_[i * dim_ + k] = raw_[i * dim_ + k] / n;
    }
  }
}

EmbeddingStore EmbeddingStore::from_rows(const std::vector<std::vector<double>>& rows,
                                         std::vector<double> timestamps,
                                         std::uint32_t flags) {
  if (rows.empty()) throw ValidationError("store needs at least one frame");
  const std::size_t dim = rows.front().size();
  std::vector<float> flat;
  flat.reserve(rows.size() * dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) {
      throw ValidationError(fmt::format("row {} has {} entries, expected {}", i,
                                        rows[i].size(), dim));
    }
    for (double x : rows[i]) flat.push_back(static_cast<float>(x));
  }
  return EmbeddingStore(rows.size(), dim, std::move(flat), std::move(timestamps), flags);
}

EmbeddingStore EmbeddingStore::from_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> ts(rows.size());
  for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = static_cast<double>(i);
  return from_rows(rows, std::move(ts));
}

void EmbeddingStore::check_frame(std::size_t frame) const {
  if (frame >= n_frames_) {
    throw BoundsError(fmt::format("frame index {} out of range [0, {})", frame, n_frames_));
  }
}

std::span<const float> EmbeddingStore::raw_row(std::size_t frame) const {
  check_frame(frame);
  return std::span<const float>(raw_).subspan(frame * dim_, dim_);
}

std::span<const double> EmbeddingStore::row(std::size_t frame) const {
  check_frame(frame);
  return std::span<const double>(unit_).subspan(frame * dim_, dim_);
}

double EmbeddingStore::timestamp(std::size_t frame) const {
  check_frame(frame);
  return timestamps_[frame];
}

bool EmbeddingStore::operator==(const EmbeddingStore& other) const {
  if (n_frames_ != other.n_frames_ || dim_ != other.dim_ || flags_ != other.flags_) {
    return false;
  }
  for (std::size_t i = 0; i < raw_.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(raw_[i]) != std::bit_cast<std::uint32_t>(other.raw_[i])) {
      return false;
    }
  }
  for (std::size_t i = 0; i < timestamps_.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(timestamps_[i]) !=
        std::bit_cast<std::uint64_t>(other.timestamps_[i])) {
      return false;
    }
  }
  return true;
}

SearchState SearchState::make(std::string text, std::span<const double> embedding) {
  return SearchState{std::move(text), normalize(embedding)};
}

std::uint64_t store_file_size(std::uint64_t n_frames, std::uint64_t dim) {
  return kStoreHeaderBytes + n_frames * dim * 4 + n_frames * 8;
}

std::string encode_store(const EmbeddingStore& store) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (store.n_frames() > kMax || store.dim() > kMax) {
    throw ValidationError("store dimensions exceed the 32-bit header fields");
  }
  std::string out;
  out.reserve(store_file_size(store.n_frames(), store.dim()));
  out.append(kStoreMagic);
  put_u32(out, kStoreVersion);
  put_u32(out, static_cast<std::uint32_t>(store.n_frames()));
  put_u32(out, static_cast<std::uint32_t>(store.dim()));
  put_u32(out, store.flags());
  for (float x : store.raw()) put_u32(out, std::bit_cast<std::uint32_t>(x));
  for (double t : store.timestamps()) put_u64(out, std::bit_cast<std::uint64_t>(t));
  return out;
}

EmbeddingStore decode_store(std::string_view bytes) {
  if (bytes.size() < kStoreHeaderBytes) {
    throw FormatError(fmt::format("truncated store header ({} bytes)", bytes.size()));
  }
  if (bytes.substr(0, 4) != kStoreMagic) throw FormatError("bad magic, expected UVEB");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kStoreVersion) {
    throw FormatError(fmt::format("unsupported store version {}", version));
  }
  const std::uint64_t n = get_u32(bytes, 8);
  const std::uint64_t d = get_u32(bytes, 12);
  const std::uint32_t flags = get_u32(bytes, 16);
  // n, d < 2^32, so n*d*4 + n*8 only overflows when both are huge.
  if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / 8 / (d + 2)) {
    throw FormatError("store header describes an impossibly large payload");
  }
  const std::uint64_t expected = store_file_size(n, d);
  if (bytes.size() < expected) {
    throw FormatError(fmt::format("truncated store: {} bytes, expected {}", bytes.size(), expected));
  }
  if (bytes.size() > expected) {
    throw FormatError(fmt::format("trailing bytes in store: {} bytes, expected {}",
                                  bytes.size(), expected));
  }

  std::vector<float> vectors(n * d);
  std::size_t offset = kStoreHeaderBytes;
  for (auto& x : vectors) {
    x = std::bit_cast<float>(get_u32(bytes, offset));
    offset += 4;
  }
  std::vector<double> timestamps(n);
  for (auto& t : timestamps) {
    t = std::bit_cast<double>(get_u64(bytes, offset));
    offset += 8;
  }
  return EmbeddingStore(n, d, std::move(vectors), std::move(timestamps), flags);
}

EmbeddingStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open store '{}'", path.string()));
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(fmt::format("failed reading store '{}'", path.string()));
  return decode_store(bytes);
}

void save_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  const std::string bytes = encode_store(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("failed writing store '{}'", path.string()));
}

}  // namespace vidloop
