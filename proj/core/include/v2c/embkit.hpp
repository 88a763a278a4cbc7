#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "v2c/matrix.hpp"

namespace v2c::embkit {

/// Row-major float32 embeddings with per-row metadata.
///
/// `labels` carries class indices for labeled sets; `groups` ties augmented
/// views of one source image together. Both are optional and, when present,
/// have exactly one entry per row.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  /// Empty `ids` are filled with the decimal row index.
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data,
                  std::vector<std::string> ids = {},
                  std::optional<std::vector<std::int64_t>> labels = std::nullopt,
                  std::optional<std::vector<std::int64_t>> groups = std::nullopt);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const float> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }
  std::span<float> row(std::size_t r) { return {data_.data() + r * dim_, dim_}; }

  const std::vector<float>& data() const noexcept { return data_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::optional<std::vector<std::int64_t>>& labels() const noexcept { return labels_; }
  const std::optional<std::vector<std::int64_t>>& groups() const noexcept { return groups_; }

  void set_labels(std::optional<std::vector<std::int64_t>> labels);
  void set_groups(std::optional<std::vector<std::int64_t>> groups);

  /// Labels, or throws InvalidArgument when the matrix is unlabeled.
  const std::vector<std::int64_t>& require_labels() const;

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::vector<std::string> ids_;
  std::optional<std::vector<std::int64_t>> labels_;
  std::optional<std::vector<std::int64_t>> groups_;
};

/// Gathers rows (with their metadata) in the given order.
EmbeddingMatrix select_rows(const EmbeddingMatrix& m, std::span<const std::size_t> rows);

// --- V2CE serialization -----------------------------------------------------
//
// Little-endian layout:
//   "V2CE" | version u32 = 1 | dtype u32 = 0 (float32) | rows u64 | dim u64
//   | meta_len u64 | meta JSON {"ids":[...],"labels":[...]|null,"groups":[...]|null}
//   | rows*dim float32 payload

inline constexpr std::uint32_t kV2ceVersion = 1;
inline constexpr std::uint32_t kV2ceFloat32 = 0;

std::string encode_v2ce(const EmbeddingMatrix& m);
EmbeddingMatrix decode_v2ce(std::span<const char> bytes);

void save_v2ce(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix load_v2ce(const std::filesystem::path& path);

// --- numerics ---------------------------------------------------------------

/// Dot product with a double accumulator, fixed left-to-right order.
double dot(std::span<const float> a, std::span<const float> b);
double squared_norm(std::span<const float> a);
double squared_distance(std::span<const float> a, std::span<const float> b);

/// Scales every row to unit L2 norm. Throws ZeroVector naming the row.
EmbeddingMatrix normalize_rows(EmbeddingMatrix m);

/// Normalizes one vector in place (same arithmetic as normalize_rows).
void normalize(std::span<float> v);

/// Row indices with their scores; see cosine_topk/euclidean_topk for order.
struct TopKResult {
  std::vector<std::size_t> indices;
  std::vector<double> scores;
};

/// Exact top-k by cosine similarity, descending; ties go to the lower row.
/// k is clamped to the row count.
TopKResult cosine_topk(std::span<const float> query, const EmbeddingMatrix& m, std::size_t k);

/// Exact top-k by squared Euclidean distance, ascending; ties go to the lower row.
TopKResult euclidean_topk(std::span<const float> query, const EmbeddingMatrix& m, std::size_t k);

/// result(i, j) = dot(x_i, c_j) for unit-normalized inputs, clamped to [-1, 1].
/// Throws NotNormalized if any row norm is off by more than 1e-4.
Matrix<float> batch_similarity(const EmbeddingMatrix& x, const EmbeddingMatrix& c);

/// Throws NotNormalized unless every row norm is within `tolerance` of 1.
void require_normalized(const EmbeddingMatrix& m, double tolerance = 1e-4);

}  // namespace v2c::embkit
