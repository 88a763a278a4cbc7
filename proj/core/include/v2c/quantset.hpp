#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "v2c/embkit.hpp"

namespace v2c::quantset {

enum class BaseSource { Text, Images };

/// One unit-norm anchor vector per class (row k = class k).
struct BaseFeatures {
  embkit::EmbeddingMatrix vectors;
  BaseSource source = BaseSource::Text;

  std::size_t classes() const noexcept { return vectors.rows(); }
};

/// Mean of each class's prompt-template embeddings, renormalized.
/// Rows are grouped by their label. `n_classes` = 0 infers max label + 1.
BaseFeatures base_from_text(const embkit::EmbeddingMatrix& class_prompt_embeddings, std::size_t n_classes = 0);

/// Mean of each class's few-shot image embeddings, renormalized.
BaseFeatures base_from_images(const embkit::EmbeddingMatrix& fewshot, std::size_t n_classes = 0);

/// Per-class pool row indices, each list descending by similarity to its base.
struct QuantSet {
  std::size_t per_class = 0;
  std::vector<std::vector<std::size_t>> classes;

  bool operator==(const QuantSet&) const = default;
};

/// Images assumed per class when the count is not configured.
inline constexpr std::size_t kDefaultPerClass = 100;

/// For each class, the `per_class` pool rows with the highest cosine to its
/// base feature (clamped to the pool size). Exact.
QuantSet select_quantset(const BaseFeatures& base, const embkit::EmbeddingMatrix& pool,
                         std::size_t per_class = kDefaultPerClass);

/// {"per_class":int,"classes":[[indices...],...]}
std::string quantset_to_json(const QuantSet& q);
QuantSet quantset_from_json(std::string_view text);

}  // namespace v2c::quantset
