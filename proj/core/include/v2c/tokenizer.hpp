#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "v2c/conceptfilter.hpp"
#include "v2c/embkit.hpp"
#include "v2c/vocab.hpp"

namespace v2c::tokenizer {

/// Concepts emitted per image.
inline constexpr std::size_t kDefaultTokensPerImage = 5;
/// Bottleneck concepts kept per class.
inline constexpr std::size_t kDefaultConceptsPerClass = 50;

/// Quantizes image embeddings onto their nearest codebook concepts.
class V2CTokenizer {
 public:
  /// `codebook` must carry unit-normalized embeddings.
  explicit V2CTokenizer(vocab::ConceptCatalog codebook, std::size_t k = kDefaultTokensPerImage);
  explicit V2CTokenizer(const conceptfilter::Codebook& codebook, std::size_t k = kDefaultTokensPerImage)
      : V2CTokenizer(codebook.concepts, k) {}

  const vocab::ConceptCatalog& codebook() const noexcept { return codebook_; }
  std::size_t k() const noexcept { return k_; }

 private:
  vocab::ConceptCatalog codebook_;
  std::size_t k_;
};

struct Tokens {
  std::vector<std::size_t> ids;     // codebook ids, nearest first
  std::vector<double> distances;    // squared Euclidean
};

/// The k nearest codebook concepts by squared Euclidean distance, ties by lower id.
Tokens tokenize(const V2CTokenizer& t, std::span<const float> image);

/// Class-specific concept lists plus their deduplicated union.
///
/// `per_class` holds codebook ids in (frequency desc, id asc) order.
/// `union_ids` is ascending; `concepts` is the union catalog whose row j
/// (with embeddings) is codebook concept union_ids[j], i.e. CBM column j.
struct Bottleneck {
  std::vector<std::vector<std::size_t>> per_class;
  std::vector<std::size_t> union_ids;
  vocab::ConceptCatalog concepts;

  std::size_t classes() const noexcept { return per_class.size(); }
  std::size_t size() const noexcept { return union_ids.size(); }

  /// Column of a codebook id in the union; throws InvalidArgument if absent.
  std::size_t column_of(std::size_t codebook_id) const;
  std::vector<std::vector<std::size_t>> per_class_columns() const;
};

/// Tokenizes every labeled image, ranks each class's concepts by how often
/// they were emitted, and keeps the top `concepts_per_class`.
/// `n_classes` = 0 infers max label + 1; every class needs an image.
Bottleneck build_bottleneck(const V2CTokenizer& t, const embkit::EmbeddingMatrix& labeled,
                            std::size_t concepts_per_class = kDefaultConceptsPerClass, std::size_t n_classes = 0);

/// {"classes":N,"per_class":[[...]],"union_ids":[...]}; the union catalog and
/// its embeddings travel separately as JSON lines and V2CE.
std::string bottleneck_to_json(const Bottleneck& b);
Bottleneck bottleneck_from_json(std::string_view text, vocab::ConceptCatalog union_catalog);

}  // namespace v2c::tokenizer
