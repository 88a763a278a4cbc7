#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "v2c/embkit.hpp"
#include "v2c/quantset.hpp"
#include "v2c/vocab.hpp"

namespace v2c::conceptfilter {

/// Concepts each image view votes for.
inline constexpr std::size_t kDefaultTopK = 5;
/// Concepts kept per class after filtering.
inline constexpr std::size_t kDefaultM = 500;

/// Per-class concept vote counts. Sum of class k's counts is
/// k_per_view * views_seen[k].
struct FrequencyTable {
  std::size_t k_per_view = 0;
  std::vector<std::map<std::size_t, std::uint64_t>> counts;
  std::vector<std::uint64_t> views_seen;

  bool operator==(const FrequencyTable&) const = default;
};

/// Each view row in the augmentation group of a selected pool image adds one
/// vote to each of its `k` most cosine-similar concepts, per class.
///
/// A selected pool index p resolves to the views whose group id is
/// pool_groups[p]; with empty `pool_groups` the group id is p itself. Views
/// without group metadata are their own group (group id = row index).
FrequencyTable count_topk_concepts(const quantset::QuantSet& qset, const embkit::EmbeddingMatrix& views,
                                   const vocab::ConceptCatalog& concepts, std::size_t k = kDefaultTopK,
                                   std::span<const std::int64_t> pool_groups = {});

/// Filtered vocabulary used as the tokenizer codebook.
///
/// `concepts` is the deduplicated union (ids 0..size-1, with embeddings),
/// ordered by the id it had in the source catalog; `source_ids` maps back.
/// `per_class` lists are in union ids, sorted by (count desc, source id asc).
struct Codebook {
  std::size_t m = 0;
  std::vector<std::vector<std::size_t>> per_class;
  std::vector<std::size_t> source_ids;
  vocab::ConceptCatalog concepts;

  /// Class k's list translated back to source-catalog ids.
  std::vector<std::size_t> class_source_ids(std::size_t k) const;
};

/// Keeps each class's `m` most frequent concepts with at least `min_count`
/// votes; ties by lower id.
Codebook build_codebook(const FrequencyTable& freq, const vocab::ConceptCatalog& concepts,
                        std::size_t m = kDefaultM, std::uint64_t min_count = 1);

std::string frequency_to_json(const FrequencyTable& f);
FrequencyTable frequency_from_json(std::string_view text);

/// Codebook structure only; the union catalog and its embeddings travel as
/// JSON lines and V2CE.
std::string codebook_to_json(const Codebook& cb);
Codebook codebook_from_json(std::string_view text, vocab::ConceptCatalog union_catalog);

}  // namespace v2c::conceptfilter
