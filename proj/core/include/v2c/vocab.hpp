#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "v2c/embkit.hpp"

namespace v2c::vocab {

enum class Pos : std::uint8_t { Adj = 1, Noun = 2, Other = 4 };

struct LexiconEntry {
  std::string word;
  std::size_t rank = 0;   // 1 = most frequent
  std::uint8_t pos = 0;   // bitset of Pos

  bool has(Pos p) const noexcept { return (pos & static_cast<std::uint8_t>(p)) != 0; }
};

/// Frequency-ranked words with POS tags. Ranks are unique and contiguous from 1.
class Lexicon {
 public:
  Lexicon() = default;
  /// Validates and stores entries sorted by rank.
  explicit Lexicon(std::vector<LexiconEntry> entries);

  const std::vector<LexiconEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// Entries carrying `p`, in rank order.
  std::vector<const LexiconEntry*> with_pos(Pos p) const;

 private:
  std::vector<LexiconEntry> entries_;
};

/// Parses `word<TAB>rank<TAB>pos1[,pos2]` lines; tags are ADJ, NOUN, OTHER.
Lexicon parse_lexicon(std::string_view text);
Lexicon load_lexicon(const std::filesystem::path& path);

/// Relation phrases ("part of", "has a", ...); list position is the rank.
struct RelationSet {
  std::vector<std::string> relations;
};

/// One phrase per line; blank lines are skipped.
RelationSet parse_relations(std::string_view text);
RelationSet load_relations(const std::filesystem::path& path);

enum class ConceptKind { Atomic, Bigram, Trigram };

std::string_view to_string(ConceptKind kind);
ConceptKind concept_kind_from_string(std::string_view s);

struct Concept {
  std::size_t id = 0;
  std::string text;
  ConceptKind kind = ConceptKind::Atomic;

  bool operator==(const Concept&) const = default;
};

/// Concept vocabulary with dense ids 0..size-1 and unique texts.
/// Optional embeddings are row-aligned with ids.
class ConceptCatalog {
 public:
  ConceptCatalog() = default;
  /// Assigns dense ids in order. Throws InvalidArgument on duplicate text.
  explicit ConceptCatalog(std::vector<std::pair<std::string, ConceptKind>> concepts);

  const std::vector<Concept>& concepts() const noexcept { return concepts_; }
  std::size_t size() const noexcept { return concepts_.size(); }
  bool empty() const noexcept { return concepts_.empty(); }
  const Concept& operator[](std::size_t id) const { return concepts_.at(id); }

  const std::optional<embkit::EmbeddingMatrix>& embeddings() const noexcept { return embeddings_; }
  /// Throws DimMismatch unless rows == size().
  void set_embeddings(embkit::EmbeddingMatrix embeddings);
  /// Embeddings or MissingEmbeddings.
  const embkit::EmbeddingMatrix& require_embeddings() const;

  bool operator==(const ConceptCatalog&) const = default;

 private:
  std::vector<Concept> concepts_;
  std::optional<embkit::EmbeddingMatrix> embeddings_;
};

/// Default atomic vocabulary size.
inline constexpr std::size_t kDefaultTopN = 10000;

ConceptCatalog build_atomic(const Lexicon& lex, std::size_t top_n = kDefaultTopN);

/// "adj noun" phrases over the top `max_adj` adjectives and `max_noun` nouns,
/// keeping the `cap` pairs with the smallest rank(adj) + rank(noun), ties by
/// (rank(adj), rank(noun)). Pairs pairing a word with itself are skipped.
ConceptCatalog build_bigrams(const Lexicon& lex, std::size_t max_adj, std::size_t max_noun,
                             std::size_t cap);

/// "rel adj noun" phrases; a relation's rank is its 1-based list position.
ConceptCatalog build_trigrams(const Lexicon& lex, const RelationSet& rels, std::size_t max_adj,
                              std::size_t max_noun, std::size_t cap);

/// Concatenation, first occurrence of a text wins, ids re-densified.
/// Embeddings are dropped.
ConceptCatalog merge_catalogs(const std::vector<ConceptCatalog>& parts);

enum class LeakageMode {
  Phrase,   // drop if the full class-name phrase occurs on word boundaries
  PerToken  // drop if any word of any class name occurs as a word
};

/// Case-insensitive class-name removal. Embedding rows follow surviving concepts.
ConceptCatalog remove_class_leakage(const ConceptCatalog& cat, const std::vector<std::string>& class_names,
                                    LeakageMode mode = LeakageMode::Phrase);

/// True if `text` contains `phrase` case-insensitively on word boundaries.
bool contains_phrase(std::string_view text, std::string_view phrase);

/// JSON lines: {"id":int,"text":str,"kind":"atomic"|"bigram"|"trigram"}.
std::string catalog_to_jsonl(const ConceptCatalog& cat);
ConceptCatalog catalog_from_jsonl(std::string_view text);

}  // namespace v2c::vocab
