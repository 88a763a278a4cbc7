#include "v2c/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "v2c/error.hpp"
#include "v2c/io.hpp"

namespace v2c::vocab {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Non-ASCII bytes count as word characters so UTF-8 words are never split.
bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

std::vector<std::string> words_of(std::string_view s) {
  std::vector<std::string> out;
  std::string current;
  for (char c : s) {
    if (is_word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

// Class names often use '_' in place of spaces.
std::string canonical_class_name(std::string_view name) {
  std::string out = lower(trim(name));
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

// Enumerates index tuples over `ranks` (each list strictly increasing) in
// order of (sum of ranks, rank_0, rank_1, ...), lazily. Every tuple other than
// the origin has a predecessor with a strictly smaller key, so the heap always
// holds the next tuple.
class SmallestSums {
 public:
  explicit SmallestSums(std::vector<std::vector<std::size_t>> ranks) : ranks_(std::move(ranks)) {
    for (const auto& r : ranks_) {
      if (r.empty()) return;
    }
    push(std::vector<std::size_t>(ranks_.size(), 0));
  }

  bool next(std::vector<std::size_t>& out) {
    if (heap_.empty()) return false;
    Key top = heap_.top();
    heap_.pop();
    out = top.index;
    for (std::size_t d = 0; d < ranks_.size(); ++d) {
      if (out[d] + 1 < ranks_[d].size()) {
        auto succ = out;
        ++succ[d];
        push(std::move(succ));
      }
    }
    return true;
  }

 private:
  struct Key {
    std::vector<std::size_t> order;  // sum followed by the component ranks
    std::vector<std::size_t> index;
    bool operator>(const Key& o) const { return order > o.order; }
  };

  void push(std::vector<std::size_t> index) {
    if (!seen_.insert(index).second) return;
    Key key;
    key.order.push_back(0);
    for (std::size_t d = 0; d < index.size(); ++d) {
      key.order[0] += ranks_[d][index[d]];
      key.order.push_back(ranks_[d][index[d]]);
    }
    key.index = std::move(index);
    heap_.push(std::move(key));
  }

  std::vector<std::vector<std::size_t>> ranks_;
  std::priority_queue<Key, std::vector<Key>, std::greater<>> heap_;
  std::set<std::vector<std::size_t>> seen_;
};

std::vector<const LexiconEntry*> top_with_pos(const Lexicon& lex, Pos pos, std::size_t limit) {
  auto words = lex.with_pos(pos);
  if (words.size() > limit) words.resize(limit);
  return words;
}

std::vector<std::size_t> ranks_of(const std::vector<const LexiconEntry*>& words) {
  std::vector<std::size_t> out;
  out.reserve(words.size());
  for (const auto* w : words) out.push_back(w->rank);
  return out;
}

}  // namespace

Lexicon::Lexicon(std::vector<LexiconEntry> entries) : entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(),
            [](const LexiconEntry& a, const LexiconEntry& b) { return a.rank < b.rank; });
  std::unordered_set<std::string> words;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].rank != i + 1) {
      throw Error(ErrorCode::ParseError, "lexicon ranks must be unique and contiguous from 1; got rank " +
                                             std::to_string(entries_[i].rank) + " at position " +
                                             std::to_string(i + 1));
    }
    if (!words.insert(entries_[i].word).second) {
      throw Error(ErrorCode::ParseError, "duplicate lexicon word '" + entries_[i].word + "'");
    }
  }
}

std::vector<const LexiconEntry*> Lexicon::with_pos(Pos p) const {
  std::vector<const LexiconEntry*> out;
  for (const auto& e : entries_) {
    if (e.has(p)) out.push_back(&e);
  }
  return out;
}

Lexicon parse_lexicon(std::string_view text) {
  std::vector<LexiconEntry> entries;
  std::size_t line_no = 0;
  for (std::string_view raw : split(text, '\n')) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (trim(raw).empty()) continue;
    const auto fields = split(raw, '\t');
    const std::string where = "lexicon line " + std::to_string(line_no);
    if (fields.size() != 3) throw Error(ErrorCode::ParseError, where + ": expected 3 tab-separated fields");

    LexiconEntry e;
    e.word = lower(trim(fields[0]));
    if (e.word.empty()) throw Error(ErrorCode::ParseError, where + ": empty word");
    const auto rank_text = trim(fields[1]);
    auto [ptr, ec] = std::from_chars(rank_text.data(), rank_text.data() + rank_text.size(), e.rank);
    if (ec != std::errc{} || ptr != rank_text.data() + rank_text.size() || e.rank == 0) {
      throw Error(ErrorCode::ParseError, where + ": bad rank '" + std::string(rank_text) + "'");
    }
    for (std::string_view tag : split(fields[2], ',')) {
      tag = trim(tag);
      if (tag == "ADJ") e.pos |= static_cast<std::uint8_t>(Pos::Adj);
      else if (tag == "NOUN") e.pos |= static_cast<std::uint8_t>(Pos::Noun);
      else if (tag == "OTHER") e.pos |= static_cast<std::uint8_t>(Pos::Other);
      else throw Error(ErrorCode::ParseError, where + ": unknown POS tag '" + std::string(tag) + "'");
    }
    entries.push_back(std::move(e));
  }
  return Lexicon(std::move(entries));
}

Lexicon load_lexicon(const std::filesystem::path& path) { return parse_lexicon(read_file(path)); }

RelationSet parse_relations(std::string_view text) {
  RelationSet out;
  for (std::string_view line : split(text, '\n')) {
    line = trim(line);
    if (!line.empty()) out.relations.push_back(lower(line));
  }
  return out;
}

RelationSet load_relations(const std::filesystem::path& path) { return parse_relations(read_file(path)); }

std::string_view to_string(ConceptKind kind) {
  switch (kind) {
    case ConceptKind::Atomic: return "atomic";
    case ConceptKind::Bigram: return "bigram";
    case ConceptKind::Trigram: return "trigram";
  }
  return "atomic";
}

ConceptKind concept_kind_from_string(std::string_view s) {
  if (s == "atomic") return ConceptKind::Atomic;
  if (s == "bigram") return ConceptKind::Bigram;
  if (s == "trigram") return ConceptKind::Trigram;
  throw Error(ErrorCode::ParseError, "unknown concept kind '" + std::string(s) + "'");
}

ConceptCatalog::ConceptCatalog(std::vector<std::pair<std::string, ConceptKind>> concepts) {
  std::unordered_set<std::string> seen;
  concepts_.reserve(concepts.size());
  for (auto& [text, kind] : concepts) {
    if (!seen.insert(text).second) throw Error(ErrorCode::InvalidArgument, "duplicate concept '" + text + "'");
    concepts_.push_back(Concept{concepts_.size(), std::move(text), kind});
  }
}

void ConceptCatalog::set_embeddings(embkit::EmbeddingMatrix embeddings) {
  if (embeddings.rows() != concepts_.size()) {
    throw Error(ErrorCode::DimMismatch, "embedding rows " + std::to_string(embeddings.rows()) +
                                            " != catalog size " + std::to_string(concepts_.size()));
  }
  embeddings_ = std::move(embeddings);
}

const embkit::EmbeddingMatrix& ConceptCatalog::require_embeddings() const {
  if (!embeddings_) throw Error(ErrorCode::MissingEmbeddings, "catalog has no embeddings");
  return *embeddings_;
}

ConceptCatalog build_atomic(const Lexicon& lex, std::size_t top_n) {
  if (lex.empty()) throw Error(ErrorCode::EmptyLexicon, "no words to build atomic concepts from");
  if (top_n == 0) throw Error(ErrorCode::InvalidArgument, "top_n must be >= 1");
  std::vector<std::pair<std::string, ConceptKind>> out;
  const std::size_t n = std::min(top_n, lex.size());
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(lex.entries()[i].word, ConceptKind::Atomic);
  return ConceptCatalog(std::move(out));
}

ConceptCatalog build_bigrams(const Lexicon& lex, std::size_t max_adj, std::size_t max_noun, std::size_t cap) {
  const auto adjs = top_with_pos(lex, Pos::Adj, max_adj);
  const auto nouns = top_with_pos(lex, Pos::Noun, max_noun);
  if (adjs.empty()) throw Error(ErrorCode::NoAdjectives, "lexicon has no adjectives");
  if (nouns.empty()) throw Error(ErrorCode::NoNouns, "lexicon has no nouns");

  std::vector<std::pair<std::string, ConceptKind>> out;
  SmallestSums pairs({ranks_of(adjs), ranks_of(nouns)});
  std::vector<std::size_t> idx;
  while (out.size() < cap && pairs.next(idx)) {
    const auto* a = adjs[idx[0]];
    const auto* n = nouns[idx[1]];
    if (a == n) continue;
    out.emplace_back(a->word + " " + n->word, ConceptKind::Bigram);
  }
  return ConceptCatalog(std::move(out));
}

ConceptCatalog build_trigrams(const Lexicon& lex, const RelationSet& rels, std::size_t max_adj,
                              std::size_t max_noun, std::size_t cap) {
  if (rels.relations.empty()) throw Error(ErrorCode::NoRelations, "relation set is empty");
  const auto adjs = top_with_pos(lex, Pos::Adj, max_adj);
  const auto nouns = top_with_pos(lex, Pos::Noun, max_noun);
  if (adjs.empty()) throw Error(ErrorCode::NoAdjectives, "lexicon has no adjectives");
  if (nouns.empty()) throw Error(ErrorCode::NoNouns, "lexicon has no nouns");

  std::vector<std::size_t> rel_ranks(rels.relations.size());
  for (std::size_t i = 0; i < rel_ranks.size(); ++i) rel_ranks[i] = i + 1;

  std::vector<std::pair<std::string, ConceptKind>> out;
  std::unordered_set<std::string> seen;
  SmallestSums triples({rel_ranks, ranks_of(adjs), ranks_of(nouns)});
  std::vector<std::size_t> idx;
  while (out.size() < cap && triples.next(idx)) {
    const auto* a = adjs[idx[1]];
    const auto* n = nouns[idx[2]];
    if (a == n) continue;
    std::string text = rels.relations[idx[0]] + " " + a->word + " " + n->word;
    // Repeated relation phrases in the input would otherwise collide.
    if (!seen.insert(text).second) continue;
    out.emplace_back(std::move(text), ConceptKind::Trigram);
  }
  return ConceptCatalog(std::move(out));
}

ConceptCatalog merge_catalogs(const std::vector<ConceptCatalog>& parts) {
  std::vector<std::pair<std::string, ConceptKind>> out;
  std::unordered_set<std::string> seen;
  for (const auto& part : parts) {
    for (const auto& c : part.concepts()) {
      if (seen.insert(c.text).second) out.emplace_back(c.text, c.kind);
    }
  }
  return ConceptCatalog(std::move(out));
}

bool contains_phrase(std::string_view text, std::string_view phrase) {
  const std::string hay = lower(text);
  const std::string needle = canonical_class_name(phrase);
  if (needle.empty()) return false;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok = end == hay.size() || !is_word_char(hay[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

ConceptCatalog remove_class_leakage(const ConceptCatalog& cat, const std::vector<std::string>& class_names,
                                    LeakageMode mode) {
  std::unordered_set<std::string> class_tokens;
  if (mode == LeakageMode::PerToken) {
    for (const auto& name : class_names) {
      for (auto& w : words_of(name)) class_tokens.insert(std::move(w));
    }
  }

  std::vector<std::pair<std::string, ConceptKind>> kept;
  std::vector<std::size_t> kept_rows;
  for (const auto& c : cat.concepts()) {
    bool leaks = false;
    if (mode == LeakageMode::Phrase) {
      leaks = std::any_of(class_names.begin(), class_names.end(),
                          [&](const std::string& name) { return contains_phrase(c.text, name); });
    } else {
      const auto words = words_of(c.text);
      leaks = std::any_of(words.begin(), words.end(),
                          [&](const std::string& w) { return class_tokens.count(w) > 0; });
    }
    if (!leaks) {
      kept.emplace_back(c.text, c.kind);
      kept_rows.push_back(c.id);
    }
  }
  ConceptCatalog out(std::move(kept));
  if (cat.embeddings()) out.set_embeddings(embkit::select_rows(*cat.embeddings(), kept_rows));
  return out;
}

std::string catalog_to_jsonl(const ConceptCatalog& cat) {
  std::string out;
  for (const auto& c : cat.concepts()) {
    nlohmann::ordered_json line;
    line["id"] = c.id;
    line["text"] = c.text;
    line["kind"] = std::string(to_string(c.kind));
    out += line.dump();
    out += '\n';
  }
  return out;
}

ConceptCatalog catalog_from_jsonl(std::string_view text) {
  std::vector<std::pair<std::string, ConceptKind>> concepts;
  std::size_t line_no = 0;
  for (std::string_view raw : split(text, '\n')) {
    ++line_no;
    if (trim(raw).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(raw);
      const auto id = j.at("id").get<std::size_t>();
      if (id != concepts.size()) {
        throw Error(ErrorCode::ParseError, "catalog line " + std::to_string(line_no) + ": id " +
                                               std::to_string(id) + " is not dense");
      }
      concepts.emplace_back(j.at("text").get<std::string>(),
                            concept_kind_from_string(j.at("kind").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, "catalog line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  try {
    return ConceptCatalog(std::move(concepts));
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

}  // namespace v2c::vocab
