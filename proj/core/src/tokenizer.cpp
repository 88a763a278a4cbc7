#include "v2c/tokenizer.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "v2c/error.hpp"
#include "v2c/parallel.hpp"

namespace v2c::tokenizer {

V2CTokenizer::V2CTokenizer(vocab::ConceptCatalog codebook, std::size_t k) : codebook_(std::move(codebook)), k_(k) {
  if (k_ == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (codebook_.empty()) throw Error(ErrorCode::EmptyCodebook, "codebook has no concepts");
  embkit::require_normalized(codebook_.require_embeddings());
}

Tokens tokenize(const V2CTokenizer& t, std::span<const float> image) {
  const auto& emb = t.codebook().require_embeddings();
  if (emb.empty()) throw Error(ErrorCode::EmptyCodebook, "codebook has no concepts");
  auto top = embkit::euclidean_topk(image, emb, t.k());
  return Tokens{std::move(top.indices), std::move(top.scores)};
}

std::size_t Bottleneck::column_of(std::size_t codebook_id) const {
  auto it = std::lower_bound(union_ids.begin(), union_ids.end(), codebook_id);
  if (it == union_ids.end() || *it != codebook_id) {
    throw Error(ErrorCode::InvalidArgument, "concept " + std::to_string(codebook_id) + " is not in the bottleneck");
  }
  return static_cast<std::size_t>(it - union_ids.begin());
}

std::vector<std::vector<std::size_t>> Bottleneck::per_class_columns() const {
  std::vector<std::vector<std::size_t>> out(per_class.size());
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    for (std::size_t id : per_class[k]) out[k].push_back(column_of(id));
  }
  return out;
}

Bottleneck build_bottleneck(const V2CTokenizer& t, const embkit::EmbeddingMatrix& labeled,
                            std::size_t concepts_per_class, std::size_t n_classes) {
  if (concepts_per_class == 0) throw Error(ErrorCode::InvalidArgument, "concepts_per_class must be >= 1");
  const auto& labels = labeled.require_labels();
  if (n_classes == 0) {
    for (auto l : labels) n_classes = std::max<std::size_t>(n_classes, static_cast<std::size_t>(l) + 1);
  }
  if (n_classes == 0) throw Error(ErrorCode::MissingClass, "no labeled images");

  std::vector<std::vector<std::size_t>> rows_of(n_classes);
  for (std::size_t r = 0; r < labeled.rows(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= n_classes) {
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(labels[r]) + " out of range");
    }
    rows_of[static_cast<std::size_t>(labels[r])].push_back(r);
  }
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (rows_of[k].empty()) throw Error(ErrorCode::MissingClass, "class " + std::to_string(k) + " has no images");
  }

  Bottleneck b;
  b.per_class.resize(n_classes);
  parallel_for(n_classes, [&](std::size_t k) {
    std::map<std::size_t, std::size_t> freq;
    for (std::size_t r : rows_of[k]) {
      for (std::size_t id : tokenize(t, labeled.row(r)).ids) ++freq[id];
    }
    std::vector<std::pair<std::size_t, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& c) {
      if (a.second != c.second) return a.second > c.second;
      return a.first < c.first;
    });
    if (ranked.size() > concepts_per_class) ranked.resize(concepts_per_class);
    for (const auto& [id, count] : ranked) b.per_class[k].push_back(id);
  });

  for (const auto& list : b.per_class) b.union_ids.insert(b.union_ids.end(), list.begin(), list.end());
  std::sort(b.union_ids.begin(), b.union_ids.end());
  b.union_ids.erase(std::unique(b.union_ids.begin(), b.union_ids.end()), b.union_ids.end());

  std::vector<std::pair<std::string, vocab::ConceptKind>> texts;
  for (std::size_t id : b.union_ids) texts.emplace_back(t.codebook()[id].text, t.codebook()[id].kind);
  b.concepts = vocab::ConceptCatalog(std::move(texts));
  b.concepts.set_embeddings(embkit::select_rows(t.codebook().require_embeddings(), b.union_ids));
  return b;
}

std::string bottleneck_to_json(const Bottleneck& b) {
  nlohmann::ordered_json j;
  j["classes"] = b.classes();
  j["per_class"] = b.per_class;
  j["union_ids"] = b.union_ids;
  return j.dump() + "\n";
}

Bottleneck bottleneck_from_json(std::string_view text, vocab::ConceptCatalog union_catalog) {
  Bottleneck b;
  try {
    const auto j = nlohmann::json::parse(text);
    b.per_class = j.at("per_class").get<std::vector<std::vector<std::size_t>>>();
    b.union_ids = j.at("union_ids").get<std::vector<std::size_t>>();
    if (j.at("classes").get<std::size_t>() != b.per_class.size()) {
      throw Error(ErrorCode::ParseError, "bottleneck class count disagrees with per_class");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bottleneck: ") + e.what());
  }
  if (!std::is_sorted(b.union_ids.begin(), b.union_ids.end()) ||
      std::adjacent_find(b.union_ids.begin(), b.union_ids.end()) != b.union_ids.end()) {
    throw Error(ErrorCode::ParseError, "bottleneck union ids must be strictly ascending");
  }
  if (union_catalog.size() != b.union_ids.size()) {
    throw Error(ErrorCode::DimMismatch, "bottleneck union has " + std::to_string(b.union_ids.size()) +
                                            " ids but catalog has " + std::to_string(union_catalog.size()));
  }
  b.concepts = std::move(union_catalog);
  for (const auto& list : b.per_class) {
    for (std::size_t id : list) (void)b.column_of(id);
  }
  return b;
}

}  // namespace v2c::tokenizer
