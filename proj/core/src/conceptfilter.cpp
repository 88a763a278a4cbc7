#include "v2c/conceptfilter.hpp"

#include <algorithm>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "v2c/error.hpp"
#include "v2c/parallel.hpp"

namespace v2c::conceptfilter {

namespace {

std::unordered_map<std::int64_t, std::vector<std::size_t>> index_groups(const embkit::EmbeddingMatrix& views) {
  std::unordered_map<std::int64_t, std::vector<std::size_t>> out;
  for (std::size_t r = 0; r < views.rows(); ++r) {
    const std::int64_t g = views.groups() ? (*views.groups())[r] : static_cast<std::int64_t>(r);
    out[g].push_back(r);
  }
  return out;
}

}  // namespace

FrequencyTable count_topk_concepts(const quantset::QuantSet& qset, const embkit::EmbeddingMatrix& views,
                                   const vocab::ConceptCatalog& concepts, std::size_t k,
                                   std::span<const std::int64_t> pool_groups) {
  const auto& codebook = concepts.require_embeddings();
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (codebook.dim() != views.dim()) {
    throw Error(ErrorCode::DimMismatch, "concept dim " + std::to_string(codebook.dim()) + " != view dim " +
                                            std::to_string(views.dim()));
  }
  embkit::require_normalized(codebook);
  embkit::require_normalized(views);

  const auto groups = index_groups(views);
  auto rows_for = [&](std::size_t pool_index) -> const std::vector<std::size_t>& {
    std::int64_t g = static_cast<std::int64_t>(pool_index);
    if (!pool_groups.empty()) {
      if (pool_index >= pool_groups.size()) {
        throw Error(ErrorCode::GroupResolutionError, "pool index " + std::to_string(pool_index) + " out of range");
      }
      g = pool_groups[pool_index];
    }
    auto it = groups.find(g);
    if (it == groups.end()) {
      throw Error(ErrorCode::GroupResolutionError,
                  "pool index " + std::to_string(pool_index) + " (group " + std::to_string(g) + ") has no views");
    }
    return it->second;
  };

  // Each needed view is ranked once even when several classes select it.
  std::vector<char> needed(views.rows(), 0);
  for (const auto& list : qset.classes) {
    for (std::size_t p : list) {
      for (std::size_t r : rows_for(p)) needed[r] = 1;
    }
  }
  std::vector<std::size_t> needed_rows;
  for (std::size_t r = 0; r < views.rows(); ++r) {
    if (needed[r]) needed_rows.push_back(r);
  }
  std::vector<std::vector<std::size_t>> view_topk(views.rows());
  parallel_for(needed_rows.size(), [&](std::size_t i) {
    const std::size_t r = needed_rows[i];
    view_topk[r] = embkit::cosine_topk(views.row(r), codebook, k).indices;
  });

  FrequencyTable table;
  table.k_per_view = std::min(k, codebook.rows());
  table.counts.resize(qset.classes.size());
  table.views_seen.assign(qset.classes.size(), 0);
  for (std::size_t cls = 0; cls < qset.classes.size(); ++cls) {
    for (std::size_t p : qset.classes[cls]) {
      for (std::size_t r : rows_for(p)) {
        for (std::size_t id : view_topk[r]) ++table.counts[cls][id];
        ++table.views_seen[cls];
      }
    }
  }
  return table;
}

std::vector<std::size_t> Codebook::class_source_ids(std::size_t k) const {
  std::vector<std::size_t> out;
  out.reserve(per_class.at(k).size());
  for (std::size_t u : per_class[k]) out.push_back(source_ids[u]);
  return out;
}

Codebook build_codebook(const FrequencyTable& freq, const vocab::ConceptCatalog& concepts, std::size_t m,
                        std::uint64_t min_count) {
  if (m == 0) throw Error(ErrorCode::InvalidArgument, "m must be >= 1");
  const auto& embeddings = concepts.require_embeddings();

  std::vector<std::vector<std::size_t>> per_class_source(freq.counts.size());
  bool any = false;
  for (std::size_t cls = 0; cls < freq.counts.size(); ++cls) {
    std::vector<std::pair<std::size_t, std::uint64_t>> ranked;
    for (const auto& [id, count] : freq.counts[cls]) {
      if (id >= concepts.size()) {
        throw Error(ErrorCode::InvalidArgument, "concept id " + std::to_string(id) + " not in catalog");
      }
      if (count >= min_count && count > 0) ranked.emplace_back(id, count);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (ranked.size() > m) ranked.resize(m);
    any = any || !ranked.empty();
    for (const auto& [id, count] : ranked) per_class_source[cls].push_back(id);
  }
  if (!any) throw Error(ErrorCode::EmptyFrequencies, "no concept reached the minimum count");

  Codebook cb;
  cb.m = m;
  for (const auto& list : per_class_source) cb.source_ids.insert(cb.source_ids.end(), list.begin(), list.end());
  std::sort(cb.source_ids.begin(), cb.source_ids.end());
  cb.source_ids.erase(std::unique(cb.source_ids.begin(), cb.source_ids.end()), cb.source_ids.end());

  std::unordered_map<std::size_t, std::size_t> to_union;
  std::vector<std::pair<std::string, vocab::ConceptKind>> texts;
  for (std::size_t u = 0; u < cb.source_ids.size(); ++u) {
    to_union[cb.source_ids[u]] = u;
    const auto& c = concepts[cb.source_ids[u]];
    texts.emplace_back(c.text, c.kind);
  }
  cb.per_class.resize(per_class_source.size());
  for (std::size_t cls = 0; cls < per_class_source.size(); ++cls) {
    for (std::size_t id : per_class_source[cls]) cb.per_class[cls].push_back(to_union.at(id));
  }
  cb.concepts = vocab::ConceptCatalog(std::move(texts));
  cb.concepts.set_embeddings(embkit::select_rows(embeddings, cb.source_ids));
  return cb;
}

std::string frequency_to_json(const FrequencyTable& f) {
  nlohmann::ordered_json j;
  j["k"] = f.k_per_view;
  j["views_seen"] = f.views_seen;
  auto counts = nlohmann::ordered_json::array();
  for (const auto& cls : f.counts) {
    auto entries = nlohmann::ordered_json::array();
    for (const auto& [id, count] : cls) entries.push_back({id, count});
    counts.push_back(std::move(entries));
  }
  j["counts"] = std::move(counts);
  return j.dump() + "\n";
}

FrequencyTable frequency_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    FrequencyTable f;
    f.k_per_view = j.at("k").get<std::size_t>();
    f.views_seen = j.at("views_seen").get<std::vector<std::uint64_t>>();
    for (const auto& cls : j.at("counts")) {
      std::map<std::size_t, std::uint64_t> m;
      for (const auto& e : cls) m[e.at(0).get<std::size_t>()] = e.at(1).get<std::uint64_t>();
      f.counts.push_back(std::move(m));
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("frequency table: ") + e.what());
  }
}

std::string codebook_to_json(const Codebook& cb) {
  nlohmann::ordered_json j;
  j["m"] = cb.m;
  j["source_ids"] = cb.source_ids;
  j["per_class"] = cb.per_class;
  return j.dump() + "\n";
}

Codebook codebook_from_json(std::string_view text, vocab::ConceptCatalog union_catalog) {
  Codebook cb;
  try {
    const auto j = nlohmann::json::parse(text);
    cb.m = j.at("m").get<std::size_t>();
    cb.source_ids = j.at("source_ids").get<std::vector<std::size_t>>();
    cb.per_class = j.at("per_class").get<std::vector<std::vector<std::size_t>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("codebook: ") + e.what());
  }
  if (cb.source_ids.size() != union_catalog.size()) {
    throw Error(ErrorCode::DimMismatch, "codebook lists " + std::to_string(cb.source_ids.size()) +
                                            " concepts but catalog has " + std::to_string(union_catalog.size()));
  }
  for (const auto& list : cb.per_class) {
    for (std::size_t u : list) {
      if (u >= union_catalog.size()) throw Error(ErrorCode::ParseError, "codebook id out of range");
    }
  }
  cb.concepts = std::move(union_catalog);
  return cb;
}

}  // namespace v2c::conceptfilter
