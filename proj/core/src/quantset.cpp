#include "v2c/quantset.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "v2c/error.hpp"
#include "v2c/parallel.hpp"

namespace v2c::quantset {

namespace {

constexpr double kDegenerateNorm = 1e-6;

BaseFeatures class_means(const embkit::EmbeddingMatrix& m, std::size_t n_classes, BaseSource source) {
  const auto& labels = m.require_labels();
  if (n_classes == 0) {
    for (auto l : labels) n_classes = std::max<std::size_t>(n_classes, static_cast<std::size_t>(l) + 1);
  }
  if (n_classes == 0) throw Error(ErrorCode::MissingClass, "no labeled rows");

  const std::size_t dim = m.dim();
  std::vector<double> sums(n_classes * dim, 0.0);
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(label) + " out of range at row " +
                                                  std::to_string(r));
    }
    const auto k = static_cast<std::size_t>(label);
    auto row = m.row(r);
    for (std::size_t d = 0; d < dim; ++d) sums[k * dim + d] += static_cast<double>(row[d]);
    ++counts[k];
  }

  std::vector<float> data(n_classes * dim);
  std::vector<std::string> ids;
  ids.reserve(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (counts[k] == 0) throw Error(ErrorCode::MissingClass, "class " + std::to_string(k) + " has no rows");
    double norm2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double mean = sums[k * dim + d] / static_cast<double>(counts[k]);
      sums[k * dim + d] = mean;
      norm2 += mean * mean;
    }
    const double norm = std::sqrt(norm2);
    if (norm < kDegenerateNorm) {
      throw Error(ErrorCode::DegenerateBase, "class " + std::to_string(k) + " mean has norm " + std::to_string(norm));
    }
    for (std::size_t d = 0; d < dim; ++d) data[k * dim + d] = static_cast<float>(sums[k * dim + d] / norm);
    ids.push_back("class" + std::to_string(k));
  }

  std::vector<std::int64_t> class_labels(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) class_labels[k] = static_cast<std::int64_t>(k);
  return BaseFeatures{embkit::EmbeddingMatrix(n_classes, dim, std::move(data), std::move(ids), std::move(class_labels)),
                      source};
}

}  // namespace

BaseFeatures base_from_text(const embkit::EmbeddingMatrix& class_prompt_embeddings, std::size_t n_classes) {
  return class_means(class_prompt_embeddings, n_classes, BaseSource::Text);
}

BaseFeatures base_from_images(const embkit::EmbeddingMatrix& fewshot, std::size_t n_classes) {
  return class_means(fewshot, n_classes, BaseSource::Images);
}

QuantSet select_quantset(const BaseFeatures& base, const embkit::EmbeddingMatrix& pool, std::size_t per_class) {
  if (pool.empty()) throw Error(ErrorCode::EmptyPool, "unlabeled pool has no rows");
  if (per_class == 0) throw Error(ErrorCode::InvalidArgument, "per_class must be >= 1");
  QuantSet out;
  out.per_class = per_class;
  out.classes.resize(base.classes());
  parallel_for(base.classes(), [&](std::size_t k) {
    out.classes[k] = embkit::cosine_topk(base.vectors.row(k), pool, per_class).indices;
  });
  return out;
}

std::string quantset_to_json(const QuantSet& q) {
  nlohmann::ordered_json j;
  j["per_class"] = q.per_class;
  j["classes"] = q.classes;
  return j.dump() + "\n";
}

QuantSet quantset_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    QuantSet q;
    q.per_class = j.at("per_class").get<std::size_t>();
    q.classes = j.at("classes").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& list : q.classes) {
      if (list.size() > q.per_class) throw Error(ErrorCode::ParseError, "class list longer than per_class");
    }
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("quantset: ") + e.what());
  }
}

}  // namespace v2c::quantset
