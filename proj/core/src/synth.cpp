#include "v2c/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "v2c/error.hpp"
#include "v2c/io.hpp"
#include "v2c/rng.hpp"

namespace v2c::synth {

namespace {

constexpr double kMaxPlantedCosine = 0.5;
constexpr std::size_t kMaxRejections = 100000;

using Vec = std::vector<double>;

Vec random_unit(Rng& rng, std::size_t dim) {
  Vec v(dim);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      n2 += x * x;
    }
  } while (n2 == 0.0);
  const double n = std::sqrt(n2);
  for (double& x : v) x /= n;
  return v;
}

double cosine(const Vec& a, const Vec& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

// normalize(base + noise); per-component sigma = noise / sqrt(dim) so the
// noise vector's expected norm is about `noise`.
std::vector<float> noisy_unit(Rng& rng, std::span<const double> base, double noise) {
  const double sigma = noise / std::sqrt(static_cast<double>(base.size()));
  Vec v(base.begin(), base.end());
  for (double& x : v) x += sigma * rng.normal();
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

Vec mean_of(const std::vector<Vec>& vs) {
  Vec m(vs.front().size(), 0.0);
  for (const auto& v : vs) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += v[i];
  }
  for (double& x : m) x /= static_cast<double>(vs.size());
  return m;
}

std::string padded(std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, v);
  return buf;
}

struct Builder {
  std::vector<float> data;
  std::vector<std::string> ids;
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> groups;

  void add(std::vector<float> row, std::string id, std::int64_t label, std::int64_t group) {
    data.insert(data.end(), row.begin(), row.end());
    ids.push_back(std::move(id));
    labels.push_back(label);
    groups.push_back(group);
  }

  embkit::EmbeddingMatrix build(std::size_t dim, bool with_labels, bool with_groups) {
    const std::size_t rows = ids.size();
    std::optional<std::vector<std::int64_t>> l;
    std::optional<std::vector<std::int64_t>> g;
    if (with_labels) l = std::move(labels);
    if (with_groups) g = std::move(groups);
    return embkit::EmbeddingMatrix(rows, dim, std::move(data), std::move(ids), std::move(l), std::move(g));
  }
};

}  // namespace

SynthWorld gen_world(const WorldParams& p) {
  if (p.n_classes == 0 || p.planted_per_class == 0) {
    throw Error(ErrorCode::InvalidArgument, "need at least one class and one planted concept per class");
  }
  if (p.dim < p.n_classes * p.planted_per_class) {
    throw Error(ErrorCode::InfeasibleGeometry, "dim " + std::to_string(p.dim) + " < n_classes*planted_per_class " +
                                                   std::to_string(p.n_classes * p.planted_per_class));
  }
  if (p.views_per_image == 0 || p.templates_per_class == 0) {
    throw Error(ErrorCode::InvalidArgument, "views_per_image and templates_per_class must be >= 1");
  }
  if (p.background_fraction > 0.0 && p.n_distractors == 0) {
    throw Error(ErrorCode::InvalidArgument, "background pool images need distractor concepts");
  }

  Rng rng(p.seed);
  SynthWorld w;
  w.params = p;

  const std::size_t n_planted = p.n_classes * p.planted_per_class;
  std::vector<Vec> planted_vecs;
  planted_vecs.reserve(n_planted);
  for (std::size_t i = 0; i < n_planted; ++i) {
    std::size_t attempts = 0;
    while (true) {
      if (++attempts > kMaxRejections) {
        throw Error(ErrorCode::InfeasibleGeometry, "could not separate planted concept " + std::to_string(i));
      }
      Vec v = random_unit(rng, p.dim);
      const bool separated = std::all_of(planted_vecs.begin(), planted_vecs.end(),
                                         [&](const Vec& u) { return cosine(u, v) < kMaxPlantedCosine; });
      if (separated) {
        planted_vecs.push_back(std::move(v));
        break;
      }
    }
  }
  std::vector<Vec> distractor_vecs;
  distractor_vecs.reserve(p.n_distractors);
  for (std::size_t i = 0; i < p.n_distractors; ++i) distractor_vecs.push_back(random_unit(rng, p.dim));

  // Concept slot s (planted first, then distractors) gets catalog id perm[s].
  const std::size_t n_concepts = n_planted + p.n_distractors;
  std::vector<std::size_t> perm(n_concepts);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));

  std::vector<std::pair<std::string, vocab::ConceptKind>> texts(n_concepts);
  std::vector<float> concept_data(n_concepts * p.dim);
  w.planted.resize(p.n_classes);
  for (std::size_t s = 0; s < n_concepts; ++s) {
    const std::size_t id = perm[s];
    const Vec& v = s < n_planted ? planted_vecs[s] : distractor_vecs[s - n_planted];
    std::string text;
    if (s < n_planted) {
      const std::size_t cls = s / p.planted_per_class;
      w.planted[cls].push_back(id);
      text = "trait " + padded(cls, 3) + "." + std::to_string(s % p.planted_per_class);
    } else {
      text = "distractor " + padded(s - n_planted, 5);
    }
    texts[id] = {std::move(text), vocab::ConceptKind::Atomic};
    for (std::size_t d = 0; d < p.dim; ++d) concept_data[id * p.dim + d] = static_cast<float>(v[d]);
  }
  for (auto& list : w.planted) std::sort(list.begin(), list.end());
  w.concepts = vocab::ConceptCatalog(std::move(texts));
  w.concepts.set_embeddings(embkit::normalize_rows(embkit::EmbeddingMatrix(n_concepts, p.dim, std::move(concept_data))));

  std::vector<Vec> class_means(p.n_classes);
  for (std::size_t k = 0; k < p.n_classes; ++k) {
    std::vector<Vec> members(planted_vecs.begin() + static_cast<std::ptrdiff_t>(k * p.planted_per_class),
                             planted_vecs.begin() + static_cast<std::ptrdiff_t>((k + 1) * p.planted_per_class));
    class_means[k] = mean_of(members);
    w.class_names.push_back("class_" + padded(k, 3));
  }

  {
    Builder b;
    for (std::size_t k = 0; k < p.n_classes; ++k) {
      for (std::size_t t = 0; t < p.templates_per_class; ++t) {
        b.add(noisy_unit(rng, class_means[k], p.noise), "prompt" + std::to_string(k) + "_" + std::to_string(t),
              static_cast<std::int64_t>(k), static_cast<std::int64_t>(b.ids.size()));
      }
    }
    w.class_prompts = b.build(p.dim, true, false);
  }

  auto labeled_split = [&](const std::string& prefix) {
    Builder b;
    for (std::size_t k = 0; k < p.n_classes; ++k) {
      for (std::size_t i = 0; i < p.n_images_per_class; ++i) {
        const auto group = static_cast<std::int64_t>(b.ids.size());
        b.add(noisy_unit(rng, class_means[k], p.noise), prefix + std::to_string(group), static_cast<std::int64_t>(k),
              group);
      }
    }
    return b.build(p.dim, true, true);
  };
  w.train_images = labeled_split("train");
  w.test_images = labeled_split("test");

  Builder pool;
  Builder views;
  w.pool_sources.reserve(p.pool_size);
  for (std::size_t i = 0; i < p.pool_size; ++i) {
    Vec base;
    std::int64_t source = -1;
    if (rng.uniform() < p.background_fraction) {
      std::vector<Vec> picks;
      for (std::size_t j = 0; j < p.planted_per_class; ++j) picks.push_back(distractor_vecs[rng.below(p.n_distractors)]);
      base = mean_of(picks);
    } else {
      source = static_cast<std::int64_t>(rng.below(p.n_classes));
      base = class_means[static_cast<std::size_t>(source)];
    }
    auto image = noisy_unit(rng, base, p.noise);
    Vec image_d(image.begin(), image.end());
    const auto group = static_cast<std::int64_t>(i);
    for (std::size_t v = 0; v < p.views_per_image; ++v) {
      views.add(noisy_unit(rng, image_d, p.noise), "pool" + std::to_string(i) + "#v" + std::to_string(v), source,
                group);
    }
    pool.add(std::move(image), "pool" + std::to_string(i), source, group);
    w.pool_sources.push_back(source);
  }
  w.unlabeled_pool = pool.build(p.dim, false, true);
  w.pool_views = views.build(p.dim, false, true);
  return w;
}

double max_cross_class_planted_cosine(const SynthWorld& world) {
  const auto& emb = world.concepts.require_embeddings();
  double worst = -1.0;
  for (std::size_t a = 0; a < world.planted.size(); ++a) {
    for (std::size_t b = a + 1; b < world.planted.size(); ++b) {
      for (std::size_t i : world.planted[a]) {
        for (std::size_t j : world.planted[b]) {
          const double c = embkit::dot(emb.row(i), emb.row(j)) /
                           std::sqrt(embkit::squared_norm(emb.row(i)) * embkit::squared_norm(emb.row(j)));
          worst = std::max(worst, c);
        }
      }
    }
  }
  return worst;
}

SynthWorld derange_classes(SynthWorld world, std::uint64_t seed) {
  const std::size_t n = world.params.n_classes;
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "a derangement needs at least two classes");
  Rng rng(seed);
  std::vector<std::int64_t> pi(n);
  std::iota(pi.begin(), pi.end(), std::int64_t{0});
  auto has_fixed_point = [&] {
    for (std::size_t k = 0; k < n; ++k) {
      if (pi[k] == static_cast<std::int64_t>(k)) return true;
    }
    return false;
  };
  do {
    rng.shuffle(std::span<std::int64_t>(pi));
  } while (has_fixed_point());

  auto relabel = [&](embkit::EmbeddingMatrix& m) {
    auto labels = m.require_labels();
    for (auto& l : labels) l = pi[static_cast<std::size_t>(l)];
    m.set_labels(std::move(labels));
  };
  relabel(world.class_prompts);
  relabel(world.train_images);
  relabel(world.test_images);
  return world;
}

std::vector<std::int64_t> shuffle_labels(std::span<const std::int64_t> labels, std::uint64_t seed) {
  std::vector<std::int64_t> out(labels.begin(), labels.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::int64_t>(out));
  return out;
}

embkit::TopKResult oracle_topk(std::span<const float> query, const embkit::EmbeddingMatrix& m, std::size_t k,
                               Metric metric) {
  if (query.size() != m.dim()) throw Error(ErrorCode::DimMismatch, "oracle query dim mismatch");
  struct Scored {
    std::size_t row;
    double score;
  };
  std::vector<Scored> all;
  all.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double qq = 0.0, rr = 0.0, qr = 0.0, dd = 0.0;
    for (std::size_t d = 0; d < query.size(); ++d) {
      const double q = query[d];
      const double x = row[d];
      qq += q * q;
      rr += x * x;
      qr += q * x;
      dd += (q - x) * (q - x);
    }
    all.push_back({r, metric == Metric::Cosine ? qr / (std::sqrt(qq) * std::sqrt(rr)) : dd});
  }
  std::stable_sort(all.begin(), all.end(), [&](const Scored& a, const Scored& b) {
    return metric == Metric::Cosine ? a.score > b.score : a.score < b.score;
  });
  embkit::TopKResult out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) {
    out.indices.push_back(all[i].row);
    out.scores.push_back(all[i].score);
  }
  return out;
}

std::vector<double> recovery_score(const conceptfilter::Codebook& codebook, const SynthWorld& world) {
  std::vector<double> out(world.planted.size(), 0.0);
  for (std::size_t k = 0; k < world.planted.size() && k < codebook.per_class.size(); ++k) {
    const auto ids = codebook.class_source_ids(k);
    const std::set<std::size_t> listed(ids.begin(), ids.end());
    std::size_t hit = 0;
    for (std::size_t id : world.planted[k]) hit += listed.count(id);
    out[k] = static_cast<double>(hit) / static_cast<double>(world.planted[k].size());
  }
  return out;
}

void save_world(const SynthWorld& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "concepts.jsonl", vocab::catalog_to_jsonl(world.concepts));
  embkit::save_v2ce(dir / "concepts.v2ce", world.concepts.require_embeddings());
  embkit::save_v2ce(dir / "class_prompts.v2ce", world.class_prompts);
  embkit::save_v2ce(dir / "train.v2ce", world.train_images);
  embkit::save_v2ce(dir / "test.v2ce", world.test_images);
  embkit::save_v2ce(dir / "pool.v2ce", world.unlabeled_pool);
  embkit::save_v2ce(dir / "views.v2ce", world.pool_views);

  std::string names;
  for (const auto& n : world.class_names) names += n + "\n";
  write_file_atomic(dir / "class_names.txt", names);

  const auto& p = world.params;
  nlohmann::ordered_json j;
  j["params"] = {{"n_classes", p.n_classes},
                 {"planted_per_class", p.planted_per_class},
                 {"n_distractors", p.n_distractors},
                 {"n_images_per_class", p.n_images_per_class},
                 {"pool_size", p.pool_size},
                 {"views_per_image", p.views_per_image},
                 {"dim", p.dim},
                 {"noise", p.noise},
                 {"seed", p.seed},
                 {"templates_per_class", p.templates_per_class},
                 {"background_fraction", p.background_fraction}};
  j["planted"] = world.planted;
  j["pool_sources"] = world.pool_sources;
  write_file_atomic(dir / "world.json", j.dump(1) + "\n");
}

}  // namespace v2c::synth
