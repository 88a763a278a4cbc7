#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "v2c/conceptfilter.hpp"
#include "v2c/embkit.hpp"
#include "v2c/vocab.hpp"

namespace v2c::synth {

struct WorldParams {
  std::size_t n_classes = 10;
  std::size_t planted_per_class = 3;
  std::size_t n_distractors = 200;
  std::size_t n_images_per_class = 20;  // labeled training images; the test split has as many
  std::size_t pool_size = 1000;
  std::size_t views_per_image = 3;
  std::size_t dim = 64;
  double noise = 0.1;  // expected L2 norm of the additive Gaussian noise
  std::uint64_t seed = 0;
  std::size_t templates_per_class = 4;
  double background_fraction = 0.2;  // pool images built from distractors only
};

/// Embedding world with known ground truth.
///
/// A class image is normalize(mean of its planted concept vectors + noise).
/// Concept ids are a random permutation over planted and distractor concepts.
struct SynthWorld {
  WorldParams params;
  std::vector<std::vector<std::size_t>> planted;   // class -> concept ids
  vocab::ConceptCatalog concepts;                  // with unit embeddings
  std::vector<std::string> class_names;
  embkit::EmbeddingMatrix class_prompts;           // templates_per_class rows per class, labeled
  embkit::EmbeddingMatrix train_images;            // labeled, group = row
  embkit::EmbeddingMatrix test_images;             // labeled, group = row
  embkit::EmbeddingMatrix unlabeled_pool;          // group = row
  embkit::EmbeddingMatrix pool_views;              // views_per_image rows per pool image, group = pool row
  std::vector<std::int64_t> pool_sources;          // class of each pool image, -1 for background
};

/// Throws InfeasibleGeometry when dim < n_classes * planted_per_class or the
/// separation constraint (pairwise planted cosine < 0.5) cannot be met.
SynthWorld gen_world(const WorldParams& params);

/// Maximum cosine between planted vectors of different classes.
double max_cross_class_planted_cosine(const SynthWorld& world);

/// Relabels class k as pi(k) for a random derangement pi in prompts, train
/// and test images. Ground-truth `planted` is left untouched.
SynthWorld derange_classes(SynthWorld world, std::uint64_t seed);

/// Random permutation of per-sample labels.
std::vector<std::int64_t> shuffle_labels(std::span<const std::int64_t> labels, std::uint64_t seed);

enum class Metric { Cosine, Euclidean };

/// Exhaustive scoring plus a full stable sort; an independent reference for
/// embkit's top-k. Cosine is descending, Euclidean ascending; ties by lower row.
embkit::TopKResult oracle_topk(std::span<const float> query, const embkit::EmbeddingMatrix& m, std::size_t k,
                               Metric metric);

/// Per class, |codebook list ∩ planted| / |planted|. Assumes the codebook was
/// filtered from world.concepts.
std::vector<double> recovery_score(const conceptfilter::Codebook& codebook, const SynthWorld& world);

/// Writes concepts.{jsonl,v2ce}, class_prompts.v2ce, train.v2ce, test.v2ce,
/// pool.v2ce, views.v2ce, class_names.txt and world.json (ground truth).
void save_world(const SynthWorld& world, const std::filesystem::path& dir);

}  // namespace v2c::synth
