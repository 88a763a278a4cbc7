#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "v2c/embkit.hpp"
#include "v2c/matrix.hpp"
#include "v2c/tokenizer.hpp"

namespace v2c::cbm {

/// Cosine similarities between images (rows) and bottleneck concepts (columns).
struct ConceptActivations {
  Matrix<double> scores;

  std::size_t batch() const noexcept { return scores.rows(); }
  std::size_t concepts() const noexcept { return scores.cols(); }
};

/// Class-concept weights W, one row per class, one column per bottleneck concept.
using WeightMatrix = Matrix<double>;

enum class InitMode { Prior, Random };

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t batch_size = 512;
  std::size_t max_epochs = 5000;
  std::uint64_t seed = 0;
  InitMode init = InitMode::Random;
  AdamParams adam;
};

/// Full-shot CUB settings from the published hyperparameter table.
TrainConfig cub_full_shot_config();

/// Prior initialization for 1- and 2-shot training, random otherwise.
/// `shots` = 0 means all labeled data.
InitMode default_init_for_shots(std::size_t shots);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;

  bool operator==(const EpochRecord&) const = default;
};

struct Metrics {
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<EpochRecord> history;
};

struct TrainResult {
  WeightMatrix weights;
  Metrics metrics;         // metrics of the returned weights on the training set
  std::size_t best_epoch;  // epoch whose weights were returned (1-based)
};

struct LabeledActivations {
  const ConceptActivations& activations;
  std::span<const std::int64_t> labels;
};

/// A(i, j) = cos(image_i, union concept j). Inputs must be unit-normalized.
ConceptActivations activations(const embkit::EmbeddingMatrix& images, const tokenizer::Bottleneck& b);

/// W(k, j) = 1 if union concept j is in class k's list, else 0.
WeightMatrix init_prior(const tokenizer::Bottleneck& b);

/// I.i.d. Normal(0, stddev) entries, reproducible from `seed`.
WeightMatrix init_random(std::size_t classes, std::size_t concepts, std::uint64_t seed, double stddev = 0.01);

/// Row-wise softmax over the concept axis, max-subtracted.
Matrix<double> concept_softmax(const WeightMatrix& w);

/// Class scores A * softmax(W)^T, shape batch x classes.
Matrix<double> forward(const ConceptActivations& a, const WeightMatrix& w);

/// Mean cross-entropy of the class-softmax of forward(a, w).
double loss(const ConceptActivations& a, std::span<const std::int64_t> labels, const WeightMatrix& w);

/// Exact gradient of loss() with respect to W.
WeightMatrix gradient(const ConceptActivations& a, std::span<const std::int64_t> labels, const WeightMatrix& w);

/// Adam over seeded mini-batch shuffles. With `validation`, returns the
/// weights of the epoch with the best validation accuracy (earliest on
/// ties); otherwise the final weights. Throws NonFiniteLoss on divergence.
TrainResult train(const ConceptActivations& a, std::span<const std::int64_t> labels, const TrainConfig& cfg,
                  WeightMatrix w0, std::optional<LabeledActivations> validation = std::nullopt);

/// Top-1 accuracy (argmax, ties to the lower class) and mean loss.
Metrics evaluate(const ConceptActivations& a, std::span<const std::int64_t> labels, const WeightMatrix& w);

/// argmax per row of forward(); ties to the lower class index.
std::vector<std::size_t> predict(const ConceptActivations& a, const WeightMatrix& w);

struct ConceptWeight {
  std::size_t column = 0;
  std::string text;
  double weight = 0.0;  // softmax(W)(k, column)

  bool operator==(const ConceptWeight&) const = default;
};

/// Class k's `top_n` concepts by softmax weight, ties by lower column.
std::vector<ConceptWeight> explain_class(const WeightMatrix& w, const tokenizer::Bottleneck& b, std::size_t k,
                                         std::size_t top_n = 3);

/// W as float32 V2CE, one row per class.
embkit::EmbeddingMatrix weights_to_embedding(const WeightMatrix& w);
WeightMatrix weights_from_embedding(const embkit::EmbeddingMatrix& m);

}  // namespace v2c::cbm
