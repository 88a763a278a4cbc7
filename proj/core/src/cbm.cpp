#include "v2c/cbm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "v2c/error.hpp"
#include "v2c/rng.hpp"

namespace v2c::cbm {

namespace {

void check_shapes(const ConceptActivations& a, std::size_t n_labels, const WeightMatrix& w) {
  if (a.concepts() != w.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "activations have " + std::to_string(a.concepts()) +
                                              " concepts but W has " + std::to_string(w.cols()));
  }
  if (a.batch() != n_labels) {
    throw Error(ErrorCode::ShapeMismatch,
                std::to_string(a.batch()) + " activation rows for " + std::to_string(n_labels) + " labels");
  }
  if (w.rows() == 0 || w.cols() == 0) throw Error(ErrorCode::ShapeMismatch, "W is empty");
}

std::size_t label_at(std::span<const std::int64_t> labels, std::size_t i, std::size_t classes) {
  const auto l = labels[i];
  if (l < 0 || static_cast<std::size_t>(l) >= classes) {
    throw Error(ErrorCode::ShapeMismatch, "label " + std::to_string(l) + " outside 0.." + std::to_string(classes - 1));
  }
  return static_cast<std::size_t>(l);
}

// Scores for one activation row against softmax(W).
void class_scores(std::span<const double> a_row, const Matrix<double>& p, std::span<double> out) {
  for (std::size_t k = 0; k < p.rows(); ++k) {
    auto pk = p.row(k);
    double acc = 0.0;
    for (std::size_t j = 0; j < pk.size(); ++j) acc += a_row[j] * pk[j];
    out[k] = acc;
  }
}

// In place: scores -> class probabilities; returns log-sum-exp.
double softmax_in_place(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
  return mx + std::log(sum);
}

struct BatchEval {
  double loss_sum = 0.0;
  std::size_t correct = 0;
};

// Loss and accuracy over `rows` of A; optionally accumulates dL/dP into grad_p
// (unnormalized: caller divides by the batch size).
BatchEval run_batch(const ConceptActivations& a, std::span<const std::int64_t> labels, const Matrix<double>& p,
                    std::span<const std::size_t> rows, Matrix<double>* grad_p) {
  const std::size_t classes = p.rows();
  const std::size_t concepts = p.cols();
  std::vector<double> y(classes);
  BatchEval out;
  for (std::size_t i : rows) {
    auto a_row = a.scores.row(i);
    const std::size_t target = label_at(labels, i, classes);
    class_scores(a_row, p, y);
    const std::size_t pred = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    if (pred == target) ++out.correct;
    const double target_score = y[target];
    const double lse = softmax_in_place(y);
    out.loss_sum += lse - target_score;
    if (grad_p != nullptr) {
      y[target] -= 1.0;
      for (std::size_t k = 0; k < classes; ++k) {
        const double g = y[k];
        auto gk = grad_p->row(k);
        for (std::size_t j = 0; j < concepts; ++j) gk[j] += g * a_row[j];
      }
    }
  }
  return out;
}

// Chains dL/dP through the row-wise softmax: dW = P .* (dP - <P, dP>_row).
WeightMatrix chain_softmax(const Matrix<double>& p, const Matrix<double>& grad_p) {
  WeightMatrix g(p.rows(), p.cols());
  for (std::size_t k = 0; k < p.rows(); ++k) {
    auto pk = p.row(k);
    auto gpk = grad_p.row(k);
    double inner = 0.0;
    for (std::size_t j = 0; j < pk.size(); ++j) inner += pk[j] * gpk[j];
    for (std::size_t j = 0; j < pk.size(); ++j) g(k, j) = pk[j] * (gpk[j] - inner);
  }
  return g;
}

WeightMatrix batch_gradient(const ConceptActivations& a, std::span<const std::int64_t> labels, const WeightMatrix& w,
                            std::span<const std::size_t> rows, double* loss_out) {
  const auto p = concept_softmax(w);
  Matrix<double> grad_p(w.rows(), w.cols());
  const auto eval = run_batch(a, labels, p, rows, &grad_p);
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (double& v : grad_p.data()) v *= scale;
  if (loss_out != nullptr) *loss_out = eval.loss_sum * scale;
  return chain_softmax(p, grad_p);
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace

TrainConfig cub_full_shot_config() {
  TrainConfig cfg;
  cfg.learning_rate = 5e-5;
  cfg.batch_size = 512;
  cfg.max_epochs = 5000;
  cfg.init = InitMode::Random;
  return cfg;
}

InitMode default_init_for_shots(std::size_t shots) {
  return (shots == 1 || shots == 2) ? InitMode::Prior : InitMode::Random;
}

ConceptActivations activations(const embkit::EmbeddingMatrix& images, const tokenizer::Bottleneck& b) {
  const auto& concepts = b.concepts.require_embeddings();
  const auto sim = embkit::batch_similarity(images, concepts);
  ConceptActivations out{Matrix<double>(sim.rows(), sim.cols())};
  std::transform(sim.data().begin(), sim.data().end(), out.scores.data().begin(),
                 [](float v) { return static_cast<double>(v); });
  return out;
}

WeightMatrix init_prior(const tokenizer::Bottleneck& b) {
  WeightMatrix w(b.classes(), b.size(), 0.0);
  const auto columns = b.per_class_columns();
  for (std::size_t k = 0; k < columns.size(); ++k) {
    for (std::size_t j : columns[k]) w(k, j) = 1.0;
  }
  return w;
}

WeightMatrix init_random(std::size_t classes, std::size_t concepts, std::uint64_t seed, double stddev) {
  WeightMatrix w(classes, concepts);
  Rng rng(seed);
  for (double& v : w.data()) v = rng.normal(0.0, stddev);
  return w;
}

Matrix<double> concept_softmax(const WeightMatrix& w) {
  Matrix<double> p = w;
  for (std::size_t k = 0; k < p.rows(); ++k) softmax_in_place(p.row(k));
  return p;
}

Matrix<double> forward(const ConceptActivations& a, const WeightMatrix& w) {
  if (a.concepts() != w.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "activations have " + std::to_string(a.concepts()) +
                                              " concepts but W has " + std::to_string(w.cols()));
  }
  const auto p = concept_softmax(w);
  Matrix<double> y(a.batch(), w.rows());
  for (std::size_t i = 0; i < a.batch(); ++i) class_scores(a.scores.row(i), p, y.row(i));
  return y;
}

double loss(const ConceptActivations& a, std::span<const std::int64_t> labels, const WeightMatrix& w) {
  check_shapes(a, labels.size(), w);
  if (labels.empty()) throw Error(ErrorCode::ShapeMismatch, "no samples");
  const auto rows = all_rows(labels.size());
  return run_batch(a, labels, concept_softmax(w), rows, nullptr).loss_sum / static_cast<double>(labels.size());
}

WeightMatrix gradient(const ConceptActivations& a, std::span<const std::int64_t> labels, const WeightMatrix& w) {
  check_shapes(a, labels.size(), w);
  if (labels.empty()) throw Error(ErrorCode::ShapeMismatch, "no samples");
  const auto rows = all_rows(labels.size());
  return batch_gradient(a, labels, w, rows, nullptr);
}

Metrics evaluate(const ConceptActivations& a, std::span<const std::int64_t> labels, const WeightMatrix& w) {
  check_shapes(a, labels.size(), w);
  Metrics m;
  if (labels.empty()) return m;
  const auto rows = all_rows(labels.size());
  const auto eval = run_batch(a, labels, concept_softmax(w), rows, nullptr);
  m.accuracy = static_cast<double>(eval.correct) / static_cast<double>(labels.size());
  m.loss = eval.loss_sum / static_cast<double>(labels.size());
  return m;
}

std::vector<std::size_t> predict(const ConceptActivations& a, const WeightMatrix& w) {
  const auto y = forward(a, w);
  std::vector<std::size_t> out(y.rows());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto row = y.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

TrainResult train(const ConceptActivations& a, std::span<const std::int64_t> labels, const TrainConfig& cfg,
                  WeightMatrix w0, std::optional<LabeledActivations> validation) {
  check_shapes(a, labels.size(), w0);
  if (labels.empty()) throw Error(ErrorCode::ShapeMismatch, "no training samples");
  if (!(cfg.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be > 0");
  if (cfg.batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (validation) check_shapes(validation->activations, validation->labels.size(), w0);

  WeightMatrix w = std::move(w0);
  std::vector<double> m1(w.data().size(), 0.0);
  std::vector<double> m2(w.data().size(), 0.0);
  double beta1_t = 1.0;
  double beta2_t = 1.0;

  Rng rng(cfg.seed);
  auto order = all_rows(labels.size());

  TrainResult result{w, {}, 0};
  std::optional<double> best_val;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      double batch_loss = 0.0;
      const auto g = batch_gradient(a, labels, w, batch, &batch_loss);
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::NonFiniteLoss, "loss became " + std::to_string(batch_loss) + " in epoch " +
                                                  std::to_string(epoch));
      }

      beta1_t *= cfg.adam.beta1;
      beta2_t *= cfg.adam.beta2;
      auto& wd = w.data();
      const auto& gd = g.data();
      for (std::size_t i = 0; i < wd.size(); ++i) {
        m1[i] = cfg.adam.beta1 * m1[i] + (1.0 - cfg.adam.beta1) * gd[i];
        m2[i] = cfg.adam.beta2 * m2[i] + (1.0 - cfg.adam.beta2) * gd[i] * gd[i];
        const double m_hat = m1[i] / (1.0 - beta1_t);
        const double v_hat = m2[i] / (1.0 - beta2_t);
        wd[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam.epsilon);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const auto train_metrics = evaluate(a, labels, w);
    if (!std::isfinite(train_metrics.loss)) {
      throw Error(ErrorCode::NonFiniteLoss, "training loss is not finite after epoch " + std::to_string(epoch));
    }
    rec.train_loss = train_metrics.loss;
    rec.train_accuracy = train_metrics.accuracy;
    if (validation) {
      const auto val = evaluate(validation->activations, validation->labels, w);
      rec.val_loss = val.loss;
      rec.val_accuracy = val.accuracy;
      if (!best_val || val.accuracy > *best_val) {
        best_val = val.accuracy;
        result.weights = w;
        result.best_epoch = epoch;
      }
    }
    result.metrics.history.push_back(rec);
  }

  if (!validation || result.best_epoch == 0) {
    result.weights = std::move(w);
    result.best_epoch = cfg.max_epochs;
  }
  const auto final_metrics = evaluate(a, labels, result.weights);
  result.metrics.accuracy = final_metrics.accuracy;
  result.metrics.loss = final_metrics.loss;
  return result;
}

std::vector<ConceptWeight> explain_class(const WeightMatrix& w, const tokenizer::Bottleneck& b, std::size_t k,
                                         std::size_t top_n) {
  if (k >= w.rows()) {
    throw Error(ErrorCode::BadClass, "class " + std::to_string(k) + " but W has " + std::to_string(w.rows()) + " rows");
  }
  if (w.cols() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch, "W has " + std::to_string(w.cols()) + " columns but the bottleneck has " +
                                              std::to_string(b.size()) + " concepts");
  }
  // Softmax is monotone, so ranking on raw weights gives the same order and is
  // unaffected by rounding in exp.
  auto row = w.row(k);
  std::vector<std::size_t> cols = all_rows(row.size());
  const std::size_t n = std::min(top_n, cols.size());
  std::partial_sort(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(n), cols.end(),
                    [&](std::size_t x, std::size_t y) {
                      if (row[x] != row[y]) return row[x] > row[y];
                      return x < y;
                    });
  std::vector<double> p(row.begin(), row.end());
  softmax_in_place(p);
  std::vector<ConceptWeight> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({cols[i], b.concepts[cols[i]].text, p[cols[i]]});
  return out;
}

embkit::EmbeddingMatrix weights_to_embedding(const WeightMatrix& w) {
  std::vector<float> data(w.data().size());
  std::transform(w.data().begin(), w.data().end(), data.begin(), [](double v) { return static_cast<float>(v); });
  std::vector<std::string> ids;
  for (std::size_t k = 0; k < w.rows(); ++k) ids.push_back("class" + std::to_string(k));
  return embkit::EmbeddingMatrix(w.rows(), w.cols(), std::move(data), std::move(ids));
}

WeightMatrix weights_from_embedding(const embkit::EmbeddingMatrix& m) {
  WeightMatrix w(m.rows(), m.dim());
  std::transform(m.data().begin(), m.data().end(), w.data().begin(), [](float v) { return static_cast<double>(v); });
  return w;
}

}  // namespace v2c::cbm
