#pragma once

// Brute-force references used only by tests. None of these call into the
// library code paths they are compared against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "v2c/cbm.hpp"
#include "v2c/conceptfilter.hpp"
#include "v2c/embkit.hpp"
#include "v2c/quantset.hpp"
#include "v2c/rng.hpp"

namespace v2c::oracle {

inline std::vector<float> random_unit_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / std::sqrt(n2));
  return out;
}

inline embkit::EmbeddingMatrix random_matrix(std::size_t rows, std::size_t dim, std::uint64_t seed, bool unit = true) {
  Rng rng(seed);
  std::vector<float> data;
  data.reserve(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    if (unit) {
      auto v = random_unit_vector(rng, dim);
      data.insert(data.end(), v.begin(), v.end());
    } else {
      for (std::size_t d = 0; d < dim; ++d) data.push_back(static_cast<float>(rng.normal()));
    }
  }
  auto m = embkit::EmbeddingMatrix(rows, dim, std::move(data));
  return unit ? embkit::normalize_rows(std::move(m)) : m;
}

/// Scalar cosine straight from the definition.
inline double scalar_cosine(std::span<const float> a, std::span<const float> b) {
  long double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>(d / std::sqrt(na * nb));
}

/// Full-table recount: dense similarity matrix, exhaustive sort per view.
inline conceptfilter::FrequencyTable brute_force_frequencies(const quantset::QuantSet& q,
                                                             const embkit::EmbeddingMatrix& views,
                                                             const embkit::EmbeddingMatrix& concepts, std::size_t k) {
  std::vector<std::vector<double>> sim(views.rows(), std::vector<double>(concepts.rows()));
  for (std::size_t v = 0; v < views.rows(); ++v) {
    for (std::size_t c = 0; c < concepts.rows(); ++c) sim[v][c] = scalar_cosine(views.row(v), concepts.row(c));
  }
  conceptfilter::FrequencyTable t;
  t.k_per_view = std::min(k, concepts.rows());
  t.counts.resize(q.classes.size());
  t.views_seen.assign(q.classes.size(), 0);
  for (std::size_t cls = 0; cls < q.classes.size(); ++cls) {
    for (std::size_t p : q.classes[cls]) {
      for (std::size_t v = 0; v < views.rows(); ++v) {
        const std::int64_t g = views.groups() ? (*views.groups())[v] : static_cast<std::int64_t>(v);
        if (g != static_cast<std::int64_t>(p)) continue;
        std::vector<std::size_t> order(concepts.rows());
        for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return sim[v][a] > sim[v][b]; });
        for (std::size_t i = 0; i < t.k_per_view; ++i) ++t.counts[cls][order[i]];
        ++t.views_seen[cls];
      }
    }
  }
  return t;
}

/// Naive triple loop for A * softmax(W)^T.
inline Matrix<double> naive_forward(const Matrix<double>& a, const Matrix<double>& w) {
  Matrix<double> p(w.rows(), w.cols());
  for (std::size_t k = 0; k < w.rows(); ++k) {
    double z = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j) z += std::exp(w(k, j));
    for (std::size_t j = 0; j < w.cols(); ++j) p(k, j) = std::exp(w(k, j)) / z;
  }
  Matrix<double> y(a.rows(), w.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < w.rows(); ++k) {
      for (std::size_t j = 0; j < w.cols(); ++j) y(i, k) += a(i, j) * p(k, j);
    }
  }
  return y;
}

/// Mean cross-entropy computed from naive_forward.
inline double naive_loss(const Matrix<double>& a, std::span<const std::int64_t> labels, const Matrix<double>& w) {
  const auto y = naive_forward(a, w);
  double total = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < y.cols(); ++k) z += std::exp(y(i, k));
    total += std::log(z) - y(i, static_cast<std::size_t>(labels[i]));
  }
  return total / static_cast<double>(y.rows());
}

/// Central finite differences of naive_loss with step eps.
inline Matrix<double> finite_difference_gradient(const Matrix<double>& a, std::span<const std::int64_t> labels,
                                                 Matrix<double> w, double eps) {
  Matrix<double> g(w.rows(), w.cols());
  for (std::size_t k = 0; k < w.rows(); ++k) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const double orig = w(k, j);
      w(k, j) = orig + eps;
      const double up = naive_loss(a, labels, w);
      w(k, j) = orig - eps;
      const double down = naive_loss(a, labels, w);
      w(k, j) = orig;
      g(k, j) = (up - down) / (2.0 * eps);
    }
  }
  return g;
}

/// Max over entries of |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const Matrix<double>& a, const Matrix<double>& b, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double x = a.data()[i];
    const double y = b.data()[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

/// Random activation instance with cosine-like entries in [-1, 1].
struct GradientInstance {
  cbm::ConceptActivations a;
  std::vector<std::int64_t> labels;
  cbm::WeightMatrix w;
};

inline GradientInstance random_gradient_instance(std::size_t classes, std::size_t concepts, std::size_t batch,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  GradientInstance inst{cbm::ConceptActivations{Matrix<double>(batch, concepts)}, {}, cbm::WeightMatrix(classes, concepts)};
  for (double& v : inst.a.scores.data()) v = 2.0 * rng.uniform() - 1.0;
  for (std::size_t i = 0; i < batch; ++i) inst.labels.push_back(static_cast<std::int64_t>(rng.below(classes)));
  for (double& v : inst.w.data()) v = rng.normal();
  return inst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("v2c_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace v2c::oracle
