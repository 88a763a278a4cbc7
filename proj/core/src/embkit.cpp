#include "v2c/embkit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "v2c/error.hpp"
#include "v2c/io.hpp"
#include "v2c/parallel.hpp"

namespace v2c::embkit {

namespace {

void check_meta_lengths(std::size_t rows, const std::vector<std::string>& ids,
                        const std::optional<std::vector<std::int64_t>>& labels,
                        const std::optional<std::vector<std::int64_t>>& groups) {
  if (ids.size() != rows) {
    throw Error(ErrorCode::DimMismatch, "ids has " + std::to_string(ids.size()) +
                                            " entries for " + std::to_string(rows) + " rows");
  }
  if (labels && labels->size() != rows) {
    throw Error(ErrorCode::DimMismatch, "labels length " + std::to_string(labels->size()) +
                                            " != rows " + std::to_string(rows));
  }
  if (groups && groups->size() != rows) {
    throw Error(ErrorCode::DimMismatch, "groups length " + std::to_string(groups->size()) +
                                            " != rows " + std::to_string(rows));
  }
}

void check_query(std::span<const float> query, const EmbeddingMatrix& m) {
  if (m.empty()) throw Error(ErrorCode::EmptyMatrix, "top-k over a matrix with no rows");
  if (query.size() != m.dim()) {
    throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(query.size()) +
                                            " != matrix dim " + std::to_string(m.dim()));
  }
}

// Selects the k best rows under `better(key_a, key_b)`; ties go to the lower row.
template <typename Better>
TopKResult select_topk(std::vector<double> keys, std::size_t k, Better better) {
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  k = std::min(k, keys.size());
  auto cmp = [&](std::size_t a, std::size_t b) {
    if (keys[a] != keys[b]) return better(keys[a], keys[b]);
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), cmp);
  order.resize(k);
  TopKResult out;
  out.scores.reserve(k);
  for (std::size_t idx : order) out.scores.push_back(keys[idx]);
  out.indices = std::move(order);
  return out;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const char> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint(4, what)); }
  std::uint64_t u64(const char* what) { return uint(8, what); }

  std::span<const char> take(std::uint64_t n, const char* what) {
    if (n > remaining()) {
      throw Error(ErrorCode::TruncatedFile, std::string("file ends inside ") + what);
    }
    auto out = bytes_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::uint64_t uint(int width, const char* what) {
    auto raw = take(static_cast<std::uint64_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    }
    return v;
  }

  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data,
                                 std::vector<std::string> ids,
                                 std::optional<std::vector<std::int64_t>> labels,
                                 std::optional<std::vector<std::int64_t>> groups)
    : rows_(rows), dim_(dim), data_(std::move(data)), ids_(std::move(ids)),
      labels_(std::move(labels)), groups_(std::move(groups)) {
  if (data_.size() != rows_ * dim_) {
    throw Error(ErrorCode::DimMismatch, "data length " + std::to_string(data_.size()) +
                                            " != rows*dim " + std::to_string(rows_ * dim_));
  }
  if (ids_.empty() && rows_ > 0) {
    ids_.reserve(rows_);
    for (std::size_t r = 0; r < rows_; ++r) ids_.push_back(std::to_string(r));
  }
  check_meta_lengths(rows_, ids_, labels_, groups_);
}

void EmbeddingMatrix::set_labels(std::optional<std::vector<std::int64_t>> labels) {
  check_meta_lengths(rows_, ids_, labels, groups_);
  labels_ = std::move(labels);
}

void EmbeddingMatrix::set_groups(std::optional<std::vector<std::int64_t>> groups) {
  check_meta_lengths(rows_, ids_, labels_, groups);
  groups_ = std::move(groups);
}

const std::vector<std::int64_t>& EmbeddingMatrix::require_labels() const {
  if (!labels_) throw Error(ErrorCode::InvalidArgument, "matrix has no labels");
  return *labels_;
}

EmbeddingMatrix select_rows(const EmbeddingMatrix& m, std::span<const std::size_t> rows) {
  std::vector<float> data;
  data.reserve(rows.size() * m.dim());
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  std::optional<std::vector<std::int64_t>> labels;
  std::optional<std::vector<std::int64_t>> groups;
  if (m.labels()) labels.emplace();
  if (m.groups()) groups.emplace();
  for (std::size_t r : rows) {
    if (r >= m.rows()) throw Error(ErrorCode::InvalidArgument, "row " + std::to_string(r) + " out of range");
    auto src = m.row(r);
    data.insert(data.end(), src.begin(), src.end());
    ids.push_back(m.ids()[r]);
    if (labels) labels->push_back((*m.labels())[r]);
    if (groups) groups->push_back((*m.groups())[r]);
  }
  return EmbeddingMatrix(rows.size(), m.dim(), std::move(data), std::move(ids), std::move(labels),
                         std::move(groups));
}

std::string encode_v2ce(const EmbeddingMatrix& m) {
  nlohmann::ordered_json meta;
  meta["ids"] = m.ids();
  meta["labels"] = m.labels() ? nlohmann::ordered_json(*m.labels()) : nlohmann::ordered_json(nullptr);
  meta["groups"] = m.groups() ? nlohmann::ordered_json(*m.groups()) : nlohmann::ordered_json(nullptr);
  const std::string meta_text = meta.dump();

  std::string out;
  out.reserve(36 + meta_text.size() + m.data().size() * 4);
  out.append("V2CE", 4);
  put_u32(out, kV2ceVersion);
  put_u32(out, kV2ceFloat32);
  put_u64(out, m.rows());
  put_u64(out, m.dim());
  put_u64(out, meta_text.size());
  out.append(meta_text);
  for (float v : m.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

EmbeddingMatrix decode_v2ce(std::span<const char> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "V2CE", 4) != 0) {
    throw Error(ErrorCode::BadMagic, "missing V2CE magic");
  }
  Reader in(bytes);
  in.take(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kV2ceVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "version " + std::to_string(version));
  }
  const std::uint32_t dtype = in.u32("dtype");
  if (dtype != kV2ceFloat32) {
    throw Error(ErrorCode::UnsupportedVersion, "dtype " + std::to_string(dtype));
  }
  const std::uint64_t rows = in.u64("rows");
  const std::uint64_t dim = in.u64("dim");
  const std::uint64_t meta_len = in.u64("meta_len");
  auto meta_bytes = in.take(meta_len, "metadata");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("metadata: ") + e.what());
  }

  if (dim != 0 && rows > std::numeric_limits<std::uint64_t>::max() / 4 / dim) {
    throw Error(ErrorCode::DimMismatch, "rows*dim overflows");
  }
  const std::uint64_t count = rows * dim;
  auto payload = in.take(count * 4, "payload");
  if (in.remaining() != 0) {
    throw Error(ErrorCode::DimMismatch, std::to_string(in.remaining()) + " bytes after payload");
  }

  std::vector<float> data(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * i + b])) << (8 * b);
    }
    data[i] = std::bit_cast<float>(bits);
  }

  std::vector<std::string> ids;
  std::optional<std::vector<std::int64_t>> labels;
  std::optional<std::vector<std::int64_t>> groups;
  try {
    ids = meta.at("ids").get<std::vector<std::string>>();
    if (meta.contains("labels") && !meta["labels"].is_null()) {
      labels = meta["labels"].get<std::vector<std::int64_t>>();
    }
    if (meta.contains("groups") && !meta["groups"].is_null()) {
      groups = meta["groups"].get<std::vector<std::int64_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("metadata: ") + e.what());
  }
  if (ids.size() != rows) {
    throw Error(ErrorCode::DimMismatch,
                "metadata has " + std::to_string(ids.size()) + " ids for " + std::to_string(rows) + " rows");
  }
  return EmbeddingMatrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(dim), std::move(data),
                         std::move(ids), std::move(labels), std::move(groups));
}

void save_v2ce(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  write_file_atomic(path, encode_v2ce(m));
}

EmbeddingMatrix load_v2ce(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return decode_v2ce(std::span<const char>(bytes.data(), bytes.size()));
}

// Four fixed partial sums so the loop vectorizes; the order never varies.
double dot(std::span<const float> a, std::span<const float> b) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = a.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    for (std::size_t l = 0; l < 4; ++l) acc[l] += static_cast<double>(a[i + l]) * static_cast<double>(b[i + l]);
  }
  for (; i < n; ++i) acc[0] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

double squared_norm(std::span<const float> a) { return dot(a, a); }

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = a.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    for (std::size_t l = 0; l < 4; ++l) {
      const double d = static_cast<double>(a[i + l]) - static_cast<double>(b[i + l]);
      acc[l] += d * d;
    }
  }
  for (; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc[0] += d * d;
  }
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

void normalize(std::span<float> v) {
  const double norm = std::sqrt(squared_norm(v));
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::ZeroVector, "vector has no direction");
  }
  for (float& x : v) x = static_cast<float>(static_cast<double>(x) / norm);
}

EmbeddingMatrix normalize_rows(EmbeddingMatrix m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    try {
      normalize(m.row(r));
    } catch (const Error&) {
      throw Error(ErrorCode::ZeroVector, "row " + std::to_string(r));
    }
  }
  return m;
}

TopKResult cosine_topk(std::span<const float> query, const EmbeddingMatrix& m, std::size_t k) {
  check_query(query, m);
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  const double qnorm = std::sqrt(squared_norm(query));
  if (!(qnorm > 0.0)) throw Error(ErrorCode::ZeroVector, "query");
  std::vector<double> keys(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double rnorm = std::sqrt(squared_norm(row));
    if (!(rnorm > 0.0)) throw Error(ErrorCode::ZeroVector, "row " + std::to_string(r));
    keys[r] = dot(query, row) / (qnorm * rnorm);
  }
  return select_topk(std::move(keys), k, [](double a, double b) { return a > b; });
}

TopKResult euclidean_topk(std::span<const float> query, const EmbeddingMatrix& m, std::size_t k) {
  check_query(query, m);
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  std::vector<double> keys(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) keys[r] = squared_distance(query, m.row(r));
  return select_topk(std::move(keys), k, [](double a, double b) { return a < b; });
}

void require_normalized(const EmbeddingMatrix& m, double tolerance) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double norm = std::sqrt(squared_norm(m.row(r)));
    if (!(std::abs(norm - 1.0) <= tolerance)) {
      throw Error(ErrorCode::NotNormalized, "row " + std::to_string(r) + " has norm " + std::to_string(norm));
    }
  }
}

Matrix<float> batch_similarity(const EmbeddingMatrix& x, const EmbeddingMatrix& c) {
  if (x.dim() != c.dim()) {
    throw Error(ErrorCode::DimMismatch,
                "dims " + std::to_string(x.dim()) + " and " + std::to_string(c.dim()));
  }
  require_normalized(x);
  require_normalized(c);
  Matrix<float> out(x.rows(), c.rows());
  parallel_for(x.rows(), [&](std::size_t i) {
    auto xi = x.row(i);
    for (std::size_t j = 0; j < c.rows(); ++j) {
      out(i, j) = static_cast<float>(std::clamp(dot(xi, c.row(j)), -1.0, 1.0));
    }
  });
  return out;
}

}  // namespace v2c::embkit
