#include <gtest/gtest.h>

#include <map>

#include "oracles.hpp"
#include "v2c/error.hpp"
#include "v2c/synth.hpp"
#include "v2c/tokenizer.hpp"

using namespace v2c;
using embkit::EmbeddingMatrix;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no v2c::Error thrown";
  return ErrorCode::IoError;
}

vocab::ConceptCatalog catalog_with(const EmbeddingMatrix& emb) {
  std::vector<std::pair<std::string, vocab::ConceptKind>> items;
  for (std::size_t i = 0; i < emb.rows(); ++i) items.emplace_back("c" + std::to_string(i), vocab::ConceptKind::Atomic);
  vocab::ConceptCatalog cat(std::move(items));
  cat.set_embeddings(emb);
  return cat;
}

// Naive bottleneck: count nearest-k by exhaustive sort, rank, truncate.
std::vector<std::vector<std::size_t>> naive_per_class(const EmbeddingMatrix& codebook, const EmbeddingMatrix& images,
                                                      std::size_t k, std::size_t cpc, std::size_t n_classes) {
  std::vector<std::map<std::size_t, std::size_t>> freq(n_classes);
  for (std::size_t r = 0; r < images.rows(); ++r) {
    auto top = synth::oracle_topk(images.row(r), codebook, k, synth::Metric::Euclidean);
    for (auto id : top.indices) ++freq[static_cast<std::size_t>((*images.labels())[r])][id];
  }
  std::vector<std::vector<std::size_t>> out(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::pair<std::size_t, std::size_t>> v(freq[c].begin(), freq[c].end());
    std::stable_sort(v.begin(), v.end(), [](auto& a, auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; i < std::min(cpc, v.size()); ++i) out[c].push_back(v[i].first);
  }
  return out;
}

}  // namespace

TEST(Tokenizer, ExactCodebookRowComesFirst) {
  auto cb = oracle::random_matrix(20, 8, 1);
  tokenizer::V2CTokenizer t(catalog_with(cb));
  EXPECT_EQ(t.k(), tokenizer::kDefaultTokensPerImage);
  EXPECT_EQ(tokenizer::kDefaultTokensPerImage, 5u);
  auto tok = tokenize(t, cb.row(13));
  ASSERT_EQ(tok.ids.size(), 5u);
  EXPECT_EQ(tok.ids[0], 13u);
  EXPECT_EQ(tok.distances[0], 0.0);
  EXPECT_TRUE(std::is_sorted(tok.distances.begin(), tok.distances.end()));
}

TEST(Tokenizer, MatchesExhaustiveSortOn100Queries) {
  auto cb = oracle::random_matrix(60, 12, 2);
  tokenizer::V2CTokenizer t(catalog_with(cb), 7);
  auto queries = oracle::random_matrix(100, 12, 3);
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    auto tok = tokenize(t, queries.row(i));
    EXPECT_EQ(tok.ids, synth::oracle_topk(queries.row(i), cb, 7, synth::Metric::Euclidean).indices);
    EXPECT_EQ(tok.ids, synth::oracle_topk(queries.row(i), cb, 7, synth::Metric::Cosine).indices);
  }
}

TEST(Tokenizer, ConstructionErrors) {
  EXPECT_EQ(code_of([] { tokenizer::V2CTokenizer(vocab::ConceptCatalog{}); }), ErrorCode::EmptyCodebook);
  EXPECT_EQ(code_of([] { tokenizer::V2CTokenizer(vocab::ConceptCatalog({{"a", vocab::ConceptKind::Atomic}})); }),
            ErrorCode::MissingEmbeddings);
  EXPECT_EQ(code_of([] { tokenizer::V2CTokenizer(catalog_with(EmbeddingMatrix(1, 2, {3.f, 4.f}))); }),
            ErrorCode::NotNormalized);
  EXPECT_EQ(code_of([] { tokenizer::V2CTokenizer(catalog_with(oracle::random_matrix(3, 2, 1)), 0); }),
            ErrorCode::InvalidArgument);
}

TEST(Bottleneck, OneClassOneImage) {
  auto cb = oracle::random_matrix(10, 6, 4);
  tokenizer::V2CTokenizer t(catalog_with(cb), 1);
  auto img = oracle::random_matrix(1, 6, 5);
  img.set_labels(std::vector<std::int64_t>{0});
  auto b = tokenizer::build_bottleneck(t, img, 1);
  ASSERT_EQ(b.classes(), 1u);
  EXPECT_EQ(b.per_class[0], (std::vector<std::size_t>{tokenize(t, img.row(0)).ids[0]}));
  EXPECT_EQ(b.size(), 1u);

  // With five tokens all counts tie at 1, so the lowest id wins.
  tokenizer::V2CTokenizer t5(catalog_with(cb), 5);
  auto ids = tokenize(t5, img.row(0)).ids;
  EXPECT_EQ(tokenizer::build_bottleneck(t5, img, 1).per_class[0],
            (std::vector<std::size_t>{*std::min_element(ids.begin(), ids.end())}));
  EXPECT_EQ(tokenizer::kDefaultConceptsPerClass, 50u);
}

TEST(Bottleneck, SharedConceptAppearsOnceInUnion) {
  // Two classes whose images both sit on concept 2.
  auto cb = oracle::random_matrix(5, 4, 6);
  tokenizer::V2CTokenizer t(catalog_with(cb), 1);
  std::vector<float> data;
  for (int i = 0; i < 2; ++i) data.insert(data.end(), cb.row(2).begin(), cb.row(2).end());
  EmbeddingMatrix imgs(2, 4, data, {}, std::vector<std::int64_t>{0, 1});
  auto b = tokenizer::build_bottleneck(t, imgs, 3);
  EXPECT_EQ(b.per_class[0], (std::vector<std::size_t>{2}));
  EXPECT_EQ(b.per_class[1], (std::vector<std::size_t>{2}));
  EXPECT_EQ(b.union_ids, (std::vector<std::size_t>{2}));
  EXPECT_EQ(b.column_of(2), 0u);
  EXPECT_EQ(code_of([&] { b.column_of(3); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(b.concepts[0].text, "c2");
}

TEST(Bottleneck, MatchesNaiveConstructionAndSizeBound) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    synth::WorldParams p;
    p.seed = seed;
    auto w = synth::gen_world(p);
    const auto& emb = w.concepts.require_embeddings();
    tokenizer::V2CTokenizer t(w.concepts, 5);
    auto b = tokenizer::build_bottleneck(t, w.train_images, 4, p.n_classes);
    EXPECT_EQ(b.per_class, naive_per_class(emb, w.train_images, 5, 4, p.n_classes));
    std::size_t total = 0;
    for (const auto& l : b.per_class) total += l.size();
    EXPECT_LE(b.size(), total);
    EXPECT_LE(b.size(), p.n_classes * 4);
    EXPECT_TRUE(std::is_sorted(b.union_ids.begin(), b.union_ids.end()));
    for (std::size_t j = 0; j < b.size(); ++j) {
      EXPECT_EQ(b.concepts[j].text, w.concepts[b.union_ids[j]].text);
      auto a = b.concepts.embeddings()->row(j);
      auto c = emb.row(b.union_ids[j]);
      EXPECT_TRUE(std::equal(a.begin(), a.end(), c.begin()));
    }
  }
}

TEST(Bottleneck, Errors) {
  auto cb = oracle::random_matrix(5, 4, 6);
  tokenizer::V2CTokenizer t(catalog_with(cb), 1);
  auto imgs = oracle::random_matrix(2, 4, 7);
  EXPECT_EQ(code_of([&] { tokenizer::build_bottleneck(t, imgs, 3); }), ErrorCode::InvalidArgument);
  imgs.set_labels(std::vector<std::int64_t>{0, 2});
  EXPECT_EQ(code_of([&] { tokenizer::build_bottleneck(t, imgs, 3); }), ErrorCode::MissingClass);
  EXPECT_EQ(code_of([&] { tokenizer::build_bottleneck(t, imgs, 0); }), ErrorCode::InvalidArgument);
}

TEST(BottleneckJson, RoundTrip) {
  synth::WorldParams p;
  p.seed = 9;
  auto w = synth::gen_world(p);
  tokenizer::V2CTokenizer t(w.concepts, 5);
  auto b = tokenizer::build_bottleneck(t, w.train_images, 5);
  auto back = tokenizer::bottleneck_from_json(tokenizer::bottleneck_to_json(b), b.concepts);
  EXPECT_EQ(back.per_class, b.per_class);
  EXPECT_EQ(back.union_ids, b.union_ids);
  EXPECT_EQ(back.concepts, b.concepts);
  EXPECT_EQ(code_of([] { tokenizer::bottleneck_from_json("{\"classes\":1,\"per_class\":[[3]],\"union_ids\":[4,3]}",
                                                          vocab::ConceptCatalog{}); }),
            ErrorCode::ParseError);
}
