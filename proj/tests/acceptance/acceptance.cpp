// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "v2c/cbm.hpp"
#include "v2c/cli/run_config.hpp"
#include "v2c/cli/stages.hpp"
#include "v2c/conceptfilter.hpp"
#include "v2c/io.hpp"
#include "v2c/quantset.hpp"
#include "v2c/rng.hpp"
#include "v2c/synth.hpp"
#include "v2c/tokenizer.hpp"

using namespace v2c;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- brute-force helpers -------------------------------------------------

// Every codebook row ranked by long-double Euclidean distance, ties by index.
std::vector<std::size_t> brute_rank(std::span<const float> q, const embkit::EmbeddingMatrix& m, std::size_t k) {
  std::vector<long double> dist(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    long double acc = 0;
    auto row = m.row(r);
    for (std::size_t d = 0; d < row.size(); ++d) {
      const long double x = static_cast<long double>(q[d]) - row[d];
      acc += x * x;
    }
    dist[r] = acc;
  }
  std::vector<std::size_t> order(m.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

std::vector<std::vector<std::size_t>> brute_bottleneck(const embkit::EmbeddingMatrix& codebook,
                                                       const embkit::EmbeddingMatrix& images, std::size_t k,
                                                       std::size_t cpc, std::size_t classes) {
  std::vector<std::map<std::size_t, std::size_t>> freq(classes);
  for (std::size_t r = 0; r < images.rows(); ++r) {
    for (auto id : brute_rank(images.row(r), codebook, k)) ++freq[static_cast<std::size_t>((*images.labels())[r])][id];
  }
  std::vector<std::vector<std::size_t>> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::pair<std::size_t, std::size_t>> v(freq[c].begin(), freq[c].end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; i < std::min(cpc, v.size()); ++i) out[c].push_back(v[i].first);
  }
  return out;
}

vocab::ConceptCatalog catalog_with(const embkit::EmbeddingMatrix& emb) {
  std::vector<std::pair<std::string, vocab::ConceptKind>> items;
  for (std::size_t i = 0; i < emb.rows(); ++i) items.emplace_back("c" + std::to_string(i), vocab::ConceptKind::Atomic);
  vocab::ConceptCatalog cat(std::move(items));
  cat.set_embeddings(emb);
  return cat;
}

// Random bottleneck over a random codebook with random labeled images.
tokenizer::Bottleneck random_bottleneck(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t classes = 2 + rng.below(6);
  const std::size_t concepts = 10 + rng.below(40);
  const std::size_t dim = 8 + rng.below(8);
  const std::size_t k = 1 + rng.below(5);
  const std::size_t cpc = 1 + rng.below(8);
  const std::size_t per_class = 1 + rng.below(6);
  tokenizer::V2CTokenizer tok(catalog_with(oracle::random_matrix(concepts, dim, seed * 3 + 1)), k);
  auto images = oracle::random_matrix(classes * per_class, dim, seed * 3 + 2);
  std::vector<std::int64_t> labels(images.rows());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int64_t>(i % classes);
  images.set_labels(labels);
  return tokenizer::build_bottleneck(tok, images, cpc, classes);
}

// ---- criteria ------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto inst = oracle::random_gradient_instance(4, 12, 8, 1000 + seed);
    const auto analytic = cbm::gradient(inst.a, inst.labels, inst.w);
    const auto numeric = oracle::finite_difference_gradient(inst.a.scores, inst.labels, inst.w, 1e-3);
    worst = std::max(worst, oracle::max_relative_error(analytic, numeric));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 5.0, "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.3f", secs) + " s"};
}

Outcome unit_sphere_equivalence() {
  std::size_t mismatches = 0, cases = 0;
  const std::size_t ks[] = {1, 5, 50};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto codebook = oracle::random_matrix(500, 32, 200 + i);
    const auto queries = oracle::random_matrix(1000, 32, 300 + i);
    for (std::size_t q = 0; q < queries.rows(); ++q) {
      ++cases;
      const auto c = embkit::cosine_topk(queries.row(q), codebook, ks[i]).indices;
      const auto e = embkit::euclidean_topk(queries.row(q), codebook, ks[i]).indices;
      if (c != e || c.size() != ks[i]) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in " + std::to_string(cases) + " queries"};
}

Outcome oracle_equivalence() {
  synth::WorldParams p;  // 10 classes, 3 planted, 200 distractors, 20 images/class, 3 views
  const auto w = synth::gen_world(p);
  const auto& emb = w.concepts.require_embeddings();
  const auto base = quantset::base_from_text(w.class_prompts, p.n_classes);
  const auto q = quantset::select_quantset(base, w.unlabeled_pool, quantset::kDefaultPerClass);

  const auto freq = conceptfilter::count_topk_concepts(q, w.pool_views, w.concepts, conceptfilter::kDefaultTopK);
  const auto brute = oracle::brute_force_frequencies(q, w.pool_views, emb, conceptfilter::kDefaultTopK);
  const bool freq_ok = freq.counts == brute.counts && freq.views_seen == brute.views_seen;

  const auto codebook = conceptfilter::build_codebook(freq, w.concepts, 20);
  const auto& cb_emb = codebook.concepts.require_embeddings();
  const tokenizer::V2CTokenizer tok(codebook.concepts, tokenizer::kDefaultTokensPerImage);
  std::size_t rank_mismatch = 0, ranked = 0;
  for (const auto* images : {&w.train_images, &w.test_images}) {
    for (std::size_t r = 0; r < images->rows(); ++r) {
      ++ranked;
      if (tokenizer::tokenize(tok, images->row(r)).ids != brute_rank(images->row(r), cb_emb, tok.k())) ++rank_mismatch;
    }
  }
  const auto b = tokenizer::build_bottleneck(tok, w.train_images, 5, p.n_classes);
  const bool bottleneck_ok = b.per_class == brute_bottleneck(cb_emb, w.train_images, tok.k(), 5, p.n_classes);

  std::ostringstream d;
  d << "frequency tables " << (freq_ok ? "equal" : "DIFFER") << ", " << rank_mismatch << "/" << ranked
    << " token rankings differ, bottleneck lists " << (bottleneck_ok ? "equal" : "DIFFER");
  return {freq_ok && rank_mismatch == 0 && bottleneck_ok, d.str()};
}

struct PipelineResult {
  double train_accuracy = 0.0;
  std::size_t test_correct = 0;
  std::size_t test_total = 0;
};

// quantset -> filter -> bottleneck -> train -> evaluate with library defaults
// apart from M = 20 and concepts_per_class = 5.
PipelineResult run_library_pipeline(const synth::SynthWorld& w, std::span<const std::int64_t> train_labels,
                                    std::uint64_t seed) {
  const std::size_t n = w.params.n_classes;
  const auto base = quantset::base_from_text(w.class_prompts, n);
  const auto q = quantset::select_quantset(base, w.unlabeled_pool, quantset::kDefaultPerClass);
  const auto freq = conceptfilter::count_topk_concepts(q, w.pool_views, w.concepts, conceptfilter::kDefaultTopK);
  const auto codebook = conceptfilter::build_codebook(freq, w.concepts, 20);
  const tokenizer::V2CTokenizer tok(codebook.concepts, tokenizer::kDefaultTokensPerImage);

  auto train = w.train_images;
  train.set_labels(std::vector<std::int64_t>(train_labels.begin(), train_labels.end()));
  const auto b = tokenizer::build_bottleneck(tok, train, 5, n);

  cbm::TrainConfig cfg;
  cfg.seed = seed;
  cfg.init = cbm::default_init_for_shots(0);
  const auto a = cbm::activations(train, b);
  auto w0 = cfg.init == cbm::InitMode::Prior ? cbm::init_prior(b) : cbm::init_random(b.classes(), b.size(), seed);
  const auto result = cbm::train(a, train.require_labels(), cfg, std::move(w0));

  const auto& test_labels = w.test_images.require_labels();
  const auto pred = cbm::predict(cbm::activations(w.test_images, b), result.weights);
  PipelineResult out;
  out.train_accuracy = result.metrics.accuracy;
  out.test_total = pred.size();
  for (std::size_t i = 0; i < pred.size(); ++i) out.test_correct += pred[i] == static_cast<std::size_t>(test_labels[i]);
  return out;
}

Outcome planted_recovery() {
  double recovery = 0.0;
  std::size_t correct = 0, total = 0;
  std::size_t classes = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    synth::WorldParams p;
    p.seed = seed;
    p.noise = 0.1;
    classes = p.n_classes;
    const auto w = synth::gen_world(p);
    const auto base = quantset::base_from_text(w.class_prompts, p.n_classes);
    const auto q = quantset::select_quantset(base, w.unlabeled_pool, quantset::kDefaultPerClass);
    const auto freq = conceptfilter::count_topk_concepts(q, w.pool_views, w.concepts, conceptfilter::kDefaultTopK);
    const auto r = synth::recovery_score(conceptfilter::build_codebook(freq, w.concepts, 20), w);
    recovery += std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());

    const auto shuffled = synth::shuffle_labels(w.train_images.require_labels(), 100 + seed);
    const auto res = run_library_pipeline(w, shuffled, seed);
    correct += res.test_correct;
    total += res.test_total;
  }
  recovery /= 5.0;
  const double chance = 1.0 / static_cast<double>(classes);
  const double acc = static_cast<double>(correct) / static_cast<double>(total);
  const double se = std::sqrt(chance * (1.0 - chance) / static_cast<double>(total));
  const bool control_ok = std::abs(acc - chance) <= 3.0 * se;
  return {recovery >= 0.9 && control_ok, "mean recovery " + fmt("%.3f", recovery) + "; shuffled-label accuracy " +
                                             fmt("%.3f", acc) + " vs chance " + fmt("%.3f", chance) + " (3 SE " +
                                             fmt("%.3f", 3.0 * se) + ")"};
}

const char* kLexicon =
    "the\t1\tOTHER\n"
    "red\t2\tADJ\n"
    "small\t3\tADJ\n"
    "wing\t4\tNOUN\n"
    "beak\t5\tNOUN\n"
    "stripe\t6\tNOUN\n";

// Full CLI pipeline in one directory: m = 20, concepts_per_class = 5, all other
// keys at their defaults.
struct CliRun {
  bool ok = false;
  std::string log;
  double seconds = 0.0;
};

cli::RunConfig cli_config(const fs::path& dir) {
  cli::RunConfig cfg;
  cfg.set("out", dir.string());
  cfg.set("m", "20");
  cfg.set("concepts_per_class", "5");
  cfg.set("lexicon", "{out}/lexicon.tsv");
  cfg.set("relations", "{out}/relations.txt");
  return cfg;
}

CliRun run_cli_pipeline(const fs::path& dir) {
  std::ofstream(dir / "lexicon.tsv") << kLexicon;
  std::ofstream(dir / "relations.txt") << "has a\n";
  const auto cfg = cli_config(dir);
  std::ostringstream log;
  CliRun run;
  const auto t0 = Clock::now();
  for (auto stage : {"synth", "vocab", "quantset", "filter", "tokenize", "train", "eval", "explain"}) {
    if (cli::run_stage(stage, cfg, log) != cli::kExitOk) {
      run.log = log.str();
      return run;
    }
  }
  run.seconds = seconds_since(t0);
  run.ok = true;
  return run;
}

std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.ends_with(".timings.json")) continue;
    out[name] = read_file(e.path());
  }
  return out;
}

Outcome end_to_end(const CliRun& run, const fs::path& dir) {
  if (!run.ok) return {false, "pipeline failed: " + run.log};
  const auto train = nlohmann::json::parse(read_file(dir / "train_report.json"));
  const auto eval = nlohmann::json::parse(read_file(dir / "eval.json"));
  const double tr = train["train_accuracy"].get<double>();
  const double te = eval["accuracy"].get<double>();
  return {tr >= 0.99 && te >= 0.95 && run.seconds < 60.0,
          "train " + fmt("%.3f", tr) + ", held-out " + fmt("%.3f", te) + ", " + fmt("%.2f", run.seconds) + " s"};
}

Outcome prior_init_structure() {
  std::size_t bad_rows = 0, rows = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = random_bottleneck(seed);
    const auto w = cbm::init_prior(b);
    for (std::size_t k = 0; k < b.classes(); ++k) {
      ++rows;
      std::vector<double> expected(b.size(), 0.0);
      for (auto id : b.per_class[k]) expected[b.column_of(id)] = 1.0;
      auto row = w.row(k);
      const auto ones = static_cast<std::size_t>(std::count(row.begin(), row.end(), 1.0));
      if (!std::equal(row.begin(), row.end(), expected.begin()) || ones != b.per_class[k].size()) ++bad_rows;
    }
  }
  return {bad_rows == 0, std::to_string(bad_rows) + "/" + std::to_string(rows) + " rows differ"};
}

Outcome determinism(const fs::path& first, const fs::path& second, bool second_ok) {
  if (!second_ok) return {false, "second pipeline run failed"};
  const auto a = artifacts(first);
  const auto b = artifacts(second);
  std::size_t differ = 0;
  for (const auto& [name, bytes] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second != bytes) ++differ;
  }
  if (a.size() != b.size()) ++differ;
  return {differ == 0 && !a.empty(), std::to_string(a.size()) + " artifacts compared, " + std::to_string(differ) +
                                         " differ (timings excluded)"};
}

Outcome shift_invariance() {
  double worst = 0.0;
  std::size_t ranking_changes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = random_bottleneck(50 + seed);
    Rng rng(900 + seed);
    cbm::WeightMatrix w(b.classes(), b.size());
    for (double& v : w.data()) v = rng.normal();
    auto shifted = w;
    for (std::size_t k = 0; k < w.rows(); ++k) {
      const double c = std::round(100.0 * rng.uniform() - 50.0);
      for (double& v : shifted.row(k)) v += c;
    }
    cbm::ConceptActivations a{Matrix<double>(16, b.size())};
    for (double& v : a.scores.data()) v = 2.0 * rng.uniform() - 1.0;
    const auto y0 = cbm::forward(a, w);
    const auto y1 = cbm::forward(a, shifted);
    for (std::size_t i = 0; i < y0.data().size(); ++i) worst = std::max(worst, std::abs(y0.data()[i] - y1.data()[i]));
    for (std::size_t k = 0; k < b.classes(); ++k) {
      const auto e0 = cbm::explain_class(w, b, k, b.size());
      const auto e1 = cbm::explain_class(shifted, b, k, b.size());
      bool same = e0.size() == e1.size();
      for (std::size_t j = 0; same && j < e0.size(); ++j) same = e0[j].column == e1[j].column;
      if (!same) ++ranking_changes;
    }
  }
  return {worst <= 1e-5 && ranking_changes == 0,
          "max score change " + fmt("%.2e", worst) + ", " + std::to_string(ranking_changes) + " ranking changes"};
}

}  // namespace

int main() {
  setenv("V2C_THREADS", "1", 1);
  const auto dir_a = oracle::scratch_dir("acceptance_run_a");
  const auto dir_b = oracle::scratch_dir("acceptance_run_b");
  const auto run_a = run_cli_pipeline(dir_a);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient-correctness", gradient_correctness},
      {"unit-sphere-equivalence", unit_sphere_equivalence},
      {"oracle-equivalence", oracle_equivalence},
      {"planted-concept-recovery", planted_recovery},
      {"end-to-end-training", [&] { return end_to_end(run_a, dir_a); }},
      {"prior-init-structure", prior_init_structure},
      {"determinism", [&] { return determinism(dir_a, dir_b, run_cli_pipeline(dir_b).ok && run_a.ok); }},
      {"shift-invariance", shift_invariance},
  };

  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
