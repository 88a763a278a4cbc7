#include "v2c/cli/stages.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "v2c/cbm.hpp"
#include "v2c/conceptfilter.hpp"
#include "v2c/embkit.hpp"
#include "v2c/error.hpp"
#include "v2c/io.hpp"
#include "v2c/quantset.hpp"
#include "v2c/synth.hpp"
#include "v2c/tokenizer.hpp"
#include "v2c/vocab.hpp"

namespace v2c::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kLockName = ".v2c.lock";

class OutDirLock {
 public:
  explicit OutDirLock(const fs::path& dir) : path_(dir / kLockName) {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw std::runtime_error("output directory " + dir.string() + " is locked by another v2c run (" +
                               path_.string() + ")");
    }
  }
  ~OutDirLock() {
    ::close(fd_);
    ::unlink(path_.c_str());
  }
  OutDirLock(const OutDirLock&) = delete;
  OutDirLock& operator=(const OutDirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// Tracks inputs and outputs of one stage and writes its manifest.
class StageContext {
 public:
  StageContext(std::string stage, const RunConfig& cfg, std::ostream& log)
      : stage_(std::move(stage)), cfg_(cfg), log_(log), out_(cfg.out()), start_(std::chrono::steady_clock::now()) {}

  const RunConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }
  std::ostream& log() { return log_; }

  std::string read_input(const std::string& name, const fs::path& path) {
    if (!fs::exists(path)) throw MissingInput("missing input '" + name + "': " + path.string());
    std::string bytes = read_file(path);
    inputs_[name] = {display(path), sha256_hex(bytes)};
    return bytes;
  }

  embkit::EmbeddingMatrix read_matrix(const std::string& name, const fs::path& path) {
    const std::string bytes = read_input(name, path);
    return embkit::decode_v2ce(std::span<const char>(bytes.data(), bytes.size()));
  }

  /// Input named by a config key.
  std::string read_key(const std::string& key) { return read_input(key, cfg_.get_path(key)); }
  embkit::EmbeddingMatrix read_matrix_key(const std::string& key) { return read_matrix(key, cfg_.get_path(key)); }

  /// Artifact produced by an earlier stage in the output directory.
  std::string read_artifact(const std::string& file) { return read_input(file, out_ / file); }
  embkit::EmbeddingMatrix read_artifact_matrix(const std::string& file) { return read_matrix(file, out_ / file); }

  void write(const std::string& file, std::string_view bytes) {
    write_file_atomic(out_ / file, bytes);
    outputs_[file] = sha256_hex(bytes);
  }

  void write_matrix(const std::string& file, const embkit::EmbeddingMatrix& m) { write(file, embkit::encode_v2ce(m)); }

  /// Registers a file some library call already wrote.
  void record_output(const std::string& file) { outputs_[file] = sha256_hex(read_file(out_ / file)); }

  void finish() {
    json config = json::object();
    std::string canonical;
    for (const auto& [k, v] : cfg_.used()) {
      config[k] = v;
      canonical += k + "=" + v + "\n";
    }
    json inputs = json::object();
    for (const auto& [name, rec] : inputs_) inputs[name] = {{"path", rec.first}, {"sha256", rec.second}};
    json outputs = json::object();
    for (const auto& [file, sha] : outputs_) outputs[file] = sha;

    json manifest;
    manifest["stage"] = stage_;
    manifest["config_hash"] = sha256_hex(canonical);
    manifest["config"] = std::move(config);
    manifest["inputs"] = std::move(inputs);
    manifest["outputs"] = std::move(outputs);
    write_file_atomic(out_ / (stage_ + ".manifest.json"), manifest.dump(2) + "\n");

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json timings;
    timings["stage"] = stage_;
    timings["seconds"] = seconds;
    write_file_atomic(out_ / (stage_ + ".timings.json"), timings.dump(2) + "\n");
    log_ << stage_ << ": wrote " << outputs_.size() << " artifact(s) to " << out_.string() << " in " << std::fixed
         << std::setprecision(2) << seconds << " s\n";
  }

 private:
  std::string display(const fs::path& p) const {
    const auto rel = p.lexically_normal().lexically_relative(out_.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
  }

  std::string stage_;
  const RunConfig& cfg_;
  std::ostream& log_;
  fs::path out_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, std::pair<std::string, std::string>> inputs_;
  std::map<std::string, std::string> outputs_;
};

std::vector<std::string> parse_lines(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

// First `shots` rows of each class in row order; shots = 0 keeps everything.
embkit::EmbeddingMatrix take_shots(const embkit::EmbeddingMatrix& m, std::size_t shots) {
  if (shots == 0) return m;
  const auto& labels = m.require_labels();
  std::map<std::int64_t, std::size_t> taken;
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (taken[labels[r]]++ < shots) rows.push_back(r);
  }
  return embkit::select_rows(m, rows);
}

vocab::ConceptCatalog load_catalog_pair(StageContext& ctx, const std::string& jsonl_file,
                                        const std::string& v2ce_file) {
  auto catalog = vocab::catalog_from_jsonl(ctx.read_artifact(jsonl_file));
  catalog.set_embeddings(ctx.read_artifact_matrix(v2ce_file));
  return catalog;
}

tokenizer::Bottleneck load_bottleneck(StageContext& ctx) {
  auto catalog = load_catalog_pair(ctx, "bottleneck.jsonl", "bottleneck.v2ce");
  return tokenizer::bottleneck_from_json(ctx.read_artifact("bottleneck.json"), std::move(catalog));
}

json history_json(const std::vector<cbm::EpochRecord>& history) {
  json out = json::array();
  for (const auto& rec : history) {
    json e;
    e["epoch"] = rec.epoch;
    e["train_loss"] = rec.train_loss;
    e["train_accuracy"] = rec.train_accuracy;
    if (rec.val_accuracy) {
      e["val_loss"] = *rec.val_loss;
      e["val_accuracy"] = *rec.val_accuracy;
    }
    out.push_back(std::move(e));
  }
  return out;
}

// --- stages -------------------------------------------------------------------

void stage_synth(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  synth::WorldParams p;
  p.seed = cfg.get_u64("seed");
  p.n_classes = cfg.get_count("synth_classes", 1);
  p.planted_per_class = cfg.get_count("synth_planted", 1);
  p.n_distractors = cfg.get_count("synth_distractors");
  p.n_images_per_class = cfg.get_count("synth_images_per_class", 1);
  p.pool_size = cfg.get_count("synth_pool", 1);
  p.views_per_image = cfg.get_count("synth_views", 1);
  p.dim = cfg.get_count("synth_dim", 1);
  p.noise = cfg.get_real("synth_noise");
  if (p.noise < 0.0) throw ConfigError("config key 'synth_noise' must be >= 0");
  p.templates_per_class = cfg.get_count("synth_templates", 1);
  p.background_fraction = cfg.get_real("synth_background");
  if (p.background_fraction < 0.0 || p.background_fraction > 1.0) {
    throw ConfigError("config key 'synth_background' must be within [0, 1]");
  }

  const auto world = synth::gen_world(p);
  synth::save_world(world, ctx.out());
  for (const char* f : {"concepts.jsonl", "concepts.v2ce", "class_prompts.v2ce", "train.v2ce", "test.v2ce", "pool.v2ce",
                        "views.v2ce", "class_names.txt", "world.json"}) {
    ctx.record_output(f);
  }
}

void stage_vocab(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto lexicon_path = cfg.get_path("lexicon");
  const auto ngram_text = cfg.get_string("ngrams");
  bool atomic = false, bigram = false, trigram = false;
  std::stringstream kinds(ngram_text);
  for (std::string kind; std::getline(kinds, kind, ',');) {
    if (kind == "atomic") atomic = true;
    else if (kind == "bigram") bigram = true;
    else if (kind == "trigram") trigram = true;
    else throw ConfigError("config key 'ngrams' has unknown kind '" + kind + "'");
  }
  const std::string leakage = cfg.get_string("leakage");
  if (leakage != "phrase" && leakage != "token") throw ConfigError("config key 'leakage' must be phrase or token");

  const auto lex = vocab::parse_lexicon(ctx.read_input("lexicon", lexicon_path));
  std::vector<vocab::ConceptCatalog> parts;
  if (atomic) parts.push_back(vocab::build_atomic(lex, cfg.get_count("top_n", 1)));
  if (bigram) {
    parts.push_back(vocab::build_bigrams(lex, cfg.get_count("max_adj", 1), cfg.get_count("max_noun", 1),
                                         cfg.get_count("bigram_cap")));
  }
  if (trigram) {
    const auto rels = vocab::parse_relations(ctx.read_key("relations"));
    parts.push_back(vocab::build_trigrams(lex, rels, cfg.get_count("max_adj", 1), cfg.get_count("max_noun", 1),
                                          cfg.get_count("trigram_cap")));
  }
  auto catalog = vocab::merge_catalogs(parts);

  const auto names_path = cfg.get_path("class_names");
  if (cfg.has("class_names") || fs::exists(names_path)) {
    const auto names = parse_lines(ctx.read_input("class_names", names_path));
    const auto before = catalog.size();
    catalog = vocab::remove_class_leakage(
        catalog, names, leakage == "phrase" ? vocab::LeakageMode::Phrase : vocab::LeakageMode::PerToken);
    ctx.log() << "vocab: removed " << before - catalog.size() << " concept(s) naming a class\n";
  }
  ctx.write("vocab.jsonl", vocab::catalog_to_jsonl(catalog));
  ctx.log() << "vocab: " << catalog.size() << " concepts\n";
}

void stage_quantset(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const std::string base_kind = cfg.get_string("base");
  quantset::BaseFeatures base;
  if (base_kind == "text") {
    base = quantset::base_from_text(ctx.read_matrix_key("class_prompts"));
  } else if (base_kind == "images") {
    base = quantset::base_from_images(take_shots(ctx.read_matrix_key("train"), cfg.get_count("shots")));
  } else {
    throw ConfigError("config key 'base' must be text or images");
  }
  const auto pool = ctx.read_matrix_key("pool");
  const auto q = quantset::select_quantset(base, pool, cfg.get_count("per_class", 1));
  ctx.write("quantset.json", quantset::quantset_to_json(q));
  ctx.write_matrix("base.v2ce", base.vectors);
}

void stage_filter(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto q = quantset::quantset_from_json(ctx.read_artifact("quantset.json"));
  const auto views = ctx.read_matrix_key("views");
  const auto pool = ctx.read_matrix_key("pool");
  auto catalog = vocab::catalog_from_jsonl(ctx.read_key("concepts"));
  catalog.set_embeddings(ctx.read_matrix_key("concept_embeddings"));

  std::vector<std::int64_t> pool_groups;
  if (pool.groups()) pool_groups = *pool.groups();
  const auto freq = conceptfilter::count_topk_concepts(q, views, catalog, cfg.get_count("k", 1), pool_groups);
  const auto codebook =
      conceptfilter::build_codebook(freq, catalog, cfg.get_count("m", 1), cfg.get_count("min_count"));

  ctx.write("frequency.json", conceptfilter::frequency_to_json(freq));
  ctx.write("codebook.json", conceptfilter::codebook_to_json(codebook));
  ctx.write("codebook.jsonl", vocab::catalog_to_jsonl(codebook.concepts));
  ctx.write_matrix("codebook.v2ce", codebook.concepts.require_embeddings());
  ctx.log() << "filter: codebook of " << codebook.concepts.size() << " concepts for " << codebook.per_class.size()
            << " classes\n";
}

void stage_tokenize(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  auto catalog = load_catalog_pair(ctx, "codebook.jsonl", "codebook.v2ce");
  const tokenizer::V2CTokenizer tok(std::move(catalog), cfg.get_count("k", 1));
  const auto labeled = take_shots(ctx.read_matrix_key("train"), cfg.get_count("shots"));
  const auto b = tokenizer::build_bottleneck(tok, labeled, cfg.get_count("concepts_per_class", 1));
  ctx.write("bottleneck.json", tokenizer::bottleneck_to_json(b));
  ctx.write("bottleneck.jsonl", vocab::catalog_to_jsonl(b.concepts));
  ctx.write_matrix("bottleneck.v2ce", b.concepts.require_embeddings());
  ctx.log() << "tokenize: bottleneck N=" << b.classes() << " N_C=" << b.size() << "\n";
}

void stage_train(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto b = load_bottleneck(ctx);
  const std::size_t shots = cfg.get_count("shots");
  const auto train_set = take_shots(ctx.read_matrix_key("train"), shots);

  cbm::TrainConfig tc;
  tc.learning_rate = cfg.get_real("lr", 0.0);
  tc.batch_size = cfg.get_count("batch", 1);
  tc.max_epochs = cfg.get_count("epochs", 1);
  tc.seed = cfg.get_u64("seed");
  const std::string init = cfg.get_string("init");
  if (init == "auto") tc.init = cbm::default_init_for_shots(shots);
  else if (init == "prior") tc.init = cbm::InitMode::Prior;
  else if (init == "random") tc.init = cbm::InitMode::Random;
  else throw ConfigError("config key 'init' must be auto, prior or random");

  const auto a = cbm::activations(train_set, b);
  auto w0 = tc.init == cbm::InitMode::Prior ? cbm::init_prior(b) : cbm::init_random(b.classes(), b.size(), tc.seed);

  std::optional<embkit::EmbeddingMatrix> val_set;
  std::optional<cbm::ConceptActivations> val_a;
  if (auto val_path = cfg.get_optional_path("val")) {
    val_set = ctx.read_matrix("val", *val_path);
    val_a = cbm::activations(*val_set, b);
  }
  std::optional<cbm::LabeledActivations> validation;
  if (val_a) validation.emplace(cbm::LabeledActivations{*val_a, val_set->require_labels()});

  const auto result = cbm::train(a, train_set.require_labels(), tc, std::move(w0), validation);

  ctx.write_matrix("weights.v2ce", cbm::weights_to_embedding(result.weights));
  json report;
  report["seed"] = tc.seed;
  report["init"] = tc.init == cbm::InitMode::Prior ? "prior" : "random";
  report["learning_rate"] = tc.learning_rate;
  report["batch_size"] = tc.batch_size;
  report["max_epochs"] = tc.max_epochs;
  report["adam"] = {{"beta1", tc.adam.beta1}, {"beta2", tc.adam.beta2}, {"epsilon", tc.adam.epsilon}};
  report["bottleneck_sha256"] = sha256_hex(tokenizer::bottleneck_to_json(b));
  report["samples"] = train_set.rows();
  report["best_epoch"] = result.best_epoch;
  report["train_accuracy"] = result.metrics.accuracy;
  report["train_loss"] = result.metrics.loss;
  report["history"] = history_json(result.metrics.history);
  ctx.write("train_report.json", report.dump(2) + "\n");
  ctx.log() << "train: accuracy " << result.metrics.accuracy << " loss " << result.metrics.loss << " (epoch "
            << result.best_epoch << ")\n";
}

void stage_eval(StageContext& ctx) {
  const auto b = load_bottleneck(ctx);
  const auto w = cbm::weights_from_embedding(ctx.read_artifact_matrix("weights.v2ce"));
  const auto test = ctx.read_matrix_key("test");
  const auto& labels = test.require_labels();
  const auto m = cbm::evaluate(cbm::activations(test, b), labels, w);
  json report;
  report["samples"] = test.rows();
  report["accuracy"] = m.accuracy;
  report["loss"] = m.loss;
  ctx.write("eval.json", report.dump(2) + "\n");
  ctx.log() << "eval: accuracy " << m.accuracy << " on " << test.rows() << " samples\n";
}

void stage_explain(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto b = load_bottleneck(ctx);
  const auto w = cbm::weights_from_embedding(ctx.read_artifact_matrix("weights.v2ce"));
  const std::size_t top_n = cfg.get_count("top_n_explain", 1);

  std::vector<std::string> names;
  const auto names_path = cfg.get_path("class_names");
  if (cfg.has("class_names") || fs::exists(names_path)) names = parse_lines(ctx.read_input("class_names", names_path));
  auto class_name = [&](std::size_t k) { return k < names.size() ? names[k] : "class " + std::to_string(k); };

  std::vector<std::vector<cbm::ConceptWeight>> all;
  std::size_t name_width = 5;
  std::size_t text_width = 7;
  for (std::size_t k = 0; k < w.rows(); ++k) {
    all.push_back(cbm::explain_class(w, b, k, top_n));
    name_width = std::max(name_width, class_name(k).size());
    for (const auto& c : all.back()) text_width = std::max(text_width, c.text.size());
  }

  std::ostringstream text;
  text << std::left << std::setw(static_cast<int>(name_width)) << "class" << "  "
       << "    " << std::setw(static_cast<int>(text_width)) << "concept" << "  weight\n";
  json report = json::array();
  for (std::size_t k = 0; k < all.size(); ++k) {
    json concepts = json::array();
    for (std::size_t i = 0; i < all[k].size(); ++i) {
      const auto& c = all[k][i];
      text << std::left << std::setw(static_cast<int>(name_width)) << (i == 0 ? class_name(k) : "") << "  "
           << std::right << std::setw(2) << (i + 1) << ". " << std::left << std::setw(static_cast<int>(text_width))
           << c.text << "  " << std::fixed << std::setprecision(4) << c.weight << "\n";
      concepts.push_back({{"rank", i + 1}, {"column", c.column}, {"text", c.text}, {"weight", c.weight}});
    }
    report.push_back({{"class", k}, {"name", class_name(k)}, {"concepts", std::move(concepts)}});
  }
  ctx.write("explain.txt", text.str());
  ctx.write("explain.json", report.dump(2) + "\n");
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::DegenerateBase:
    case ErrorCode::ZeroVector:
    case ErrorCode::NotNormalized:
    case ErrorCode::InfeasibleGeometry:
    case ErrorCode::EmptyFrequencies:
      return kExitNumeric;
    case ErrorCode::IoError:
    case ErrorCode::BadMagic:
    case ErrorCode::UnsupportedVersion:
    case ErrorCode::TruncatedFile:
    case ErrorCode::ParseError:
      return kExitMissingInput;
    default:
      return kExitFailure;
  }
}

}  // namespace

const std::vector<std::string_view>& stage_names() {
  static const std::vector<std::string_view> names = {"vocab", "quantset", "filter", "tokenize",
                                                      "train", "eval",     "explain", "synth"};
  return names;
}

int run_stage(std::string_view name, const RunConfig& cfg, std::ostream& log) {
  static const std::map<std::string_view, std::function<void(StageContext&)>> stages = {
      {"vocab", stage_vocab},   {"quantset", stage_quantset}, {"filter", stage_filter},
      {"tokenize", stage_tokenize}, {"train", stage_train},   {"eval", stage_eval},
      {"explain", stage_explain},   {"synth", stage_synth},
  };
  auto it = stages.find(name);
  if (it == stages.end()) {
    log << "error: unknown stage '" << name << "'\n";
    return kExitConfig;
  }
  try {
    // Each stage records only the keys it read itself.
    RunConfig stage_cfg = cfg;
    stage_cfg.clear_used();
    OutDirLock lock(stage_cfg.out());
    StageContext ctx(std::string(name), stage_cfg, log);
    it->second(ctx);
    ctx.finish();
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingInput& e) {
    log << "missing input: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace v2c::cli
