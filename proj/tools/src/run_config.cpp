#include "v2c/cli/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace v2c::cli {

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::string expand_out(std::string value, const std::string& out) {
  static constexpr std::string_view kToken = "{out}";
  for (std::size_t pos = value.find(kToken); pos != std::string::npos; pos = value.find(kToken, pos + out.size())) {
    value.replace(pos, kToken.size(), out);
  }
  return value;
}

}  // namespace

const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = {
      {"out", "v2c_out", "output directory"},
      {"seed", "0", "seed for synthetic data, shuffles and random init"},
      // vocab
      {"lexicon", "", "lexicon file: word<TAB>rank<TAB>POS"},
      {"relations", "", "relation phrases, one per line (needed for trigrams)"},
      {"class_names", "{out}/class_names.txt", "class names, one per line"},
      {"ngrams", "atomic,bigram,trigram", "concept kinds to build"},
      {"top_n", "10000", "atomic vocabulary size"},
      {"max_adj", "500", "adjectives used for n-grams"},
      {"max_noun", "1000", "nouns used for n-grams"},
      {"bigram_cap", "20000", "maximum bigram count"},
      {"trigram_cap", "20000", "maximum trigram count"},
      {"leakage", "phrase", "class-name leakage matching: phrase|token"},
      // quantset
      {"base", "text", "base features from class prompt text or few-shot images: text|images"},
      {"class_prompts", "{out}/class_prompts.v2ce", "prompt-template embeddings labeled by class"},
      {"pool", "{out}/pool.v2ce", "unlabeled image pool"},
      {"per_class", "100", "pool images selected per class"},
      // filter
      {"views", "{out}/views.v2ce", "augmented views of pool images, grouped by pool row"},
      {"concepts", "{out}/concepts.jsonl", "concept catalog (JSON lines)"},
      {"concept_embeddings", "{out}/concepts.v2ce", "text embeddings aligned with the catalog"},
      {"k", "5", "concepts per image view / per tokenized image"},
      {"m", "500", "concepts kept per class after filtering"},
      {"min_count", "1", "minimum votes for a concept to be kept"},
      // tokenize / train / eval
      {"train", "{out}/train.v2ce", "labeled training embeddings"},
      {"val", "", "optional labeled validation embeddings"},
      {"test", "{out}/test.v2ce", "labeled test embeddings"},
      {"shots", "0", "labeled images per class (0 = all)"},
      {"concepts_per_class", "50", "bottleneck concepts per class"},
      {"lr", "5e-5", "Adam learning rate"},
      {"batch", "512", "mini-batch size"},
      {"epochs", "5000", "training epochs"},
      {"init", "auto", "weight init: auto|prior|random"},
      {"top_n_explain", "3", "concepts listed per class by explain"},
      // synth
      {"synth_classes", "10", "synthetic classes"},
      {"synth_planted", "3", "planted concepts per class"},
      {"synth_distractors", "200", "distractor concepts"},
      {"synth_images_per_class", "20", "labeled images per class (train and test each)"},
      {"synth_pool", "1000", "unlabeled pool size"},
      {"synth_views", "3", "augmented views per pool image"},
      {"synth_dim", "64", "embedding dimensionality"},
      {"synth_noise", "0.1", "noise magnitude"},
      {"synth_templates", "4", "prompt embeddings per class"},
      {"synth_background", "0.2", "fraction of pool images drawn from distractors only"},
  };
  return keys;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    cfg.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

const KeySpec& RunConfig::spec(const std::string& key) const {
  const auto& keys = known_keys();
  auto it = std::find_if(keys.begin(), keys.end(), [&](const KeySpec& k) { return k.name == key; });
  if (it == keys.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  (void)spec(key);
  values_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::filesystem::path RunConfig::out() const {
  auto it = values_.find("out");
  return it != values_.end() ? std::filesystem::path(it->second) : std::filesystem::path(spec("out").default_value);
}

std::optional<std::string> RunConfig::raw(const std::string& key) const {
  const auto& s = spec(key);
  std::string value;
  if (auto it = values_.find(key); it != values_.end()) {
    value = it->second;
  } else {
    value = std::string(s.default_value);
  }
  if (value.empty()) return std::nullopt;
  if (key != "out") used_[key] = value;
  return value;
}

std::string RunConfig::get_string(const std::string& key) const {
  auto v = raw(key);
  if (!v) throw ConfigError("missing required config key '" + key + "'");
  return *v;
}

std::optional<std::string> RunConfig::get_optional(const std::string& key) const { return raw(key); }

std::size_t RunConfig::get_count(const std::string& key, std::size_t min) const {
  const std::string v = get_string(key);
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer, got '" + v + "'");
  }
  if (out < min) throw ConfigError("config key '" + key + "' must be >= " + std::to_string(min));
  return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string v = get_string(key);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' must be an unsigned integer, got '" + v + "'");
  }
  return out;
}

double RunConfig::get_real(const std::string& key, std::optional<double> lower_exclusive) const {
  const std::string v = get_string(key);
  double out = 0.0;
  try {
    std::size_t used = 0;
    out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' must be a number, got '" + v + "'");
  }
  if (!std::isfinite(out)) throw ConfigError("config key '" + key + "' must be finite");
  if (lower_exclusive && !(out > *lower_exclusive)) {
    throw ConfigError("config key '" + key + "' must be > " + std::to_string(*lower_exclusive));
  }
  return out;
}

std::filesystem::path RunConfig::get_path(const std::string& key) const {
  return expand_out(get_string(key), out().string());
}

std::optional<std::filesystem::path> RunConfig::get_optional_path(const std::string& key) const {
  auto v = raw(key);
  if (!v) return std::nullopt;
  return std::filesystem::path(expand_out(*v, out().string()));
}

}  // namespace v2c::cli
