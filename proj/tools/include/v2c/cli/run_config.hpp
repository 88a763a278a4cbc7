#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace v2c::cli {

/// Bad or missing configuration; exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input artifact the stage needs is absent or unreadable; exit status 3.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeySpec {
  std::string_view name;
  std::string_view default_value;  // "{out}" expands to the output directory; empty = required when read
  std::string_view help;
};

/// Every recognized configuration key with its default.
const std::vector<KeySpec>& known_keys();

/// Flat `key = value` configuration with command-line overrides.
///
/// Reads are recorded with their resolved values so a stage manifest can
/// list exactly the settings it used.
class RunConfig {
 public:
  /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
  static RunConfig parse(std::string_view text);
  static RunConfig from_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::filesystem::path out() const;

  std::string get_string(const std::string& key) const;
  std::optional<std::string> get_optional(const std::string& key) const;
  /// Non-negative integer no smaller than `min`.
  std::size_t get_count(const std::string& key, std::size_t min = 0) const;
  std::uint64_t get_u64(const std::string& key) const;
  /// Real number strictly greater than `lower_exclusive` when given.
  double get_real(const std::string& key, std::optional<double> lower_exclusive = std::nullopt) const;
  /// Path with "{out}" expanded.
  std::filesystem::path get_path(const std::string& key) const;
  std::optional<std::filesystem::path> get_optional_path(const std::string& key) const;

  /// Resolved values of every key read so far, excluding `out`.
  const std::map<std::string, std::string>& used() const noexcept { return used_; }
  void clear_used() noexcept { used_.clear(); }

 private:
  const KeySpec& spec(const std::string& key) const;
  std::optional<std::string> raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> used_;
};

}  // namespace v2c::cli
