#pragma once

#include <filesystem>
#include <initializer_list>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace adrn {

/// Bad user-supplied parameter (out-of-range value, missing key, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Flat `key = value` text config. `#` starts a comment; keys are unique.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  [[nodiscard]] bool has(const std::string& key) const { return entries_.contains(key); }
  [[nodiscard]] const std::string& get(const std::string& key) const;
  [[nodiscard]] std::string get_or(const std::string& key, const std::string& fallback) const;

  [[nodiscard]] long get_int(const std::string& key) const;
  [[nodiscard]] long get_int_or(const std::string& key, long fallback) const;
  [[nodiscard]] double get_real(const std::string& key) const;
  [[nodiscard]] double get_real_or(const std::string& key, double fallback) const;
  [[nodiscard]] bool get_bool_or(const std::string& key, bool fallback) const;
  [[nodiscard]] std::vector<double> get_reals(const std::string& key) const;
  [[nodiscard]] std::vector<long> get_ints(const std::string& key) const;

  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

  /// Throws ParameterError for a key under `prefix` whose remainder is not in
  /// `known` and does not start with one of `nested` (checked elsewhere).
  void reject_unknown(const std::string& prefix, std::initializer_list<std::string_view> known,
                      std::initializer_list<std::string_view> nested = {}) const;
  /// Keys in sorted order, one `key = value` per line.
  [[nodiscard]] std::string dump() const;

  [[nodiscard]] const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
  std::string origin_;
};

std::vector<std::string> split_list(const std::string& text, char sep = ',');
std::string trim(const std::string& text);

}  // namespace adrn
