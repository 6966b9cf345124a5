#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace unig::cli {

/// Flat `key = value` configuration. Every key must appear in the defaults
/// table; values are kept as text and converted on access.
class Config {
 public:
  // Built-in defaults for every recognised key.
  static Config defaults();

  // Overlays `key = value` lines (`#` starts a comment). `origin` names the
  // source in error messages.
  void merge_text(std::string_view text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  // Throws ConfigError for an unknown key.
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // nonnegative integer
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::uint64_t> counts(const std::string& key) const;

  // Sorted `key = value` lines; merging it into defaults reproduces *this.
  std::string resolved() const;
  // Stable 64-bit FNV-1a hash of resolved().
  std::uint64_t fingerprint() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Parses "--a.b=value" / "--a.b value" pairs left over by the flag parser.
void apply_dotted_flags(Config& cfg, const std::vector<std::string>& args);

}  // namespace unig::cli
