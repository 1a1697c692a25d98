#pragma once

// Flat `key = value` configuration. Sections are dotted key prefixes, `#`
// starts a comment. Only registered keys are accepted.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace sage3d {

class Config {
 public:
  // Every key the tools understand, with its default.
  static Config defaults();

  void set(const std::string& key, const std::string& value);
  // "key=value" as given on the command line.
  void apply_override(const std::string& assignment);
  void merge_text(const std::string& text, const std::string& source);
  void merge_file(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_real(const std::string& key) const;
  std::size_t get_count(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_counts(const std::string& key) const;

  std::vector<std::string> keys() const;
  // Effective configuration in file syntax, keys in registration order.
  std::string dump() const;

 private:
  void declare(std::string key, std::string value);
  std::size_t slot(const std::string& key) const;

  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace sage3d
