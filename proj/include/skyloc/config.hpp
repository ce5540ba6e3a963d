#pragma once

// `key = value` text configuration with `[section]` headers. Keys before the
// first header live in the "" section. '#' and ';' start comments.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace skyloc {

class Config {
 public:
  // Throws kConfig naming `source` and the line on malformed input.
  static Config Parse(std::istream& in, const std::string& source);
  static Config Load(const std::string& path);

  bool Has(const std::string& section, const std::string& key) const;
  std::optional<std::string> Raw(const std::string& section, const std::string& key) const;
  void Set(const std::string& section, const std::string& key, const std::string& value);

  // Typed getters throw kConfig when a present value does not parse.
  std::string GetString(const std::string& section, const std::string& key, const std::string& fallback) const;
  double GetDouble(const std::string& section, const std::string& key, double fallback) const;
  int GetInt(const std::string& section, const std::string& key, int fallback) const;
  std::uint64_t GetU64(const std::string& section, const std::string& key, std::uint64_t fallback) const;
  bool GetBool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> GetDoubles(const std::string& section, const std::string& key,
                                 const std::vector<double>& fallback) const;

  // Throws kConfig for any key not in `known` ("section.key").
  void RejectUnknown(const std::set<std::string>& known) const;

  // Canonical text form, sections and keys sorted.
  std::string ToString() const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::string source_;
};

}  // namespace skyloc
