#include <skyloc/config.hpp>

#include <skyloc/error.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace skyloc {

namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::Parse(std::istream& in, const std::string& source) {
  Config config;
  config.source_ = source;
  std::string section;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = Trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_number) + ": ";
    if (line.front() == '[') {
      Require(line.back() == ']' && line.size() > 2, ErrorKind::kConfig, where + "malformed section header");
      section = Trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    Require(eq != std::string::npos, ErrorKind::kConfig, where + "expected 'key = value'");
    const std::string key = Trim(line.substr(0, eq));
    Require(!key.empty(), ErrorKind::kConfig, where + "empty key");
    Require(!config.Has(section, key), ErrorKind::kConfig, where + "duplicate key '" + key + "'");
    config.sections_[section][key] = Trim(line.substr(eq + 1));
  }
  return config;
}

Config Config::Load(const std::string& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorKind::kConfig, "cannot open config file " + path);
  return Parse(in, path);
}

bool Config::Has(const std::string& section, const std::string& key) const { return Raw(section, key).has_value(); }

std::optional<std::string> Config::Raw(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

void Config::Set(const std::string& section, const std::string& key, const std::string& value) {
  sections_[section][key] = value;
}

std::string Config::GetString(const std::string& section, const std::string& key,
                              const std::string& fallback) const {
  return Raw(section, key).value_or(fallback);
}

namespace {

[[noreturn]] void BadValue(const std::string& section, const std::string& key, const std::string& value,
                           const std::string& expected) {
  Fail(ErrorKind::kConfig, "[" + section + "] " + key + " = '" + value + "' is not " + expected);
}

}  // namespace

double Config::GetDouble(const std::string& section, const std::string& key, double fallback) const {
  const auto raw = Raw(section, key);
  if (!raw) return fallback;
  try {
    size_t used = 0;
    const double v = std::stod(*raw, &used);
    if (used == raw->size()) return v;
  } catch (const std::exception&) {
  }
  BadValue(section, key, *raw, "a number");
}

int Config::GetInt(const std::string& section, const std::string& key, int fallback) const {
  const auto raw = Raw(section, key);
  if (!raw) return fallback;
  try {
    size_t used = 0;
    const int v = std::stoi(*raw, &used);
    if (used == raw->size()) return v;
  } catch (const std::exception&) {
  }
  BadValue(section, key, *raw, "an integer");
}

std::uint64_t Config::GetU64(const std::string& section, const std::string& key, std::uint64_t fallback) const {
  const auto raw = Raw(section, key);
  if (!raw) return fallback;
  try {
    size_t used = 0;
    if (!raw->empty() && (*raw)[0] != '-') {
      const auto v = std::stoull(*raw, &used);
      if (used == raw->size()) return v;
    }
  } catch (const std::exception&) {
  }
  BadValue(section, key, *raw, "an unsigned integer");
}

bool Config::GetBool(const std::string& section, const std::string& key, bool fallback) const {
  const auto raw = Raw(section, key);
  if (!raw) return fallback;
  std::string v = *raw;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  BadValue(section, key, *raw, "a boolean");
}

std::vector<double> Config::GetDoubles(const std::string& section, const std::string& key,
                                       const std::vector<double>& fallback) const {
  const auto raw = Raw(section, key);
  if (!raw) return fallback;
  std::string text = *raw;
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream in(text);
  std::vector<double> out;
  std::string token;
  while (in >> token) {
    try {
      size_t used = 0;
      out.push_back(std::stod(token, &used));
      if (used != token.size()) BadValue(section, key, *raw, "a list of numbers");
    } catch (const std::invalid_argument&) {
      BadValue(section, key, *raw, "a list of numbers");
    } catch (const std::out_of_range&) {
      BadValue(section, key, *raw, "a list of numbers");
    }
  }
  return out;
}

void Config::RejectUnknown(const std::set<std::string>& known) const {
  for (const auto& [section, keys] : sections_) {
    for (const auto& [key, _] : keys) {
      const std::string name = section.empty() ? key : section + "." + key;
      Require(known.count(name) > 0, ErrorKind::kConfig,
              (source_.empty() ? std::string() : source_ + ": ") + "unknown key '" + name + "'");
    }
  }
}

std::string Config::ToString() const {
  std::ostringstream out;
  for (const auto& [section, keys] : sections_) {
    if (!section.empty()) out << '[' << section << "]\n";
    for (const auto& [key, value] : keys) out << key << " = " << value << '\n';
  }
  return out.str();
}

}  // namespace skyloc
