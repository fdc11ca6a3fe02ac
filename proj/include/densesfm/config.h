#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace densesfm {

// Flat "key = value" text; '#' starts a comment. Later keys override earlier.
class KeyValues {
 public:
  static KeyValues Parse(const std::string& text);
  static KeyValues Load(const std::filesystem::path& path);
  void Save(const std::filesystem::path& path) const;
  std::string ToText() const;

  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  void Set(const std::string& key, const std::string& value) { values_[key] = value; }
  void Set(const std::string& key, double value);
  void Set(const std::string& key, std::int64_t value);
  void Set(const std::string& key, int value) { Set(key, static_cast<std::int64_t>(value)); }
  void Set(const std::string& key, bool value) { Set(key, std::string(value ? "true" : "false")); }
  void Merge(const KeyValues& other);

  // Typed getters throw kConfigInvalid on malformed values.
  std::string GetString(const std::string& key, const std::string& fallback) const;
  double GetDouble(const std::string& key, double fallback) const;
  std::int64_t GetInt(const std::string& key, std::int64_t fallback) const;
  std::uint64_t GetU64(const std::string& key, std::uint64_t fallback) const;
  bool GetBool(const std::string& key, bool fallback) const;

  // Throws kConfigInvalid naming the first key not in `known`.
  void RequireKnown(const std::set<std::string>& known) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace densesfm
