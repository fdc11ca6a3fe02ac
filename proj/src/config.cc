#include "densesfm/config.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "densesfm/common.h"
#include "densesfm/io_util.h"

namespace densesfm {

namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T ParseNumber(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    Fail(ErrorCode::kConfigInvalid, "bad value for '" + key + "': '" + text + "'");
  }
  return value;
}

}  // namespace

KeyValues KeyValues::Parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      Fail(ErrorCode::kConfigInvalid, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = Trim(line.substr(0, eq));
    if (key.empty()) Fail(ErrorCode::kConfigInvalid, "line " + std::to_string(lineno) + ": empty key");
    kv.values_[key] = Trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return Parse(buf.str());
}

void KeyValues::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path.string());
  out << ToText();
  if (!out) Fail(ErrorCode::kIo, "write failed for " + path.string());
}

std::string KeyValues::ToText() const {
  std::string text;
  for (const auto& [k, v] : values_) text += k + " = " + v + "\n";
  return text;
}

void KeyValues::Set(const std::string& key, double value) { values_[key] = FormatDouble(value); }
void KeyValues::Set(const std::string& key, std::int64_t value) { values_[key] = std::to_string(value); }

void KeyValues::Merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KeyValues::GetString(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValues::GetDouble(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : ParseNumber<double>(key, it->second);
}

std::int64_t KeyValues::GetInt(const std::string& key, std::int64_t fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : ParseNumber<std::int64_t>(key, it->second);
}

std::uint64_t KeyValues::GetU64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : ParseNumber<std::uint64_t>(key, it->second);
}

bool KeyValues::GetBool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  Fail(ErrorCode::kConfigInvalid, "bad boolean for '" + key + "': '" + v + "'");
}

void KeyValues::RequireKnown(const std::set<std::string>& known) const {
  for (const auto& [k, v] : values_) {
    if (!known.count(k)) Fail(ErrorCode::kConfigInvalid, "unknown config key '" + k + "'");
  }
}

}  // namespace densesfm
