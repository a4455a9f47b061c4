#ifndef GSNTK_EXP_CONFIG_HPP
#define GSNTK_EXP_CONFIG_HPP

// Experiment config files: JSON objects with nested sections. Syntax errors
// report line:column, semantic errors report the field path (/section/key).
// Every key must be consumed; unknown keys are errors, not silently ignored.

#include "../linop.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace gsntk {

using Json = nlohmann::ordered_json;

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline Json parse_config(const std::string& text, const std::string& source = "<config>") {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    // Byte offset -> line:column.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (auto p = msg.find("parse error"); p != std::string::npos) msg = msg.substr(p);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
}

inline Json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

/// Typed, path-aware reader over one JSON object. Call finish() once all
/// fields are read to reject unknown keys.
class Section {
 public:
  explicit Section(const Json& j, std::string path = "") : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config field " + where() + ": expected an object, got " + j_.type_name());
  }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return fallback;
    return convert<T>(*it, path_ + "/" + key);
  }

  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError("config field " + path_ + "/" + key + ": required field is missing");
    return convert<T>(*it, path_ + "/" + key);
  }

  /// Nested section; a missing key reads as an empty object.
  Section sub(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    static const Json empty = Json::object();
    return Section(it == j_.end() ? empty : *it, path_ + "/" + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("config field " + path_ + "/" + it.key() + ": unknown key");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError("config field " + path_ + "/" + key + ": " + why);
  }

 private:
  std::string where() const { return path_.empty() ? "/" : path_; }

  template <class T>
  static T convert(const Json& v, const std::string& path) {
    auto bad = [&](const char* want) {
      return ConfigError("config field " + path + ": expected " + want + ", got " + v.type_name() +
                         (v.is_primitive() ? " " + v.dump() : ""));
    };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw bad("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw bad("a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw bad("a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, Index> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer()) throw bad("an integer");
      if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw bad("a non-negative integer");
      }
      return v.get<T>();
    } else {
      // std::vector<U>
      using U = typename T::value_type;
      if (!v.is_array()) throw bad("an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<U>(v[i], path + "/" + std::to_string(i)));
      return out;
    }
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

/// FNV-1a over the canonical dump; stable across platforms and runs.
inline std::string config_hash(const Json& j) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace gsntk

#endif  // GSNTK_EXP_CONFIG_HPP
