#pragma once
/// Minimal TOML-subset reader for run configuration files. Supported syntax:
/// `#` comments, `[section]` / `[section.sub]` headers, `key = value` with
/// bare or dotted keys, and values that are double-quoted strings (with
/// \" \\ \n \t \r escapes), integers (optional sign, `_` separators),
/// floats, booleans, or single-line (possibly nested) arrays. Dates,
/// multi-line strings, and inline tables are not part of the subset and are
/// rejected with a line-numbered error.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sepsisrl::toml {

struct Value {
  enum class Kind { kBool, kInt, kFloat, kString, kArray };

  Kind kind = Kind::kBool;
  bool boolean = false;
  std::int64_t integer = 0;
  double real = 0.0;
  std::string text;
  std::vector<Value> items;

  const char* kind_name() const;
};

/// Flat view of a parsed document: every entry is addressed by its full
/// dotted key (`section.sub.key`).
class Table {
 public:
  Table(std::map<std::string, Value> entries, std::string source)
      : entries_(std::move(entries)), source_(std::move(source)) {}

  bool contains(const std::string& key) const;
  /// Null when the key is absent.
  const Value* find(const std::string& key) const;
  std::vector<std::string> keys() const;
  const std::string& source() const { return source_; }

  /// Typed getters. The `_or` forms return the fallback when the key is
  /// absent; the plain forms require the key. A present key of the wrong
  /// type is always an error. Integers coerce to doubles, never the reverse.
  std::string get_string(const std::string& key) const;
  std::string get_string_or(const std::string& key, std::string fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  std::vector<std::int64_t> get_int_array(const std::string& key) const;
  std::vector<double> get_double_array(const std::string& key) const;
  std::vector<std::string> get_string_array(const std::string& key) const;

 private:
  const Value& require(const std::string& key) const;

  std::map<std::string, Value> entries_;
  std::string source_;
};

/// Parses a document; `source_name` labels error messages (e.g. a filename).
Table parse(const std::string& text, const std::string& source_name = "<string>");

/// Reads and parses a file; missing or unreadable files raise IoError.
Table parse_file(const std::string& path);

}  // namespace sepsisrl::toml
