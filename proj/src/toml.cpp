#include "sepsisrl/toml.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "sepsisrl/errors.hpp"

namespace sepsisrl::toml {
namespace {

struct Cursor {
  const std::string& line;
  std::size_t pos = 0;
  const std::string& source;
  std::size_t line_no;

  [[noreturn]] void fail(const std::string& message) const {
    throw ConfigError(source + ":" + std::to_string(line_no) + ": " + message);
  }
  bool done() const { return pos >= line.size(); }
  char peek() const { return line[pos]; }
  void skip_ws() {
    while (!done() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
  }
};

bool is_bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

std::string parse_key(Cursor& cur) {
  std::string key;
  while (true) {
    std::string part;
    while (!cur.done() && is_bare_key_char(cur.peek())) {
      part += cur.peek();
      ++cur.pos;
    }
    if (part.empty()) cur.fail("expected a bare key");
    key += part;
    cur.skip_ws();
    if (!cur.done() && cur.peek() == '.') {
      ++cur.pos;
      cur.skip_ws();
      key += '.';
      continue;
    }
    return key;
  }
}

std::string parse_quoted_string(Cursor& cur) {
  ++cur.pos;  // opening quote
  std::string out;
  while (true) {
    if (cur.done()) cur.fail("unterminated string");
    const char c = cur.line[cur.pos++];
    if (c == '"') return out;
    if (c == '\\') {
      if (cur.done()) cur.fail("dangling escape at end of line");
      const char esc = cur.line[cur.pos++];
      switch (esc) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default:
          cur.fail(std::string("unsupported escape \\") + esc);
      }
    } else {
      out += c;
    }
  }
}

Value parse_value(Cursor& cur);

Value parse_array(Cursor& cur) {
  ++cur.pos;  // opening bracket
  Value v;
  v.kind = Value::Kind::kArray;
  cur.skip_ws();
  if (!cur.done() && cur.peek() == ']') {
    ++cur.pos;
    return v;
  }
  while (true) {
    cur.skip_ws();
    if (cur.done()) cur.fail("unterminated array (arrays must be single-line)");
    v.items.push_back(parse_value(cur));
    cur.skip_ws();
    if (cur.done()) cur.fail("unterminated array (arrays must be single-line)");
    const char c = cur.peek();
    if (c == ',') {
      ++cur.pos;
      cur.skip_ws();
      if (!cur.done() && cur.peek() == ']') {  // trailing comma
        ++cur.pos;
        return v;
      }
      continue;
    }
    if (c == ']') {
      ++cur.pos;
      return v;
    }
    cur.fail(std::string("expected ',' or ']' in array, found '") + c + "'");
  }
}

Value parse_number_or_keyword(Cursor& cur) {
  const std::size_t start = cur.pos;
  while (!cur.done() && cur.peek() != ',' && cur.peek() != ']' &&
         cur.peek() != '#' && cur.peek() != ' ' && cur.peek() != '\t') {
    ++cur.pos;
  }
  std::string token = cur.line.substr(start, cur.pos - start);
  if (token.empty()) cur.fail("expected a value");

  Value v;
  if (token == "true" || token == "false") {
    v.kind = Value::Kind::kBool;
    v.boolean = token == "true";
    return v;
  }

  std::string digits;
  digits.reserve(token.size());
  for (char c : token) {
    if (c != '_') digits += c;
  }
  // std::from_chars rejects an explicit plus sign; strip it here.
  if (!digits.empty() && digits.front() == '+') digits.erase(digits.begin());
  const bool looks_float =
      digits.find('.') != std::string::npos ||
      digits.find('e') != std::string::npos ||
      digits.find('E') != std::string::npos;
  if (!looks_float) {
    std::int64_t value = 0;
    const auto [ptr, ec] =
        std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec == std::errc() && ptr == digits.data() + digits.size()) {
      v.kind = Value::Kind::kInt;
      v.integer = value;
      return v;
    }
  }
  double real = 0.0;
  const auto [ptr, ec] =
      std::from_chars(digits.data(), digits.data() + digits.size(), real);
  if (ec == std::errc() && ptr == digits.data() + digits.size()) {
    v.kind = Value::Kind::kFloat;
    v.real = real;
    return v;
  }
  cur.fail("cannot parse value '" + token +
           "' (dates, inline tables and multi-line strings are not supported)");
}

Value parse_value(Cursor& cur) {
  if (cur.done()) cur.fail("expected a value");
  const char c = cur.peek();
  if (c == '"') {
    Value v;
    v.kind = Value::Kind::kString;
    v.text = parse_quoted_string(cur);
    return v;
  }
  if (c == '\'') cur.fail("single-quoted strings are not supported; use \"...\"");
  if (c == '[') return parse_array(cur);
  if (c == '{') cur.fail("inline tables are not supported");
  return parse_number_or_keyword(cur);
}

/// Comments start at a '#' that is outside any string.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

}  // namespace

const char* Value::kind_name() const {
  switch (kind) {
    case Kind::kBool: return "boolean";
    case Kind::kInt: return "integer";
    case Kind::kFloat: return "float";
    case Kind::kString: return "string";
    case Kind::kArray: return "array";
  }
  return "unknown";
}

bool Table::contains(const std::string& key) const {
  return entries_.count(key) != 0;
}

const Value* Table::find(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> Table::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

const Value& Table::require(const std::string& key) const {
  const Value* v = find(key);
  if (!v) {
    throw ConfigError(source_ + ": missing required key '" + key + "'");
  }
  return *v;
}

namespace {

[[noreturn]] void type_error(const std::string& source, const std::string& key,
                             const Value& v, const char* wanted) {
  throw ConfigError(source + ": key '" + key + "' holds a " +
                    std::string(v.kind_name()) + ", expected " + wanted);
}

double as_double(const std::string& source, const std::string& key,
                 const Value& v) {
  if (v.kind == Value::Kind::kFloat) return v.real;
  if (v.kind == Value::Kind::kInt) return static_cast<double>(v.integer);
  type_error(source, key, v, "a number");
}

}  // namespace

std::string Table::get_string(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kString) type_error(source_, key, v, "a string");
  return v.text;
}

std::string Table::get_string_or(const std::string& key,
                                 std::string fallback) const {
  return contains(key) ? get_string(key) : std::move(fallback);
}

std::int64_t Table::get_int(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kInt) type_error(source_, key, v, "an integer");
  return v.integer;
}

std::int64_t Table::get_int_or(const std::string& key,
                               std::int64_t fallback) const {
  return contains(key) ? get_int(key) : fallback;
}

double Table::get_double(const std::string& key) const {
  return as_double(source_, key, require(key));
}

double Table::get_double_or(const std::string& key, double fallback) const {
  return contains(key) ? get_double(key) : fallback;
}

bool Table::get_bool(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kBool) type_error(source_, key, v, "a boolean");
  return v.boolean;
}

bool Table::get_bool_or(const std::string& key, bool fallback) const {
  return contains(key) ? get_bool(key) : fallback;
}

std::vector<std::int64_t> Table::get_int_array(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kArray) {
    type_error(source_, key, v, "an array of integers");
  }
  std::vector<std::int64_t> out;
  for (const Value& item : v.items) {
    if (item.kind != Value::Kind::kInt) {
      type_error(source_, key, item, "an array of integers");
    }
    out.push_back(item.integer);
  }
  return out;
}

std::vector<double> Table::get_double_array(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kArray) {
    type_error(source_, key, v, "an array of numbers");
  }
  std::vector<double> out;
  for (const Value& item : v.items) out.push_back(as_double(source_, key, item));
  return out;
}

std::vector<std::string> Table::get_string_array(const std::string& key) const {
  const Value& v = require(key);
  if (v.kind != Value::Kind::kArray) {
    type_error(source_, key, v, "an array of strings");
  }
  std::vector<std::string> out;
  for (const Value& item : v.items) {
    if (item.kind != Value::Kind::kString) {
      type_error(source_, key, item, "an array of strings");
    }
    out.push_back(item.text);
  }
  return out;
}

Table parse(const std::string& text, const std::string& source_name) {
  std::map<std::string, Value> entries;
  std::string section;
  std::istringstream stream(text);
  std::string raw_line;
  std::size_t line_no = 0;

  while (std::getline(stream, raw_line)) {
    ++line_no;
    if (!raw_line.empty() && raw_line.back() == '\r') raw_line.pop_back();
    const std::string line = strip_comment(raw_line);
    Cursor cur{line, 0, source_name, line_no};
    cur.skip_ws();
    if (cur.done()) continue;

    if (cur.peek() == '[') {
      ++cur.pos;
      cur.skip_ws();
      if (!cur.done() && cur.peek() == '[') {
        cur.fail("arrays of tables ([[...]]) are not supported");
      }
      section = parse_key(cur);
      cur.skip_ws();
      if (cur.done() || cur.peek() != ']') cur.fail("expected ']'");
      ++cur.pos;
      cur.skip_ws();
      if (!cur.done()) cur.fail("trailing characters after section header");
      continue;
    }

    const std::string key = parse_key(cur);
    cur.skip_ws();
    if (cur.done() || cur.peek() != '=') cur.fail("expected '=' after key");
    ++cur.pos;
    cur.skip_ws();
    Value value = parse_value(cur);
    cur.skip_ws();
    if (!cur.done()) cur.fail("trailing characters after value");

    const std::string full_key = section.empty() ? key : section + "." + key;
    if (entries.count(full_key) != 0) {
      cur.fail("duplicate key '" + full_key + "'");
    }
    entries.emplace(full_key, std::move(value));
  }
  return Table(std::move(entries), source_name);
}

Table parse_file(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw IoError("cannot open config file " + path);
  }
  std::stringstream ss;
  ss << file.rdbuf();
  return parse(ss.str(), path);
}

}  // namespace sepsisrl::toml
