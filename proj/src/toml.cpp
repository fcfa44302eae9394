#include "mds/toml.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "mds/error.hpp"

namespace mds {

namespace {

class Parser {
 public:
  explicit Parser(const std::string& text) : s_(text) {}

  nlohmann::json run() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (true) {
      skip_ws_and_comments(true);
      if (eof()) break;
      if (peek() == '[') {
        ++i_;
        skip_inline_ws();
        auto path = parse_key_path();
        skip_inline_ws();
        expect(']');
        std::string joined;
        for (const auto& part : path) joined += (joined.empty() ? "" : ".") + part;
        if (!headers_.insert(joined).second) fail("table [" + joined + "] defined twice");
        table = &root;
        for (const auto& part : path) {
          auto& next = (*table)[part];
          if (next.is_null()) next = nlohmann::json::object();
          if (!next.is_object()) fail("'" + part + "' is not a table");
          table = &next;
        }
      } else {
        auto path = parse_key_path();
        skip_inline_ws();
        expect('=');
        skip_inline_ws();
        nlohmann::json* target = table;
        for (std::size_t k = 0; k + 1 < path.size(); ++k) {
          auto& next = (*target)[path[k]];
          if (next.is_null()) next = nlohmann::json::object();
          target = &next;
        }
        if (target->contains(path.back())) fail("duplicate key '" + path.back() + "'");
        (*target)[path.back()] = parse_value();
      }
      skip_inline_ws();
      if (!eof() && peek() == '#') skip_comment();
      if (!eof() && peek() != '\n' && peek() != '\r') fail("trailing characters");
    }
    return root;
  }

 private:
  const std::string& s_;
  std::size_t i_ = 0;
  std::set<std::string> headers_;
  std::size_t line_ = 1;

  bool eof() const { return i_ >= s_.size(); }
  char peek() const { return s_[i_]; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("toml line " + std::to_string(line_) + ": " + msg);
  }

  void expect(char c) {
    if (eof() || peek() != c) fail(std::string("expected '") + c + "'");
    ++i_;
  }

  void skip_comment() {
    while (!eof() && peek() != '\n') ++i_;
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++i_;
  }

  void skip_ws_and_comments(bool newlines) {
    while (!eof()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r') {
        ++i_;
      } else if (c == '\n' && newlines) {
        ++line_;
        ++i_;
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  std::string parse_key() {
    if (!eof() && peek() == '"') return parse_string();
    std::size_t start = i_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++i_;
    if (start == i_) fail("expected a key");
    return s_.substr(start, i_ - start);
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> out{parse_key()};
    skip_inline_ws();
    while (!eof() && peek() == '.') {
      ++i_;
      skip_inline_ws();
      out.push_back(parse_key());
      skip_inline_ws();
    }
    return out;
  }

  std::string parse_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = s_[i_++];
      if (c == '"') break;
      if (c == '\\') {
        if (eof()) fail("unterminated escape");
        char e = s_[i_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '\\': out += '\\'; break;
          case '"': out += '"'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  nlohmann::json parse_value() {
    if (eof()) fail("missing value");
    char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    if (s_.compare(i_, 4, "true") == 0) {
      i_ += 4;
      return true;
    }
    if (s_.compare(i_, 5, "false") == 0) {
      i_ += 5;
      return false;
    }
    return parse_number();
  }

  nlohmann::json parse_array() {
    expect('[');
    nlohmann::json arr = nlohmann::json::array();
    while (true) {
      skip_ws_and_comments(true);
      if (eof()) fail("unterminated array");
      if (peek() == ']') {
        ++i_;
        break;
      }
      arr.push_back(parse_value());
      skip_ws_and_comments(true);
      if (!eof() && peek() == ',') {
        ++i_;
      } else if (!eof() && peek() != ']') {
        fail("expected ',' or ']' in array");
      }
    }
    return arr;
  }

  nlohmann::json parse_number() {
    std::size_t start = i_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                      peek() == '.' || peek() == '_')) {
      ++i_;
    }
    std::string tok;
    for (std::size_t k = start; k < i_; ++k) {
      if (s_[k] != '_') tok += s_[k];
    }
    if (tok.empty()) fail("expected a value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan";
    char* end = nullptr;
    if (is_float) {
      double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size()) fail("malformed float '" + tok + "'");
      return v;
    }
    long long v = std::strtoll(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size()) fail("malformed value '" + tok + "'");
    return v;
  }
};

}  // namespace

nlohmann::json parse_toml(const std::string& text) { return Parser(text).run(); }

nlohmann::json load_toml(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

}  // namespace mds
