#include "toml.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "error.hpp"
#include "text.hpp"

namespace diglot::toml {

bool Value::as_bool() const {
    if (!is_bool()) fail(ErrorKind::parse, "toml: value is not a boolean");
    return std::get<bool>(v_);
}

int64_t Value::as_int() const {
    if (!is_int()) fail(ErrorKind::parse, "toml: value is not an integer");
    return std::get<int64_t>(v_);
}

double Value::as_double() const {
    if (is_int()) return static_cast<double>(std::get<int64_t>(v_));
    if (!is_double()) fail(ErrorKind::parse, "toml: value is not a number");
    return std::get<double>(v_);
}

const std::string& Value::as_string() const {
    if (!is_string()) fail(ErrorKind::parse, "toml: value is not a string");
    return std::get<std::string>(v_);
}

const Array& Value::as_array() const {
    if (!is_array()) fail(ErrorKind::parse, "toml: value is not an array");
    return std::get<Array>(v_);
}

bool Table::contains(const std::string& key) const { return entries_.count(key) != 0; }

const Value& Table::at(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) fail(ErrorKind::parse, "toml: missing key '" + key + "'");
    return it->second;
}

bool Table::get_bool(const std::string& key, bool fallback) const {
    return contains(key) ? at(key).as_bool() : fallback;
}
int64_t Table::get_int(const std::string& key, int64_t fallback) const {
    return contains(key) ? at(key).as_int() : fallback;
}
double Table::get_double(const std::string& key, double fallback) const {
    return contains(key) ? at(key).as_double() : fallback;
}
std::string Table::get_string(const std::string& key, const std::string& fallback) const {
    return contains(key) ? at(key).as_string() : fallback;
}
std::vector<double> Table::get_double_array(const std::string& key, std::vector<double> fallback) const {
    if (!contains(key)) return fallback;
    std::vector<double> out;
    for (const auto& v : at(key).as_array()) out.push_back(v.as_double());
    return out;
}
std::vector<std::string> Table::get_string_array(const std::string& key, std::vector<std::string> fallback) const {
    if (!contains(key)) return fallback;
    std::vector<std::string> out;
    for (const auto& v : at(key).as_array()) out.push_back(v.as_string());
    return out;
}

void Table::set(const std::string& key, Value v) { entries_[key] = std::move(v); }

namespace {

struct Cursor {
    std::string_view s;
    size_t i = 0;
    int line = 1;

    bool done() const { return i >= s.size(); }
    char peek() const { return s[i]; }
    void skip_spaces() {
        while (!done() && (s[i] == ' ' || s[i] == '\t')) ++i;
    }
};

[[noreturn]] void parse_fail(const Cursor& c, const std::string& msg) {
    fail(ErrorKind::parse, "toml line " + std::to_string(c.line) + ": " + msg);
}

std::string parse_basic_string(Cursor& c) {
    ++c.i;  // opening quote
    std::string out;
    while (!c.done() && c.peek() != '"') {
        char ch = c.s[c.i++];
        if (ch == '\\') {
            if (c.done()) parse_fail(c, "unterminated escape");
            char e = c.s[c.i++];
            switch (e) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case 'r': out += '\r'; break;
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                default: parse_fail(c, std::string("unsupported escape \\") + e);
            }
        } else if (ch == '\n') {
            parse_fail(c, "newline in string");
        } else {
            out += ch;
        }
    }
    if (c.done()) parse_fail(c, "unterminated string");
    ++c.i;  // closing quote
    return out;
}

Value parse_scalar(Cursor& c);

Value parse_array(Cursor& c) {
    ++c.i;  // '['
    Array arr;
    while (true) {
        c.skip_spaces();
        if (c.done()) parse_fail(c, "unterminated array");
        if (c.peek() == ']') {
            ++c.i;
            break;
        }
        arr.push_back(parse_scalar(c));
        c.skip_spaces();
        if (!c.done() && c.peek() == ',') {
            ++c.i;
            continue;
        }
        if (!c.done() && c.peek() == ']') {
            ++c.i;
            break;
        }
        parse_fail(c, "expected ',' or ']' in array");
    }
    return Value(std::move(arr));
}

Value parse_scalar(Cursor& c) {
    c.skip_spaces();
    if (c.done()) parse_fail(c, "expected a value");
    char ch = c.peek();
    if (ch == '"') return Value(parse_basic_string(c));
    if (ch == '[') return parse_array(c);

    size_t start = c.i;
    while (!c.done() && c.peek() != ',' && c.peek() != ']' && c.peek() != '#' && c.peek() != '\n') ++c.i;
    std::string tok = trim(c.s.substr(start, c.i - start));
    if (tok == "true") return Value(true);
    if (tok == "false") return Value(false);
    if (tok.empty()) parse_fail(c, "empty value");

    bool looks_float = tok.find_first_of(".eE") != std::string::npos &&
                       tok.find_first_not_of("+-0123456789.eE") == std::string::npos;
    if (!looks_float) {
        int64_t iv = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
        if (ec == std::errc() && p == tok.data() + tok.size()) return Value(iv);
    }
    try {
        size_t used = 0;
        double dv = std::stod(tok, &used);
        if (used == tok.size()) return Value(dv);
    } catch (const std::exception&) {
    }
    parse_fail(c, "cannot parse value '" + tok + "'");
}

}  // namespace

Table parse(const std::string& text) {
    Table table;
    Cursor c{text};
    std::string prefix;
    while (!c.done()) {
        c.skip_spaces();
        if (c.done()) break;
        char ch = c.peek();
        if (ch == '\n') {
            ++c.i;
            ++c.line;
            continue;
        }
        if (ch == '#') {
            while (!c.done() && c.peek() != '\n') ++c.i;
            continue;
        }
        if (ch == '[') {
            size_t end = c.s.find(']', c.i);
            if (end == std::string_view::npos) parse_fail(c, "unterminated table header");
            prefix = trim(c.s.substr(c.i + 1, end - c.i - 1));
            if (prefix.empty()) parse_fail(c, "empty table header");
            c.i = end + 1;
            continue;
        }
        // key = value
        size_t eq = c.s.find('=', c.i);
        size_t eol = c.s.find('\n', c.i);
        if (eq == std::string_view::npos || (eol != std::string_view::npos && eq > eol))
            parse_fail(c, "expected 'key = value'");
        std::string key = trim(c.s.substr(c.i, eq - c.i));
        if (key.empty()) parse_fail(c, "empty key");
        c.i = eq + 1;
        Value v = parse_scalar(c);
        c.skip_spaces();
        if (!c.done() && c.peek() == '#') {
            while (!c.done() && c.peek() != '\n') ++c.i;
        }
        if (!c.done() && c.peek() != '\n') parse_fail(c, "trailing characters after value");
        table.set(prefix.empty() ? key : prefix + "." + key, std::move(v));
    }
    return table;
}

Table parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

}  // namespace diglot::toml
