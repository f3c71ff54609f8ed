#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace diglot::toml {

// Minimal TOML reader covering what the config files here use: [table] and
// [dotted.table] headers, bare keys, strings, integers, floats, booleans,
// one-line arrays, and # comments. Dates, inline tables and multi-line
// strings are not supported.
class Value;
using Array = std::vector<Value>;

class Value {
public:
    Value() : v_(std::monostate{}) {}
    explicit Value(bool b) : v_(b) {}
    explicit Value(int64_t i) : v_(i) {}
    explicit Value(double d) : v_(d) {}
    explicit Value(std::string s) : v_(std::move(s)) {}
    explicit Value(Array a) : v_(std::move(a)) {}

    bool is_bool() const { return std::holds_alternative<bool>(v_); }
    bool is_int() const { return std::holds_alternative<int64_t>(v_); }
    bool is_double() const { return std::holds_alternative<double>(v_); }
    bool is_string() const { return std::holds_alternative<std::string>(v_); }
    bool is_array() const { return std::holds_alternative<Array>(v_); }

    bool as_bool() const;
    int64_t as_int() const;
    double as_double() const;  // accepts ints
    const std::string& as_string() const;
    const Array& as_array() const;

private:
    std::variant<std::monostate, bool, int64_t, double, std::string, Array> v_;
};

class Table {
public:
    // Dotted lookup, e.g. "train.learning_rate".
    bool contains(const std::string& dotted_key) const;
    const Value& at(const std::string& dotted_key) const;

    bool get_bool(const std::string& key, bool fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::vector<double> get_double_array(const std::string& key, std::vector<double> fallback) const;
    std::vector<std::string> get_string_array(const std::string& key, std::vector<std::string> fallback) const;

    void set(const std::string& dotted_key, Value v);
    const std::map<std::string, Value>& entries() const { return entries_; }

private:
    std::map<std::string, Value> entries_;  // flattened dotted keys
};

Table parse(const std::string& text);
Table parse_file(const std::string& path);

}  // namespace diglot::toml
