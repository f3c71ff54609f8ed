#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace diglot {

enum class VarietyKind { standard, dialect, foreign };

std::string to_string(VarietyKind kind);
VarietyKind variety_kind_from_string(std::string_view s);

// One language variety. The optional gen_* fields carry the dialectal
// instruction template (with a literal <PREFIX> slot) and the completion
// preamble used when generation instructions are written in the dialect
// itself rather than in English.
struct Variety {
    std::string code;
    std::string display_name;
    VarietyKind kind = VarietyKind::dialect;
    std::string gen_instruction;  // optional
    std::string gen_preamble;     // optional
};

class VarietyRegistry {
public:
    VarietyRegistry() = default;

    // Codes must be unique; at most one variety may be the standard.
    void add(Variety v);

    const Variety* find(std::string_view code) const;
    const Variety& at(std::string_view code) const;  // throws on unknown code
    const Variety& standard() const;                 // throws when absent
    std::vector<const Variety*> dialects() const;

    const std::vector<Variety>& all() const { return items_; }
    size_t size() const { return items_.size(); }

    // Manifest file: a JSON array of {code, display_name, kind[, gen_instruction, gen_preamble]}.
    static VarietyRegistry load(const std::string& path);
    void save(const std::string& path) const;

private:
    std::vector<Variety> items_;
};

}  // namespace diglot
