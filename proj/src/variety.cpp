#include "variety.hpp"

#include <fstream>

#include "error.hpp"
#include "json.hpp"

namespace diglot {

std::string to_string(VarietyKind kind) {
    switch (kind) {
        case VarietyKind::standard: return "standard";
        case VarietyKind::dialect: return "dialect";
        case VarietyKind::foreign: return "foreign";
    }
    return "?";
}

VarietyKind variety_kind_from_string(std::string_view s) {
    if (s == "standard") return VarietyKind::standard;
    if (s == "dialect") return VarietyKind::dialect;
    if (s == "foreign") return VarietyKind::foreign;
    fail(ErrorKind::parse, "unknown variety kind: '" + std::string(s) + "'");
}

void VarietyRegistry::add(Variety v) {
    if (v.code.empty()) fail(ErrorKind::invalid_argument, "variety code must be non-empty");
    if (find(v.code)) fail(ErrorKind::invalid_argument, "duplicate variety code: '" + v.code + "'");
    if (v.kind == VarietyKind::standard) {
        for (const auto& it : items_)
            if (it.kind == VarietyKind::standard)
                fail(ErrorKind::invalid_argument, "registry already has a standard variety ('" + it.code + "')");
    }
    items_.push_back(std::move(v));
}

const Variety* VarietyRegistry::find(std::string_view code) const {
    for (const auto& v : items_)
        if (v.code == code) return &v;
    return nullptr;
}

const Variety& VarietyRegistry::at(std::string_view code) const {
    const Variety* v = find(code);
    if (!v) fail(ErrorKind::invalid_argument, "unknown variety code: '" + std::string(code) + "'");
    return *v;
}

const Variety& VarietyRegistry::standard() const {
    for (const auto& v : items_)
        if (v.kind == VarietyKind::standard) return v;
    fail(ErrorKind::invalid_argument, "registry has no standard variety");
}

std::vector<const Variety*> VarietyRegistry::dialects() const {
    std::vector<const Variety*> out;
    for (const auto& v : items_)
        if (v.kind == VarietyKind::dialect) out.push_back(&v);
    return out;
}

VarietyRegistry VarietyRegistry::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open variety manifest: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::parse, "variety manifest '" + path + "': " + e.what());
    }
    if (!doc.is_array()) fail(ErrorKind::parse, "variety manifest must be a JSON array");
    VarietyRegistry reg;
    for (const auto& item : doc) {
        Variety v;
        v.code = item.at("code").get<std::string>();
        v.display_name = item.at("display_name").get<std::string>();
        v.kind = variety_kind_from_string(item.at("kind").get<std::string>());
        v.gen_instruction = item.value("gen_instruction", "");
        v.gen_preamble = item.value("gen_preamble", "");
        reg.add(std::move(v));
    }
    return reg;
}

void VarietyRegistry::save(const std::string& path) const {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& v : items_) {
        nlohmann::json item{{"code", v.code}, {"display_name", v.display_name}, {"kind", to_string(v.kind)}};
        if (!v.gen_instruction.empty()) item["gen_instruction"] = v.gen_instruction;
        if (!v.gen_preamble.empty()) item["gen_preamble"] = v.gen_preamble;
        doc.push_back(std::move(item));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write variety manifest: " + path);
    out << doc.dump(2) << "\n";
}

}  // namespace diglot
