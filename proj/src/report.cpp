#include "report.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "error.hpp"
#include "json.hpp"
#include "text.hpp"

namespace diglot {

std::string format_score(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", value);
    return buf;
}

double macro_average(const std::vector<EvalRow>& rows, Dimension dimension) {
    std::map<std::pair<std::string, std::string>, std::pair<double, int64_t>> cells;
    for (const auto& row : rows) {
        const auto& value = dimension == Dimension::diglossia ? row.diglossia : row.fidelity;
        if (!value) continue;
        auto& cell = cells[{row.variety, row.dataset_id}];
        cell.first += *value;
        cell.second += 1;
    }
    if (cells.empty()) fail(ErrorKind::invalid_argument, "macro_average: no rows carry the requested dimension");
    double sum = 0.0;
    for (const auto& [key, cell] : cells) sum += cell.first / static_cast<double>(cell.second);
    return sum / static_cast<double>(cells.size());
}

namespace {

const char* kHeader = "model_id,checkpoint,dataset_id,variety,direction,top_p,temperature,diglossia,fidelity,prefix_kept_rate";

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::optional<double> parse_optional(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
}

}  // namespace

void write_report_csv(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write report: " + path);
    out << kHeader << "\n";
    for (const auto& row : rows) {
        out << csv_field(row.model_id) << "," << csv_field(row.checkpoint) << "," << csv_field(row.dataset_id) << ","
            << csv_field(row.variety) << "," << csv_field(row.direction) << "," << format_score(row.top_p) << ","
            << format_score(row.temperature) << "," << (row.diglossia ? format_score(*row.diglossia) : "") << ","
            << (row.fidelity ? format_score(*row.fidelity) : "") << ","
            << (row.prefix_kept_rate ? format_score(*row.prefix_kept_rate) : "") << "\n";
    }
}

std::vector<EvalRow> read_report_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open report: " + path);
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::parse, "report '" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kHeader) fail(ErrorKind::parse, "report '" + path + "': unexpected header");
    std::vector<EvalRow> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 10)
            fail(ErrorKind::parse, "report '" + path + "' line " + std::to_string(lineno) + ": expected 10 fields");
        EvalRow row;
        row.model_id = fields[0];
        row.checkpoint = fields[1];
        row.dataset_id = fields[2];
        row.variety = fields[3];
        row.direction = fields[4];
        row.top_p = std::stod(fields[5]);
        row.temperature = std::stod(fields[6]);
        row.diglossia = parse_optional(fields[7]);
        row.fidelity = parse_optional(fields[8]);
        row.prefix_kept_rate = parse_optional(fields[9]);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_report_jsonl(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write report: " + path);
    for (const auto& row : rows) {
        nlohmann::json obj{{"model_id", row.model_id},   {"checkpoint", row.checkpoint},
                           {"dataset_id", row.dataset_id}, {"variety", row.variety},
                           {"direction", row.direction},   {"top_p", row.top_p},
                           {"temperature", row.temperature}};
        if (row.diglossia) obj["diglossia"] = *row.diglossia;
        if (row.fidelity) obj["fidelity"] = *row.fidelity;
        if (row.prefix_kept_rate) obj["prefix_kept_rate"] = *row.prefix_kept_rate;
        out << obj.dump() << "\n";
    }
}

}  // namespace diglot
