#include "corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "error.hpp"
#include "json.hpp"
#include "rng.hpp"
#include "text.hpp"

namespace diglot {

namespace {

std::string basename_of(const std::string& path) { return std::filesystem::path(path).filename().string(); }

[[noreturn]] void row_fail(const std::string& file, size_t line, const std::string& msg) {
    fail(ErrorKind::parse, file + ": line " + std::to_string(line) + ": " + msg);
}

void check_variety(const VarietyRegistry& registry, const std::string& code, const std::string& file, size_t line) {
    if (!registry.find(code)) row_fail(file, line, "unknown variety code '" + code + "'");
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open corpus file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

nlohmann::json parse_jsonl_row(const std::string& line, const std::string& file, size_t lineno) {
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        row_fail(file, lineno, std::string("invalid JSON: ") + e.what());
    }
}

template <class Example>
void check_unique_ids(const std::vector<Example>& examples) {
    std::set<std::string> seen;
    std::vector<std::string> dups;
    for (const auto& ex : examples)
        if (!seen.insert(ex.id).second) dups.push_back(ex.id);
    if (!dups.empty()) {
        std::sort(dups.begin(), dups.end());
        dups.erase(std::unique(dups.begin(), dups.end()), dups.end());
        fail(ErrorKind::invalid_argument, "duplicate example ids: " + join(dups, ", "));
    }
}

// Largest-remainder apportionment of n into three parts.
std::array<size_t, 3> split_sizes(size_t n, SplitRatios r) {
    if (r.train < 0 || r.dev < 0 || r.test < 0)
        fail(ErrorKind::invalid_argument, "split ratios must be non-negative");
    double total = r.train + r.dev + r.test;
    if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::invalid_argument, "split ratios must sum to 1");
    double exact[3] = {r.train * n, r.dev * n, r.test * n};
    std::array<size_t, 3> sizes{};
    size_t assigned = 0;
    double rema[3];
    for (int i = 0; i < 3; ++i) {
        sizes[i] = static_cast<size_t>(exact[i]);
        rema[i] = exact[i] - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rema[a] > rema[b]; });
    for (size_t k = 0; assigned < n; ++k, ++assigned) sizes[order[k % 3]] += 1;
    return sizes;
}

template <class Example>
DatasetSplit<Example> split_impl(const std::vector<Example>& examples, SplitRatios ratios, uint64_t seed) {
    check_unique_ids(examples);
    auto sizes = split_sizes(examples.size(), ratios);
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(seed, "corpus-split");
    rng.shuffle(order);
    DatasetSplit<Example> out;
    out.seed = seed;
    out.ratios = ratios;
    size_t pos = 0;
    for (size_t i = 0; i < sizes[0]; ++i) out.train.push_back(examples[order[pos++]]);
    for (size_t i = 0; i < sizes[1]; ++i) out.dev.push_back(examples[order[pos++]]);
    for (size_t i = 0; i < sizes[2]; ++i) out.test.push_back(examples[order[pos++]]);
    return out;
}

}  // namespace

CorpusFormat corpus_format_from_string(std::string_view s) {
    if (s == "tsv") return CorpusFormat::tsv;
    if (s == "jsonl") return CorpusFormat::jsonl;
    fail(ErrorKind::invalid_argument, "unknown corpus format: '" + std::string(s) + "'");
}

std::vector<BitextExample> load_bitext(const std::string& path, CorpusFormat format, const VarietyRegistry& registry,
                                       const BitextLoadOptions& options) {
    const std::string file = basename_of(path);
    auto lines = read_lines(path);
    std::vector<BitextExample> out;
    for (size_t i = 0; i < lines.size(); ++i) {
        size_t lineno = i + 1;
        if (format == CorpusFormat::tsv && options.skip_header && i == 0) continue;
        if (lines[i].empty()) continue;
        BitextExample ex;
        if (format == CorpusFormat::tsv) {
            auto fields = split_tabs(lines[i]);
            if (fields.size() < 2) row_fail(file, lineno, "expected >=2 fields");
            if (options.src_variety.empty() || options.tgt_variety.empty())
                fail(ErrorKind::invalid_argument, "TSV bitext requires src/tgt varieties out-of-band");
            ex.src_text = nfc(fields[0]);
            ex.tgt_text = nfc(fields[1]);
            ex.src_variety = options.src_variety;
            ex.tgt_variety = options.tgt_variety;
            ex.id = file + ":" + std::to_string(lineno);
        } else {
            auto row = parse_jsonl_row(lines[i], file, lineno);
            for (const char* key : {"src_text", "tgt_text", "src_variety", "tgt_variety"})
                if (!row.contains(key)) row_fail(file, lineno, std::string("missing key '") + key + "'");
            ex.src_text = nfc(row["src_text"].get<std::string>());
            ex.tgt_text = nfc(row["tgt_text"].get<std::string>());
            ex.src_variety = row["src_variety"].get<std::string>();
            ex.tgt_variety = row["tgt_variety"].get<std::string>();
            ex.id = row.contains("id") ? row["id"].get<std::string>() : file + ":" + std::to_string(lineno);
        }
        if (trim(ex.src_text).empty()) row_fail(file, lineno, "empty source text");
        if (trim(ex.tgt_text).empty()) row_fail(file, lineno, "empty target text");
        check_variety(registry, ex.src_variety, file, lineno);
        check_variety(registry, ex.tgt_variety, file, lineno);
        if (ex.src_variety == ex.tgt_variety) row_fail(file, lineno, "src and tgt variety are both '" + ex.src_variety + "'");
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<MonoExample> load_mono(const std::string& path, CorpusFormat format, const VarietyRegistry& registry,
                                   const MonoLoadOptions& options) {
    const std::string file = basename_of(path);
    auto lines = read_lines(path);
    std::vector<MonoExample> out;
    for (size_t i = 0; i < lines.size(); ++i) {
        size_t lineno = i + 1;
        if (format == CorpusFormat::tsv && options.skip_header && i == 0) continue;
        if (lines[i].empty()) continue;
        MonoExample ex;
        if (format == CorpusFormat::tsv) {
            auto fields = split_tabs(lines[i]);
            if (options.variety.empty())
                fail(ErrorKind::invalid_argument, "TSV mono requires a variety out-of-band");
            ex.text = nfc(fields[0]);
            ex.variety = options.variety;
            ex.id = file + ":" + std::to_string(lineno);
        } else {
            auto row = parse_jsonl_row(lines[i], file, lineno);
            for (const char* key : {"text", "variety"})
                if (!row.contains(key)) row_fail(file, lineno, std::string("missing key '") + key + "'");
            ex.text = nfc(row["text"].get<std::string>());
            ex.variety = row["variety"].get<std::string>();
            ex.id = row.contains("id") ? row["id"].get<std::string>() : file + ":" + std::to_string(lineno);
        }
        if (trim(ex.text).empty()) row_fail(file, lineno, "empty text");
        check_variety(registry, ex.variety, file, lineno);
        VarietyKind kind = registry.at(ex.variety).kind;
        if (kind != VarietyKind::dialect && kind != VarietyKind::standard)
            row_fail(file, lineno, "mono variety '" + ex.variety + "' must be a dialect or the standard");
        out.push_back(std::move(ex));
    }
    return out;
}

void save_bitext(const std::string& path, const std::vector<BitextExample>& examples, CorpusFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write corpus file: " + path);
    for (const auto& ex : examples) {
        if (format == CorpusFormat::tsv) {
            out << ex.src_text << "\t" << ex.tgt_text << "\n";
        } else {
            nlohmann::json row{{"id", ex.id},
                               {"src_text", ex.src_text},
                               {"tgt_text", ex.tgt_text},
                               {"src_variety", ex.src_variety},
                               {"tgt_variety", ex.tgt_variety}};
            out << row.dump() << "\n";
        }
    }
}

void save_mono(const std::string& path, const std::vector<MonoExample>& examples, CorpusFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write corpus file: " + path);
    for (const auto& ex : examples) {
        if (format == CorpusFormat::tsv) {
            out << ex.text << "\n";
        } else {
            nlohmann::json row{{"id", ex.id}, {"text", ex.text}, {"variety", ex.variety}};
            out << row.dump() << "\n";
        }
    }
}

DatasetSplit<BitextExample> split(const std::vector<BitextExample>& examples, SplitRatios ratios, uint64_t seed) {
    return split_impl(examples, ratios, seed);
}

DatasetSplit<MonoExample> split(const std::vector<MonoExample>& examples, SplitRatios ratios, uint64_t seed) {
    return split_impl(examples, ratios, seed);
}

std::map<std::string, size_t> corpus_stats(const std::vector<BitextExample>& examples) {
    std::map<std::string, size_t> counts;
    for (const auto& ex : examples) counts[ex.src_variety + "->" + ex.tgt_variety] += 1;
    return counts;
}

std::map<std::string, size_t> corpus_stats(const std::vector<MonoExample>& examples) {
    std::map<std::string, size_t> counts;
    for (const auto& ex : examples) counts[ex.variety] += 1;
    return counts;
}

}  // namespace diglot
