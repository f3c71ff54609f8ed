#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "variety.hpp"

namespace diglot {

struct BitextExample {
    std::string id;
    std::string src_text;
    std::string tgt_text;
    std::string src_variety;
    std::string tgt_variety;
};

struct MonoExample {
    std::string id;
    std::string text;
    std::string variety;
};

enum class CorpusFormat { tsv, jsonl };
CorpusFormat corpus_format_from_string(std::string_view s);

struct BitextLoadOptions {
    // TSV carries no variety columns: the direction is supplied out-of-band.
    std::string src_variety;
    std::string tgt_variety;
    bool skip_header = false;
};

struct MonoLoadOptions {
    std::string variety;  // for TSV input
    bool skip_header = false;
};

// Loaders NFC-normalize text, validate against the registry and the type
// invariants, and synthesize ids as "<filename>:<line>" when absent.
std::vector<BitextExample> load_bitext(const std::string& path, CorpusFormat format, const VarietyRegistry& registry,
                                       const BitextLoadOptions& options = {});
std::vector<MonoExample> load_mono(const std::string& path, CorpusFormat format, const VarietyRegistry& registry,
                                   const MonoLoadOptions& options = {});

void save_bitext(const std::string& path, const std::vector<BitextExample>& examples, CorpusFormat format);
void save_mono(const std::string& path, const std::vector<MonoExample>& examples, CorpusFormat format);

struct SplitRatios {
    double train = 0.8;
    double dev = 0.1;
    double test = 0.1;
};

template <class Example>
struct DatasetSplit {
    std::vector<Example> train, dev, test;
    uint64_t seed = 0;
    SplitRatios ratios;
};

// Deterministic pseudorandom partition; sizes by largest remainder so the
// three parts always sum to the input size.
DatasetSplit<BitextExample> split(const std::vector<BitextExample>& examples, SplitRatios ratios, uint64_t seed);
DatasetSplit<MonoExample> split(const std::vector<MonoExample>& examples, SplitRatios ratios, uint64_t seed);

// Counts keyed "src->tgt" for bitext, by variety for mono.
std::map<std::string, size_t> corpus_stats(const std::vector<BitextExample>& examples);
std::map<std::string, size_t> corpus_stats(const std::vector<MonoExample>& examples);

}  // namespace diglot
