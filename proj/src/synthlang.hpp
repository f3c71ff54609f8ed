#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "variety.hpp"

namespace diglot {

// Word-rewrite rules deriving one variety from the standard. Rule outputs
// are drawn from a vocabulary disjoint from rule inputs, so applying a
// ruleset twice equals applying it once. At most one rule fires per token:
// function words first, then the lexicon, then the first matching affix
// rule; unmapped tokens pass through.
struct DialectRuleSet {
    struct AffixRule {
        std::string match_suffix;
        std::string replace_suffix;
    };

    std::string variety;
    std::map<std::string, std::string> function_word_map;
    std::map<std::string, std::string> lexicon_map;
    std::vector<AffixRule> affix_rules;
    uint64_t seed = 0;

    std::string apply_word(const std::string& word) const;
    std::string apply(const std::string& sentence) const;

    // Exact inverse; valid because maps are injective and outputs are
    // disjoint from inputs.
    DialectRuleSet inverted() const;
};

struct SynthConfig {
    int n_dialects = 3;
    int vocab_size = 120;        // base vocabulary, function + content words
    int sentence_len_min = 4;
    int sentence_len_max = 12;
    int n_sentences = 2000;      // per pool (per-dialect bitext, per-variety mono)
    double divergence = 0.4;     // fraction of the base vocabulary each dialect rewrites
    uint64_t seed = 42;

    void validate() const;
};

// The generated language family: base vocabulary split into word classes,
// plus one ruleset per non-standard variety.
struct SynthLanguage {
    std::vector<std::string> function_words;
    std::vector<std::string> content_words;
    VarietyRegistry registry;
    std::map<std::string, DialectRuleSet> rules;  // by variety code; includes the foreign gloss
};

struct SynthCorpora {
    VarietyRegistry registry;
    std::map<std::string, DialectRuleSet> rules;
    std::vector<BitextExample> bitext;                       // std<->dialect and dialect<->foreign, both directions
    std::vector<MonoExample> mono;                           // standard + per-dialect pools
};

SynthLanguage build_language(const SynthConfig& config);

// Standard-variety sentence pool; deterministic in (config, seed).
std::vector<MonoExample> generate_base_corpus(const SynthConfig& config);

std::string derive_dialect(const std::string& sentence, const DialectRuleSet& rules);

SynthCorpora build_corpora(const SynthConfig& config);

// Writes varieties.json, rules.json, mono.<code>.jsonl and bitext.<code>.jsonl.
void write_corpora(const SynthCorpora& corpora, const std::string& out_dir);

SynthConfig synth_config_from_toml(const std::string& path);

}  // namespace diglot
