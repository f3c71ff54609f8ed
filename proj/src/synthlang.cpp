#include "synthlang.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "error.hpp"
#include "json.hpp"
#include "rng.hpp"
#include "text.hpp"
#include "toml.hpp"

namespace diglot {

namespace {

const std::vector<std::string> kBaseConsonants = {"p", "t", "k", "m", "n", "s", "l", "r"};
const std::vector<std::string> kVowels = {"a", "e", "i", "o", "u"};

// Per-dialect consonant pools keep rewritten words recognizable by character
// n-grams alone. 'q' is reserved for affix markers, 'h'/'y' for the foreign
// gloss language.
const std::vector<std::vector<std::string>> kDialectPools = {
    {"b", "d", "g"}, {"f", "v", "z"}, {"w", "j", "c"},
};
const std::vector<std::string> kForeignPool = {"h", "y"};

const std::vector<std::string> kDialectNames = {"Northern Kestrani", "Coastal Kestrani", "Valley Kestrani",
                                                "Highland Kestrani", "Desert Kestrani"};

std::string make_word(Rng& rng, int syllables, const std::vector<std::string>& consonants,
                      const std::string& forbidden_final_vowel, std::set<std::string>& used) {
    for (int attempt = 0; attempt < 4096; ++attempt) {
        std::string w;
        for (int s = 0; s < syllables; ++s) {
            w += consonants[rng.below(consonants.size())];
            w += kVowels[rng.below(kVowels.size())];
        }
        if (!forbidden_final_vowel.empty() && w.size() >= forbidden_final_vowel.size() &&
            w.compare(w.size() - forbidden_final_vowel.size(), forbidden_final_vowel.size(), forbidden_final_vowel) == 0)
            continue;
        if (used.insert(w).second) return w;
    }
    fail(ErrorKind::invalid_argument, "vocab_size too small for requested divergence (word space exhausted)");
}

std::string gen_sentence(Rng& rng, const SynthLanguage& lang, const SynthConfig& config) {
    int span = config.sentence_len_max - config.sentence_len_min + 1;
    int len = config.sentence_len_min + static_cast<int>(rng.below(static_cast<uint64_t>(span)));
    std::vector<std::string> words;
    words.reserve(static_cast<size_t>(len));
    // Phrase pattern: a function word opens each four-word group.
    for (int i = 0; i < len; ++i) {
        if (i % 4 == 0) {
            words.push_back(lang.function_words[rng.below(lang.function_words.size())]);
        } else {
            words.push_back(lang.content_words[rng.below(lang.content_words.size())]);
        }
    }
    return join(words, " ");
}

// Rewrites `budget` words of `pool` (affix-covered words count toward the
// budget and are excluded from the sampled substitution set).
std::vector<std::string> sample_rewrites(Rng& rng, const std::vector<std::string>& pool,
                                         const std::set<std::string>& affix_covered, size_t budget) {
    std::vector<std::string> candidates;
    for (const auto& w : pool)
        if (!affix_covered.count(w)) candidates.push_back(w);
    size_t want = budget > affix_covered.size() ? budget - affix_covered.size() : 0;
    want = std::min(want, candidates.size());
    rng.shuffle(candidates);
    candidates.resize(want);
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

DialectRuleSet build_ruleset(const SynthConfig& config, const SynthLanguage& lang, const std::string& code,
                             size_t dialect_index, std::set<std::string>& used_words) {
    DialectRuleSet rules;
    rules.variety = code;
    rules.seed = config.seed;
    Rng rng = Rng::derive(config.seed, "rules-" + code);

    const auto& pool = kDialectPools[dialect_index % kDialectPools.size()];
    const std::string affix_vowel = kVowels[dialect_index % kVowels.size()];

    size_t budget_fw = static_cast<size_t>(std::lround(config.divergence * static_cast<double>(lang.function_words.size())));
    size_t budget_c = static_cast<size_t>(std::lround(config.divergence * static_cast<double>(lang.content_words.size())));
    if (budget_fw + budget_c == 0)
        fail(ErrorKind::invalid_argument, "vocab_size too small for requested divergence (rewrite budget is zero)");

    auto ends_with_vowel = [&](const std::string& w) {
        return w.size() >= affix_vowel.size() &&
               w.compare(w.size() - affix_vowel.size(), affix_vowel.size(), affix_vowel) == 0;
    };
    std::set<std::string> affix_fw, affix_c;
    for (const auto& w : lang.function_words)
        if (ends_with_vowel(w)) affix_fw.insert(w);
    for (const auto& w : lang.content_words)
        if (ends_with_vowel(w)) affix_c.insert(w);

    // The affix rule is kept only when its matches fit inside the divergence
    // budget; otherwise the whole budget goes to the lexicon map.
    bool keep_affix = affix_fw.size() <= budget_fw && affix_c.size() <= budget_c;
    if (!keep_affix) {
        affix_fw.clear();
        affix_c.clear();
    } else {
        rules.affix_rules.push_back({affix_vowel, affix_vowel + "q"});
    }

    for (const auto& w : sample_rewrites(rng, lang.function_words, affix_fw, budget_fw))
        rules.function_word_map[w] = make_word(rng, 1, pool, affix_vowel, used_words);
    for (const auto& w : sample_rewrites(rng, lang.content_words, affix_c, budget_c)) {
        int syllables = 2 + static_cast<int>(rng.below(2));
        rules.lexicon_map[w] = make_word(rng, syllables, pool, affix_vowel, used_words);
    }
    return rules;
}

DialectRuleSet build_foreign_ruleset(const SynthConfig& config, const SynthLanguage& lang,
                                     std::set<std::string>& used_words) {
    DialectRuleSet rules;
    rules.variety = "for";
    rules.seed = config.seed;
    Rng rng = Rng::derive(config.seed, "rules-for");
    // Full-vocabulary substitution: the gloss language shares no surface forms
    // with the family it translates.
    for (const auto& w : lang.function_words) rules.function_word_map[w] = make_word(rng, 1, kForeignPool, "", used_words);
    for (const auto& w : lang.content_words) {
        int syllables = 2 + static_cast<int>(rng.below(2));
        rules.lexicon_map[w] = make_word(rng, syllables, kForeignPool, "", used_words);
    }
    return rules;
}

std::string derived_phrase(const SynthLanguage& lang, const DialectRuleSet& rules, std::initializer_list<int> content_picks,
                           int fw_pick) {
    std::vector<std::string> words;
    words.push_back(lang.function_words[static_cast<size_t>(fw_pick) % lang.function_words.size()]);
    for (int c : content_picks) words.push_back(lang.content_words[static_cast<size_t>(c) % lang.content_words.size()]);
    return rules.apply(join(words, " "));
}

}  // namespace

std::string DialectRuleSet::apply_word(const std::string& word) const {
    auto fw = function_word_map.find(word);
    if (fw != function_word_map.end()) return fw->second;
    auto lex = lexicon_map.find(word);
    if (lex != lexicon_map.end()) return lex->second;
    for (const auto& rule : affix_rules) {
        if (word.size() > rule.match_suffix.size() &&
            word.compare(word.size() - rule.match_suffix.size(), rule.match_suffix.size(), rule.match_suffix) == 0) {
            return word.substr(0, word.size() - rule.match_suffix.size()) + rule.replace_suffix;
        }
    }
    return word;
}

std::string DialectRuleSet::apply(const std::string& sentence) const {
    auto words = split_ws(sentence);
    for (auto& w : words) w = apply_word(w);
    return join(words, " ");
}

DialectRuleSet DialectRuleSet::inverted() const {
    DialectRuleSet inv;
    inv.variety = variety;
    inv.seed = seed;
    for (const auto& [k, v] : function_word_map) inv.function_word_map[v] = k;
    for (const auto& [k, v] : lexicon_map) inv.lexicon_map[v] = k;
    for (auto it = affix_rules.rbegin(); it != affix_rules.rend(); ++it)
        inv.affix_rules.push_back({it->replace_suffix, it->match_suffix});
    return inv;
}

void SynthConfig::validate() const {
    if (n_dialects < 2) fail(ErrorKind::invalid_argument, "n_dialects must be >= 2");
    if (vocab_size < 24) fail(ErrorKind::invalid_argument, "vocab_size must be >= 24");
    if (sentence_len_min < 1 || sentence_len_max < sentence_len_min)
        fail(ErrorKind::invalid_argument, "invalid sentence length range");
    if (n_sentences < 1) fail(ErrorKind::invalid_argument, "n_sentences must be positive");
    if (!(divergence > 0.0 && divergence <= 1.0)) fail(ErrorKind::invalid_argument, "divergence must be in (0,1]");
}

SynthLanguage build_language(const SynthConfig& config) {
    config.validate();
    SynthLanguage lang;
    Rng rng = Rng::derive(config.seed, "vocab");
    std::set<std::string> used;

    int n_function = std::max(4, config.vocab_size / 10);
    int n_content = config.vocab_size - n_function;
    for (int i = 0; i < n_function; ++i) lang.function_words.push_back(make_word(rng, 1, kBaseConsonants, "", used));
    for (int i = 0; i < n_content; ++i) {
        int syllables = 2 + static_cast<int>(rng.below(2));
        lang.content_words.push_back(make_word(rng, syllables, kBaseConsonants, "", used));
    }

    lang.registry.add({"std", "Standard Kestrani", VarietyKind::standard, "", ""});
    for (int k = 0; k < config.n_dialects; ++k) {
        std::string code = "d" + std::to_string(k + 1);
        std::string name = k < static_cast<int>(kDialectNames.size()) ? kDialectNames[static_cast<size_t>(k)]
                                                                      : "Kestrani Dialect " + std::to_string(k + 1);
        lang.registry.add({code, name, VarietyKind::dialect, "", ""});
        lang.rules[code] = build_ruleset(config, lang, code, static_cast<size_t>(k), used);
    }
    lang.registry.add({"for", "Veldic", VarietyKind::foreign, "", ""});
    lang.rules["for"] = build_foreign_ruleset(config, lang, used);

    // Dialect-language generation instructions: a fixed standard phrase pushed
    // through each ruleset, so the instruction itself is written in-dialect.
    VarietyRegistry with_templates;
    for (const auto& v : lang.registry.all()) {
        Variety item = v;
        if (v.kind == VarietyKind::dialect) {
            const auto& rules = lang.rules.at(v.code);
            item.gen_instruction = derived_phrase(lang, rules, {0, 1, 2}, 0) + " " + v.code + ": <PREFIX>";
            item.gen_preamble = derived_phrase(lang, rules, {3, 4}, 1) + " " + v.code + ":";
        }
        with_templates.add(std::move(item));
    }
    lang.registry = std::move(with_templates);
    return lang;
}

std::vector<MonoExample> generate_base_corpus(const SynthConfig& config) {
    SynthLanguage lang = build_language(config);
    Rng rng = Rng::derive(config.seed, "mono-std");
    std::vector<MonoExample> out;
    out.reserve(static_cast<size_t>(config.n_sentences));
    for (int i = 0; i < config.n_sentences; ++i)
        out.push_back({"mono-std:" + std::to_string(i), gen_sentence(rng, lang, config), "std"});
    return out;
}

std::string derive_dialect(const std::string& sentence, const DialectRuleSet& rules) { return rules.apply(sentence); }

SynthCorpora build_corpora(const SynthConfig& config) {
    SynthLanguage lang = build_language(config);
    SynthCorpora out;
    out.registry = lang.registry;
    out.rules = lang.rules;

    out.mono = generate_base_corpus(config);
    for (const auto* dialect : lang.registry.dialects()) {
        const auto& rules = lang.rules.at(dialect->code);
        Rng rng = Rng::derive(config.seed, "mono-" + dialect->code);
        for (int i = 0; i < config.n_sentences; ++i) {
            std::string base = gen_sentence(rng, lang, config);
            out.mono.push_back({"mono-" + dialect->code + ":" + std::to_string(i), rules.apply(base), dialect->code});
        }
    }

    const auto& foreign = lang.rules.at("for");
    for (const auto* dialect : lang.registry.dialects()) {
        const auto& rules = lang.rules.at(dialect->code);
        Rng rng = Rng::derive(config.seed, "bitext-" + dialect->code);
        for (int i = 0; i < config.n_sentences; ++i) {
            std::string base = gen_sentence(rng, lang, config);
            std::string derived = rules.apply(base);
            std::string gloss = foreign.apply(base);
            std::string stem = "bitext-" + dialect->code + ":" + std::to_string(i);
            out.bitext.push_back({stem + ":std2d", base, derived, "std", dialect->code});
            out.bitext.push_back({stem + ":d2std", derived, base, dialect->code, "std"});
            out.bitext.push_back({stem + ":d2for", derived, gloss, dialect->code, "for"});
            out.bitext.push_back({stem + ":for2d", gloss, derived, "for", dialect->code});
        }
    }
    return out;
}

void write_corpora(const SynthCorpora& corpora, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create output directory: " + out_dir);

    corpora.registry.save(out_dir + "/varieties.json");

    nlohmann::json rules_doc = nlohmann::json::object();
    for (const auto& [code, rules] : corpora.rules) {
        nlohmann::json affix = nlohmann::json::array();
        for (const auto& rule : rules.affix_rules)
            affix.push_back({{"match_suffix", rule.match_suffix}, {"replace_suffix", rule.replace_suffix}});
        rules_doc[code] = {{"variety", rules.variety},
                           {"seed", rules.seed},
                           {"function_word_map", rules.function_word_map},
                           {"lexicon_map", rules.lexicon_map},
                           {"affix_rules", affix}};
    }
    std::ofstream rules_out(out_dir + "/rules.json", std::ios::binary);
    if (!rules_out) fail(ErrorKind::io, "cannot write rules.json");
    rules_out << rules_doc.dump(2) << "\n";

    std::map<std::string, std::vector<MonoExample>> mono_by_variety;
    for (const auto& ex : corpora.mono) mono_by_variety[ex.variety].push_back(ex);
    for (const auto& [code, examples] : mono_by_variety)
        save_mono(out_dir + "/mono." + code + ".jsonl", examples, CorpusFormat::jsonl);

    std::map<std::string, std::vector<BitextExample>> bitext_by_dialect;
    for (const auto& ex : corpora.bitext) {
        const std::string& dialect = ex.src_variety != "std" && ex.src_variety != "for" ? ex.src_variety : ex.tgt_variety;
        bitext_by_dialect[dialect].push_back(ex);
    }
    for (const auto& [code, examples] : bitext_by_dialect)
        save_bitext(out_dir + "/bitext." + code + ".jsonl", examples, CorpusFormat::jsonl);
}

SynthConfig synth_config_from_toml(const std::string& path) {
    auto table = toml::parse_file(path);
    SynthConfig config;
    config.n_dialects = static_cast<int>(table.get_int("synth.n_dialects", config.n_dialects));
    config.vocab_size = static_cast<int>(table.get_int("synth.vocab_size", config.vocab_size));
    config.sentence_len_min = static_cast<int>(table.get_int("synth.sentence_len_min", config.sentence_len_min));
    config.sentence_len_max = static_cast<int>(table.get_int("synth.sentence_len_max", config.sentence_len_max));
    config.n_sentences = static_cast<int>(table.get_int("synth.n_sentences", config.n_sentences));
    config.divergence = table.get_double("synth.divergence", config.divergence);
    config.seed = static_cast<uint64_t>(table.get_int("synth.seed", static_cast<int64_t>(config.seed)));
    config.validate();
    return config;
}

}  // namespace diglot
