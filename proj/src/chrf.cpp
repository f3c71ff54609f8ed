#include "chrf.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "error.hpp"
#include "text.hpp"

namespace diglot {

namespace {

struct OrderStats {
    int64_t matched = 0;
    int64_t hyp_total = 0;
    int64_t ref_total = 0;
};

std::map<std::u32string, int64_t> count_ngrams(const std::u32string& stream, int order) {
    std::map<std::u32string, int64_t> counts;
    if (static_cast<size_t>(order) > stream.size()) return counts;
    for (size_t i = 0; i + static_cast<size_t>(order) <= stream.size(); ++i)
        counts[stream.substr(i, static_cast<size_t>(order))] += 1;
    return counts;
}

void accumulate(OrderStats& stats, const std::u32string& hyp, const std::u32string& ref, int order) {
    auto hyp_counts = count_ngrams(hyp, order);
    auto ref_counts = count_ngrams(ref, order);
    for (const auto& [gram, count] : hyp_counts) {
        stats.hyp_total += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) stats.matched += std::min(count, it->second);
    }
    for (const auto& [gram, count] : ref_counts) stats.ref_total += count;
}

std::u32string char_stream(std::string_view text) {
    std::u32string out;
    for (char32_t cp : utf8_decode(text))
        if (!is_ascii_space(cp)) out.push_back(cp);
    return out;
}

// Words mapped to a synthetic symbol stream (one code point per distinct
// word) so word n-grams reuse the character counting path.
std::u32string word_stream(std::string_view text, std::map<std::string, char32_t>& symbols) {
    std::u32string out;
    for (const auto& word : split_ws(text)) {
        auto it = symbols.find(word);
        if (it == symbols.end()) {
            char32_t symbol = static_cast<char32_t>(0x100000 + symbols.size());
            it = symbols.emplace(word, symbol).first;
        }
        out.push_back(it->second);
    }
    return out;
}

double f_beta_score(const OrderStats& stats, const ChrfParams& params) {
    if (stats.hyp_total == 0 && stats.ref_total == 0) return params.epsilon;
    double precision = stats.hyp_total > 0 ? static_cast<double>(stats.matched) / static_cast<double>(stats.hyp_total) : 0.0;
    double recall = stats.ref_total > 0 ? static_cast<double>(stats.matched) / static_cast<double>(stats.ref_total) : 0.0;
    double b2 = params.beta * params.beta;
    double denom = b2 * precision + recall;
    if (denom <= 0.0) return 0.0;
    return (1.0 + b2) * precision * recall / denom;
}

double score_from_stats(const std::vector<OrderStats>& stats, const ChrfParams& params) {
    double sum = 0.0;
    for (const auto& s : stats) sum += f_beta_score(s, params);
    return 100.0 * sum / static_cast<double>(stats.size());
}

std::vector<OrderStats> collect(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                                const ChrfParams& params) {
    std::vector<OrderStats> stats(static_cast<size_t>(params.char_order + params.word_order));
    std::map<std::string, char32_t> word_symbols;
    for (size_t pair = 0; pair < hypotheses.size(); ++pair) {
        if (trim(references[pair]).empty()) fail(ErrorKind::invalid_argument, "chrf: empty reference");
        std::u32string hyp_chars = char_stream(hypotheses[pair]);
        std::u32string ref_chars = char_stream(references[pair]);
        std::u32string hyp_words = word_stream(hypotheses[pair], word_symbols);
        std::u32string ref_words = word_stream(references[pair], word_symbols);
        for (int order = 1; order <= params.char_order; ++order)
            accumulate(stats[static_cast<size_t>(order - 1)], hyp_chars, ref_chars, order);
        for (int order = 1; order <= params.word_order; ++order)
            accumulate(stats[static_cast<size_t>(params.char_order + order - 1)], hyp_words, ref_words, order);
    }
    return stats;
}

}  // namespace

void ChrfParams::validate() const {
    if (char_order < 1 || word_order < 0) fail(ErrorKind::invalid_argument, "chrf orders must be >= 1 (char) / >= 0 (word)");
    if (beta <= 0.0) fail(ErrorKind::invalid_argument, "chrf beta must be positive");
}

double chrf_pp(std::string_view hypothesis, std::string_view reference, const ChrfParams& params) {
    params.validate();
    if (trim(reference).empty()) fail(ErrorKind::invalid_argument, "chrf: empty reference");
    if (trim(hypothesis).empty()) return 0.0;
    auto stats = collect({std::string(hypothesis)}, {std::string(reference)}, params);
    return score_from_stats(stats, params);
}

double corpus_chrf(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                   const ChrfParams& params) {
    params.validate();
    if (hypotheses.size() != references.size())
        fail(ErrorKind::invalid_argument, "chrf: hypothesis/reference count mismatch");
    if (hypotheses.empty()) fail(ErrorKind::invalid_argument, "chrf: empty corpus");
    auto stats = collect(hypotheses, references, params);
    return score_from_stats(stats, params);
}

}  // namespace diglot
