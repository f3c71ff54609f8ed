#pragma once

#include <string_view>
#include <vector>

namespace diglot {

// ChrF++ parameters: character-order-6 and word-order-2 F2 over
// whitespace-stripped character n-grams and whitespace-token word n-grams.
// `epsilon` is the F value assigned to an order with no n-grams on either
// side (0 keeps the plain definition: such orders score zero).
struct ChrfParams {
    int char_order = 6;
    int word_order = 2;
    double beta = 2.0;
    double epsilon = 0.0;

    void validate() const;
};

// Sentence score in [0, 100]; empty hypothesis scores 0, empty reference is
// an error.
double chrf_pp(std::string_view hypothesis, std::string_view reference, const ChrfParams& params = {});

// Corpus score: match/total statistics are summed over all pairs per order
// before the per-order F values are taken (micro aggregation).
double corpus_chrf(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                   const ChrfParams& params = {});

}  // namespace diglot
