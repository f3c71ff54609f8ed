#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "variety.hpp"

namespace diglot {

struct ClassifierParams {
    int max_order = 4;             // character n-gram orders 1..max_order
    double alpha = 1.0;            // additive smoothing
    double heldout_fraction = 0.1; // slice used for the reported accuracy
    int min_sentences = 50;

    void validate() const;
};

// Character n-gram variety classifier backing the dialect-fidelity score.
// Likelihoods are per-order additively smoothed multinomials over a shared
// n-gram vocabulary; the fidelity score is the posterior mass decomposition
//   P(kind=dialect | text) * P(variety=target | text, kind=dialect).
class VarietyClassifier {
public:
    static VarietyClassifier train(const std::map<std::string, std::vector<std::string>>& mono_by_variety,
                                   const VarietyRegistry& registry, const ClassifierParams& params = {});

    // Normalized posterior over the covered varieties.
    std::map<std::string, double> posterior(std::string_view text) const;

    struct Adi2Breakdown {
        double p_dialect = 0.0;
        double p_target_given_dialect = 0.0;
        double score = 0.0;  // product of the two factors
    };
    Adi2Breakdown adi2_breakdown(std::string_view text, std::string_view target_code) const;
    double adi2(std::string_view text, std::string_view target_code) const;

    bool covers(std::string_view code) const { return kinds_.count(std::string(code)) != 0; }
    double heldout_accuracy() const { return heldout_accuracy_; }
    uint64_t manifest_hash() const { return manifest_hash_; }
    const ClassifierParams& params() const { return params_; }

    void save(const std::string& path) const;
    static VarietyClassifier load(const std::string& path);

private:
    ClassifierParams params_;
    std::map<std::string, VarietyKind> kinds_;
    std::map<std::string, double> log_prior_;
    // tables_[variety][order-1]: log P(gram | variety, order); unseen grams
    // take unseen_[variety][order-1].
    std::map<std::string, std::vector<std::map<std::u32string, double>>> tables_;
    std::map<std::string, std::vector<double>> unseen_;
    double heldout_accuracy_ = 0.0;
    uint64_t manifest_hash_ = 0;

    double log_likelihood(const std::u32string& stream, const std::string& variety) const;
    std::string classify(std::string_view text) const;

    static void fit_tables(VarietyClassifier& clf, const std::map<std::string, std::vector<std::string>>& data);
};

}  // namespace diglot
