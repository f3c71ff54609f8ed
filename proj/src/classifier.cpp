#include "classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "error.hpp"
#include "json.hpp"
#include "text.hpp"

namespace diglot {

namespace {

// Whitespace-collapsed code points padded with boundary spaces.
std::u32string classifier_stream(std::string_view text) {
    std::string normalized = normalize_ws(text);
    std::u32string out;
    out.push_back(U' ');
    for (char32_t cp : utf8_decode(normalized)) out.push_back(cp);
    out.push_back(U' ');
    return out;
}

uint64_t fnv1a(std::string_view s, uint64_t h = 1469598103934665603ull) {
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

void ClassifierParams::validate() const {
    if (max_order < 1) fail(ErrorKind::invalid_argument, "classifier max_order must be >= 1");
    if (alpha <= 0.0) fail(ErrorKind::invalid_argument, "classifier alpha must be positive");
    if (!(heldout_fraction > 0.0 && heldout_fraction < 0.5))
        fail(ErrorKind::invalid_argument, "classifier heldout_fraction must be in (0, 0.5)");
    if (min_sentences < 2) fail(ErrorKind::invalid_argument, "classifier min_sentences must be >= 2");
}

void VarietyClassifier::fit_tables(VarietyClassifier& clf, const std::map<std::string, std::vector<std::string>>& data) {
    int orders = clf.params_.max_order;
    // Raw counts per variety, and the shared per-order gram vocabulary.
    std::map<std::string, std::vector<std::map<std::u32string, int64_t>>> counts;
    std::vector<std::set<std::u32string>> vocab(static_cast<size_t>(orders));
    std::map<std::string, std::vector<int64_t>> totals;
    int64_t total_sentences = 0;
    for (const auto& [variety, sentences] : data) {
        auto& c = counts[variety];
        c.resize(static_cast<size_t>(orders));
        totals[variety].assign(static_cast<size_t>(orders), 0);
        total_sentences += static_cast<int64_t>(sentences.size());
        for (const auto& sentence : sentences) {
            std::u32string stream = classifier_stream(sentence);
            for (int order = 1; order <= orders; ++order) {
                if (stream.size() < static_cast<size_t>(order)) continue;
                for (size_t i = 0; i + static_cast<size_t>(order) <= stream.size(); ++i) {
                    std::u32string gram = stream.substr(i, static_cast<size_t>(order));
                    c[static_cast<size_t>(order - 1)][gram] += 1;
                    totals[variety][static_cast<size_t>(order - 1)] += 1;
                    vocab[static_cast<size_t>(order - 1)].insert(std::move(gram));
                }
            }
        }
    }

    double alpha = clf.params_.alpha;
    for (const auto& [variety, sentences] : data) {
        auto& table = clf.tables_[variety];
        auto& unseen = clf.unseen_[variety];
        table.assign(static_cast<size_t>(orders), {});
        unseen.assign(static_cast<size_t>(orders), 0.0);
        for (int k = 0; k < orders; ++k) {
            // +1 extends the shared vocabulary with a single unseen bucket.
            double denom = static_cast<double>(totals[variety][static_cast<size_t>(k)]) +
                           alpha * static_cast<double>(vocab[static_cast<size_t>(k)].size() + 1);
            unseen[static_cast<size_t>(k)] = std::log(alpha / denom);
            for (const auto& [gram, count] : counts[variety][static_cast<size_t>(k)])
                table[static_cast<size_t>(k)][gram] = std::log((static_cast<double>(count) + alpha) / denom);
        }
        clf.log_prior_[variety] =
            std::log(static_cast<double>(data.at(variety).size()) / static_cast<double>(total_sentences));
    }
}

VarietyClassifier VarietyClassifier::train(const std::map<std::string, std::vector<std::string>>& mono_by_variety,
                                           const VarietyRegistry& registry, const ClassifierParams& params) {
    params.validate();
    if (mono_by_variety.size() < 2) fail(ErrorKind::invalid_argument, "classifier needs >= 2 varieties");

    VarietyClassifier clf;
    clf.params_ = params;
    bool any_dialect = false;
    uint64_t hash = fnv1a("variety-classifier-v1");
    for (const auto& [variety, sentences] : mono_by_variety) {
        const Variety& v = registry.at(variety);
        if (static_cast<int>(sentences.size()) < params.min_sentences)
            fail(ErrorKind::invalid_argument, "classifier: variety '" + variety + "' has " +
                                                  std::to_string(sentences.size()) + " sentences, needs >= " +
                                                  std::to_string(params.min_sentences));
        clf.kinds_[variety] = v.kind;
        any_dialect = any_dialect || v.kind == VarietyKind::dialect;
        hash = fnv1a(variety, hash);
        hash = fnv1a(std::to_string(sentences.size()), hash);
    }
    if (!any_dialect) fail(ErrorKind::invalid_argument, "classifier needs at least one dialect variety");
    hash = fnv1a(std::to_string(params.max_order), hash);
    clf.manifest_hash_ = hash;

    // First pass: fit on the training slice and measure held-out accuracy.
    size_t stride = std::max<size_t>(2, static_cast<size_t>(std::lround(1.0 / params.heldout_fraction)));
    std::map<std::string, std::vector<std::string>> fit_slice;
    std::map<std::string, std::vector<std::string>> held_slice;
    for (const auto& [variety, sentences] : mono_by_variety) {
        for (size_t i = 0; i < sentences.size(); ++i) {
            if (i % stride == stride - 1)
                held_slice[variety].push_back(sentences[i]);
            else
                fit_slice[variety].push_back(sentences[i]);
        }
    }
    fit_tables(clf, fit_slice);
    int64_t correct = 0, total = 0;
    for (const auto& [variety, sentences] : held_slice) {
        for (const auto& sentence : sentences) {
            ++total;
            if (clf.classify(sentence) == variety) ++correct;
        }
    }
    clf.heldout_accuracy_ = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

    // Final tables use everything.
    clf.tables_.clear();
    clf.unseen_.clear();
    clf.log_prior_.clear();
    fit_tables(clf, mono_by_variety);
    return clf;
}

double VarietyClassifier::log_likelihood(const std::u32string& stream, const std::string& variety) const {
    const auto& table = tables_.at(variety);
    const auto& unseen = unseen_.at(variety);
    double sum = log_prior_.at(variety);
    for (int order = 1; order <= params_.max_order; ++order) {
        if (stream.size() < static_cast<size_t>(order)) continue;
        const auto& grams = table[static_cast<size_t>(order - 1)];
        for (size_t i = 0; i + static_cast<size_t>(order) <= stream.size(); ++i) {
            auto it = grams.find(stream.substr(i, static_cast<size_t>(order)));
            sum += it != grams.end() ? it->second : unseen[static_cast<size_t>(order - 1)];
        }
    }
    return sum;
}

std::map<std::string, double> VarietyClassifier::posterior(std::string_view text) const {
    std::u32string stream = classifier_stream(text);
    std::map<std::string, double> scores;
    double best = -1e300;
    for (const auto& [variety, kind] : kinds_) {
        double s = log_likelihood(stream, variety);
        scores[variety] = s;
        best = std::max(best, s);
    }
    double z = 0.0;
    for (auto& [variety, s] : scores) {
        s = std::exp(s - best);
        z += s;
    }
    for (auto& [variety, s] : scores) s /= z;
    return scores;
}

std::string VarietyClassifier::classify(std::string_view text) const {
    std::u32string stream = classifier_stream(text);
    std::string best_variety;
    double best = -1e300;
    for (const auto& [variety, kind] : kinds_) {
        double s = log_likelihood(stream, variety);
        if (s > best) {
            best = s;
            best_variety = variety;
        }
    }
    return best_variety;
}

VarietyClassifier::Adi2Breakdown VarietyClassifier::adi2_breakdown(std::string_view text,
                                                                   std::string_view target_code) const {
    auto kind_it = kinds_.find(std::string(target_code));
    if (kind_it == kinds_.end())
        fail(ErrorKind::invalid_argument, "classifier does not cover variety '" + std::string(target_code) + "'");
    if (kind_it->second != VarietyKind::dialect)
        fail(ErrorKind::invalid_argument, "adi2 target '" + std::string(target_code) + "' is not a dialect");

    Adi2Breakdown out;
    if (trim(text).empty()) return out;

    auto post = posterior(text);
    double p_dialect = 0.0;
    for (const auto& [variety, p] : post)
        if (kinds_.at(variety) == VarietyKind::dialect) p_dialect += p;
    out.p_dialect = p_dialect;
    out.p_target_given_dialect = p_dialect > 0.0 ? post.at(std::string(target_code)) / p_dialect : 0.0;
    out.score = out.p_dialect * out.p_target_given_dialect;
    return out;
}

double VarietyClassifier::adi2(std::string_view text, std::string_view target_code) const {
    return adi2_breakdown(text, target_code).score;
}

void VarietyClassifier::save(const std::string& path) const {
    nlohmann::json doc;
    doc["format_version"] = 1;
    doc["params"] = {{"max_order", params_.max_order},
                     {"alpha", params_.alpha},
                     {"heldout_fraction", params_.heldout_fraction},
                     {"min_sentences", params_.min_sentences}};
    doc["heldout_accuracy"] = heldout_accuracy_;
    doc["manifest_hash"] = manifest_hash_;
    nlohmann::json kinds = nlohmann::json::object();
    nlohmann::json priors = nlohmann::json::object();
    nlohmann::json tables = nlohmann::json::object();
    nlohmann::json unseen = nlohmann::json::object();
    for (const auto& [variety, kind] : kinds_) {
        kinds[variety] = to_string(kind);
        priors[variety] = log_prior_.at(variety);
        unseen[variety] = unseen_.at(variety);
        nlohmann::json orders = nlohmann::json::array();
        for (const auto& table : tables_.at(variety)) {
            nlohmann::json grams = nlohmann::json::object();
            for (const auto& [gram, logp] : table) {
                std::vector<char32_t> cps(gram.begin(), gram.end());
                grams[utf8_encode(cps)] = logp;
            }
            orders.push_back(std::move(grams));
        }
        tables[variety] = std::move(orders);
    }
    doc["kinds"] = std::move(kinds);
    doc["log_prior"] = std::move(priors);
    doc["tables"] = std::move(tables);
    doc["unseen"] = std::move(unseen);
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write classifier file: " + path);
    out << doc.dump() << "\n";
}

VarietyClassifier VarietyClassifier::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open classifier file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::parse, "classifier file '" + path + "': " + e.what());
    }
    if (doc.value("format_version", 0) != 1)
        fail(ErrorKind::parse, "classifier file '" + path + "': unsupported format version");
    VarietyClassifier clf;
    clf.params_.max_order = doc["params"]["max_order"].get<int>();
    clf.params_.alpha = doc["params"]["alpha"].get<double>();
    clf.params_.heldout_fraction = doc["params"]["heldout_fraction"].get<double>();
    clf.params_.min_sentences = doc["params"]["min_sentences"].get<int>();
    clf.heldout_accuracy_ = doc["heldout_accuracy"].get<double>();
    clf.manifest_hash_ = doc["manifest_hash"].get<uint64_t>();
    for (const auto& [variety, kind] : doc["kinds"].items())
        clf.kinds_[variety] = variety_kind_from_string(kind.get<std::string>());
    for (const auto& [variety, logp] : doc["log_prior"].items()) clf.log_prior_[variety] = logp.get<double>();
    for (const auto& [variety, unseen] : doc["unseen"].items())
        clf.unseen_[variety] = unseen.get<std::vector<double>>();
    for (const auto& [variety, orders] : doc["tables"].items()) {
        auto& table = clf.tables_[variety];
        for (const auto& grams : orders) {
            std::map<std::u32string, double> order_table;
            for (const auto& [gram, logp] : grams.items()) {
                auto cps = utf8_decode(gram);
                order_table[std::u32string(cps.begin(), cps.end())] = logp.get<double>();
            }
            table.push_back(std::move(order_table));
        }
    }
    return clf;
}

}  // namespace diglot
