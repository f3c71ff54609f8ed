#include "tokenizer.hpp"

#include <algorithm>
#include <map>

#include "error.hpp"
#include "text.hpp"

namespace diglot {

namespace {

const std::vector<std::string> kSpecialTexts = {"<|pad|>", "<|user|>", "<|assistant|>", "<|eot|>"};

// Alternating pieces: maximal non-whitespace runs, and each whitespace
// character on its own.
std::vector<std::string> split_pieces(std::string_view text) {
    std::vector<std::string> pieces;
    auto cps = utf8_decode(text);
    std::vector<char32_t> run;
    auto flush = [&]() {
        if (!run.empty()) {
            pieces.push_back(utf8_encode(run));
            run.clear();
        }
    };
    for (char32_t cp : cps) {
        if (is_ascii_space(cp)) {
            flush();
            pieces.push_back(utf8_encode({cp}));
        } else {
            run.push_back(cp);
        }
    }
    flush();
    return pieces;
}

}  // namespace

std::string to_string(TokenizerMode mode) {
    return mode == TokenizerMode::word_char_fallback ? "word_char_fallback" : "char_level";
}

TokenizerMode tokenizer_mode_from_string(std::string_view s) {
    if (s == "word_char_fallback") return TokenizerMode::word_char_fallback;
    if (s == "char_level") return TokenizerMode::char_level;
    fail(ErrorKind::parse, "unknown tokenizer mode: '" + std::string(s) + "'");
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, TokenizerMode mode, size_t max_words) {
    Tokenizer tok;
    tok.mode_ = mode;
    tok.id_to_token_ = kSpecialTexts;

    std::map<char32_t, int64_t> chars;
    std::map<std::string, int64_t> words;
    for (const auto& text : texts) {
        for (char32_t cp : utf8_decode(text)) chars[cp] += 1;
        if (mode == TokenizerMode::word_char_fallback) {
            for (auto& piece : split_pieces(text)) {
                auto cps = utf8_decode(piece);
                if (cps.size() > 1 && !is_ascii_space(cps[0])) words[piece] += 1;
            }
        }
    }
    for (const auto& [cp, count] : chars) tok.id_to_token_.push_back(utf8_encode({cp}));

    if (mode == TokenizerMode::word_char_fallback) {
        std::vector<std::pair<std::string, int64_t>> ranked(words.begin(), words.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (ranked.size() > max_words) ranked.resize(max_words);
        for (const auto& [word, count] : ranked) tok.id_to_token_.push_back(word);
    }
    tok.finalize();
    return tok;
}

void Tokenizer::finalize() {
    token_to_id_.clear();
    for (size_t i = 0; i < id_to_token_.size(); ++i) token_to_id_[id_to_token_[i]] = static_cast<int>(i);
}

int Tokenizer::lookup(const std::string& piece) const {
    auto it = token_to_id_.find(piece);
    return it == token_to_id_.end() ? -1 : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    auto encode_chars = [&](const std::string& piece) {
        for (char32_t cp : utf8_decode(piece)) {
            int id = lookup(utf8_encode({cp}));
            if (id < 0)
                fail(ErrorKind::invalid_argument,
                     "tokenizer: character '" + utf8_encode({cp}) + "' not in the training character set");
            ids.push_back(id);
        }
    };
    if (mode_ == TokenizerMode::char_level) {
        encode_chars(std::string(text));
        return ids;
    }
    for (const auto& piece : split_pieces(text)) {
        int id = lookup(piece);
        if (id >= kNumSpecials) {
            ids.push_back(id);
        } else {
            encode_chars(piece);  // fallback; also covers pieces colliding with special texts
        }
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) out += token_text(id);
    return out;
}

const std::string& Tokenizer::token_text(int id) const {
    if (id < 0 || id >= vocab_size())
        fail(ErrorKind::invalid_argument, "tokenizer: token id " + std::to_string(id) + " out of range");
    return id_to_token_[static_cast<size_t>(id)];
}

nlohmann::json Tokenizer::to_json() const {
    return {{"mode", to_string(mode_)}, {"tokens", id_to_token_}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& doc) {
    Tokenizer tok;
    tok.mode_ = tokenizer_mode_from_string(doc.at("mode").get<std::string>());
    tok.id_to_token_ = doc.at("tokens").get<std::vector<std::string>>();
    if (tok.id_to_token_.size() < kNumSpecials ||
        !std::equal(kSpecialTexts.begin(), kSpecialTexts.end(), tok.id_to_token_.begin()))
        fail(ErrorKind::parse, "tokenizer: malformed special token block");
    tok.finalize();
    return tok;
}

}  // namespace diglot
