#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace diglot {

enum class TokenizerMode { word_char_fallback, char_level };

std::string to_string(TokenizerMode mode);
TokenizerMode tokenizer_mode_from_string(std::string_view s);

// Reversible tokenizer: words (and individual whitespace characters) in word
// mode, single code points in char mode, with char fallback for words outside
// the vocabulary. decode(encode(s)) == s for any string over the training
// character set.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kUser = 1;
    static constexpr int kAssistant = 2;
    static constexpr int kEot = 3;
    static constexpr int kNumSpecials = 4;

    Tokenizer() = default;

    // Vocabulary from a text sample: all single characters seen, plus (in
    // word mode) up to max_words whole words by descending frequency.
    static Tokenizer build(const std::vector<std::string>& texts, TokenizerMode mode, size_t max_words = 50000);

    std::vector<int> encode(std::string_view text) const;  // throws on unknown characters
    std::string decode(const std::vector<int>& ids) const;
    const std::string& token_text(int id) const;

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
    bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }
    TokenizerMode mode() const { return mode_; }

    nlohmann::json to_json() const;
    static Tokenizer from_json(const nlohmann::json& doc);

private:
    TokenizerMode mode_ = TokenizerMode::word_char_fallback;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;

    void finalize();
    int lookup(const std::string& piece) const;  // -1 when absent
};

}  // namespace diglot
