#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "corpus.hpp"
#include "variety.hpp"

namespace diglot {

enum class ChatRole { user, assistant };
enum class TaskKind { mt, gen };
enum class InstructionLanguage { english, dialectal };

std::string to_string(ChatRole role);
std::string to_string(TaskKind task);
std::string to_string(InstructionLanguage lang);
TaskKind task_from_string(std::string_view s);
InstructionLanguage instruction_language_from_string(std::string_view s);

struct ChatSegment {
    ChatRole role = ChatRole::user;
    std::string text;
    bool supervised = false;  // only assistant segments may be supervised
};

struct ChatMeta {
    std::string source_id;
    std::string src_variety;     // mt
    std::string tgt_variety;     // mt + gen target
    InstructionLanguage instruction_language = InstructionLanguage::english;  // gen
    std::string prefix;          // gen
    std::string preamble;        // gen: completion preamble used by the assistant turn
};

struct ChatExample {
    TaskKind task = TaskKind::mt;
    ChatMeta meta;
    std::vector<ChatSegment> segments;  // exactly one user then one assistant

    const ChatSegment& user() const;
    const ChatSegment& assistant() const;
};

// Translation instruction per the fixed layout:
//   Translate from <SRC> into <TGT>.[ Output only the translation.]\n<source>\nTranslation:
ChatExample render_mt(const BitextExample& example, const VarietyRegistry& registry, bool strict_output_clause = true);

// First n whitespace tokens joined by single spaces; nothing when the
// sentence has no room for a continuation (<= n tokens).
std::optional<std::string> extract_prefix(std::string_view text, int n = 3);

// Sentence-completion instruction; returns nothing when extract_prefix does.
std::optional<ChatExample> render_gen(const MonoExample& example, InstructionLanguage instruction_language,
                                      const VarietyRegistry& registry, int prefix_words = 3);

// Inverse of render_mt for scoring: trims, cuts at the end-of-turn marker,
// and drops an echoed "Translation:" prompt tail.
std::string parse_mt_output(std::string_view generated);

struct GenParse {
    std::string sentence;
    bool prefix_kept = false;
};

// Strips the completion preamble (the given one, or the English pattern) and
// reports whether the expected prefix survived.
GenParse parse_gen_output(std::string_view generated, std::string_view expected_prefix,
                          InstructionLanguage instruction_language,
                          std::optional<std::string_view> preamble = std::nullopt);

// Marker used when a decoded generation still carries the turn terminator.
inline constexpr std::string_view kEndOfTurnMarker = "<|eot|>";

void write_chat_jsonl(const std::string& path, const std::vector<ChatExample>& examples);
std::vector<ChatExample> read_chat_jsonl(const std::string& path);

}  // namespace diglot
