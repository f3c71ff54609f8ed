#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace diglot {

// UTF-8 <-> code point helpers. Invalid byte sequences decode to U+FFFD.
std::vector<char32_t> utf8_decode(std::string_view s);
std::string utf8_encode(const std::vector<char32_t>& cps);

// Unicode NFC (canonical composition), via ICU. ASCII input is returned as-is.
std::string nfc(std::string_view s);

bool is_ascii_space(char32_t c);

std::string trim(std::string_view s);

// Whitespace-delimited tokens; runs of whitespace collapse.
std::vector<std::string> split_ws(std::string_view s);

// Tokens re-joined with single spaces.
std::string normalize_ws(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool starts_with(std::string_view s, std::string_view prefix);

// Replaces every occurrence of `from` (non-empty) with `to`.
std::string replace_all(std::string_view s, std::string_view from, std::string_view to);

}  // namespace diglot
