#include "templating.hpp"

#include <fstream>

#include "error.hpp"
#include "json.hpp"
#include "text.hpp"

namespace diglot {

std::string to_string(ChatRole role) { return role == ChatRole::user ? "user" : "assistant"; }
std::string to_string(TaskKind task) { return task == TaskKind::mt ? "mt" : "gen"; }
std::string to_string(InstructionLanguage lang) {
    return lang == InstructionLanguage::english ? "english" : "dialectal";
}

TaskKind task_from_string(std::string_view s) {
    if (s == "mt") return TaskKind::mt;
    if (s == "gen") return TaskKind::gen;
    fail(ErrorKind::parse, "unknown task kind: '" + std::string(s) + "'");
}

InstructionLanguage instruction_language_from_string(std::string_view s) {
    if (s == "english") return InstructionLanguage::english;
    if (s == "dialectal") return InstructionLanguage::dialectal;
    fail(ErrorKind::parse, "unknown instruction language: '" + std::string(s) + "'");
}

const ChatSegment& ChatExample::user() const {
    if (segments.size() != 2 || segments[0].role != ChatRole::user)
        fail(ErrorKind::state, "chat example is not a user/assistant pair");
    return segments[0];
}

const ChatSegment& ChatExample::assistant() const {
    if (segments.size() != 2 || segments[1].role != ChatRole::assistant)
        fail(ErrorKind::state, "chat example is not a user/assistant pair");
    return segments[1];
}

ChatExample render_mt(const BitextExample& example, const VarietyRegistry& registry, bool strict_output_clause) {
    const Variety& src = registry.at(example.src_variety);
    const Variety& tgt = registry.at(example.tgt_variety);
    std::string instruction = "Translate from " + src.display_name + " into " + tgt.display_name + ".";
    if (strict_output_clause) instruction += " Output only the translation.";
    std::string user_text = instruction + "\n" + example.src_text + "\nTranslation:";

    ChatExample chat;
    chat.task = TaskKind::mt;
    chat.meta.source_id = example.id;
    chat.meta.src_variety = example.src_variety;
    chat.meta.tgt_variety = example.tgt_variety;
    chat.segments.push_back({ChatRole::user, std::move(user_text), false});
    chat.segments.push_back({ChatRole::assistant, example.tgt_text, true});
    return chat;
}

std::optional<std::string> extract_prefix(std::string_view text, int n) {
    if (n < 1) fail(ErrorKind::invalid_argument, "prefix length must be >= 1");
    auto tokens = split_ws(text);
    if (tokens.size() <= static_cast<size_t>(n)) return std::nullopt;
    tokens.resize(static_cast<size_t>(n));
    return join(tokens, " ");
}

std::optional<ChatExample> render_gen(const MonoExample& example, InstructionLanguage instruction_language,
                                      const VarietyRegistry& registry, int prefix_words) {
    const Variety& variety = registry.at(example.variety);
    auto prefix = extract_prefix(example.text, prefix_words);
    if (!prefix) return std::nullopt;

    std::string user_text, preamble;
    if (instruction_language == InstructionLanguage::english) {
        user_text = "Complete the sentence starting with these " + std::to_string(prefix_words) + " words in " +
                    variety.display_name + ": " + *prefix;
        preamble = "This is the full sentence in " + variety.display_name + ":";
    } else {
        if (variety.gen_instruction.empty() || variety.gen_preamble.empty())
            fail(ErrorKind::invalid_argument,
                 "variety '" + example.variety + "' has no dialectal instruction strings");
        user_text = replace_all(variety.gen_instruction, "<PREFIX>", *prefix);
        preamble = variety.gen_preamble;
    }

    ChatExample chat;
    chat.task = TaskKind::gen;
    chat.meta.source_id = example.id;
    chat.meta.tgt_variety = example.variety;
    chat.meta.instruction_language = instruction_language;
    chat.meta.prefix = *prefix;
    chat.meta.preamble = preamble;
    chat.segments.push_back({ChatRole::user, std::move(user_text), false});
    chat.segments.push_back({ChatRole::assistant, preamble + " " + example.text, true});
    return chat;
}

std::string parse_mt_output(std::string_view generated) {
    std::string text(generated);
    size_t eot = text.find(kEndOfTurnMarker);
    if (eot != std::string::npos) text = text.substr(0, eot);
    size_t echo = text.find("Translation:");
    if (echo != std::string::npos) text = text.substr(echo + std::string_view("Translation:").size());
    return trim(text);
}

GenParse parse_gen_output(std::string_view generated, std::string_view expected_prefix,
                          InstructionLanguage instruction_language, std::optional<std::string_view> preamble) {
    std::string text(generated);
    size_t eot = text.find(kEndOfTurnMarker);
    if (eot != std::string::npos) text = text.substr(0, eot);
    text = trim(text);

    if (preamble && !preamble->empty()) {
        std::string head = trim(*preamble);
        if (starts_with(text, head)) text = trim(text.substr(head.size()));
    } else if (instruction_language == InstructionLanguage::english) {
        constexpr std::string_view head = "This is the full sentence in ";
        if (starts_with(text, head)) {
            size_t colon = text.find(':', head.size());
            if (colon != std::string::npos) text = trim(text.substr(colon + 1));
        }
    }

    GenParse parse;
    parse.sentence = text;
    auto want = split_ws(expected_prefix);
    auto got = split_ws(text);
    parse.prefix_kept = got.size() >= want.size() && std::equal(want.begin(), want.end(), got.begin());
    return parse;
}

void write_chat_jsonl(const std::string& path, const std::vector<ChatExample>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write chat file: " + path);
    for (const auto& ex : examples) {
        nlohmann::json meta{{"source_id", ex.meta.source_id}};
        if (ex.task == TaskKind::mt) {
            meta["src_variety"] = ex.meta.src_variety;
            meta["tgt_variety"] = ex.meta.tgt_variety;
        } else {
            meta["tgt_variety"] = ex.meta.tgt_variety;
            meta["instruction_language"] = to_string(ex.meta.instruction_language);
            meta["prefix"] = ex.meta.prefix;
            meta["preamble"] = ex.meta.preamble;
        }
        nlohmann::json segments = nlohmann::json::array();
        for (const auto& seg : ex.segments)
            segments.push_back({{"role", to_string(seg.role)}, {"text", seg.text}, {"supervised", seg.supervised}});
        nlohmann::json row{{"task", to_string(ex.task)}, {"meta", std::move(meta)}, {"segments", std::move(segments)}};
        out << row.dump() << "\n";
    }
}

std::vector<ChatExample> read_chat_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open chat file: " + path);
    std::vector<ChatExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::parse, path + ": line " + std::to_string(lineno) + ": " + e.what());
        }
        ChatExample ex;
        ex.task = task_from_string(row.at("task").get<std::string>());
        const auto& meta = row.at("meta");
        ex.meta.source_id = meta.value("source_id", "");
        ex.meta.src_variety = meta.value("src_variety", "");
        ex.meta.tgt_variety = meta.value("tgt_variety", "");
        if (meta.contains("instruction_language"))
            ex.meta.instruction_language = instruction_language_from_string(meta["instruction_language"].get<std::string>());
        ex.meta.prefix = meta.value("prefix", "");
        ex.meta.preamble = meta.value("preamble", "");
        for (const auto& seg : row.at("segments")) {
            ChatSegment s;
            s.role = seg.at("role").get<std::string>() == "user" ? ChatRole::user : ChatRole::assistant;
            s.text = seg.at("text").get<std::string>();
            s.supervised = seg.at("supervised").get<bool>();
            if (s.supervised && s.role != ChatRole::assistant)
                fail(ErrorKind::parse, path + ": line " + std::to_string(lineno) + ": supervised user segment");
            ex.segments.push_back(std::move(s));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace diglot
