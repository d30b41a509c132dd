#include "clarify/offline_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "clarify/core.hpp"

namespace clarify::llm {

namespace {

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::vector<std::string> tokenize_lower(const std::string& s) {
    std::vector<std::string> out;
    std::string word;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!word.empty()) {
            out.push_back(word);
            word.clear();
        }
    }
    if (!word.empty()) out.push_back(word);
    return out;
}

double token_f1(const std::string& a, const std::string& b) {
    const auto ta = tokenize_lower(a);
    const auto tb = tokenize_lower(b);
    if (ta.empty() || tb.empty()) return 0.0;
    std::multiset<std::string> counts(tb.begin(), tb.end());
    size_t common = 0;
    for (const auto& t : ta) {
        const auto it = counts.find(t);
        if (it != counts.end()) {
            counts.erase(it);
            ++common;
        }
    }
    if (common == 0) return 0.0;
    const double p = static_cast<double>(common) / ta.size();
    const double r = static_cast<double>(common) / tb.size();
    return 2 * p * r / (p + r);
}

std::string line_after(const std::string& text, const std::string& prefix) {
    size_t pos = text.rfind("\n" + prefix);
    if (pos != std::string::npos) {
        pos += 1;
    } else if (text.rfind(prefix, 0) == 0) {
        pos = 0;
    } else {
        return "";
    }
    const size_t start = pos + prefix.size();
    const size_t end = text.find('\n', start);
    return text.substr(start, end == std::string::npos ? std::string::npos
                                                       : end - start);
}

const std::string& payload_message(const MessageList& messages) {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == Role::User &&
            it->content.find("Conversation history:") != std::string::npos) {
            return it->content;
        }
    }
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == Role::User) return it->content;
    }
    throw ScriptError("offline backend saw no user message");
}

std::string generation_reply(const std::string& system, const std::string& user) {
    const std::string query = clarify::trim(line_after(user, "Current query: "));
    const bool select = system.find("reformulated quer") != std::string::npos;
    const bool at = system.find("possible ambiguity types:") != std::string::npos;
    const bool cot =
        system.find("textual explanation of your reasoning") != std::string::npos;

    int n = 1;
    const size_t gen = system.find("generate ");
    if (gen != std::string::npos) {
        const size_t digits = gen + 9;
        if (digits < system.size() &&
            std::isdigit(static_cast<unsigned char>(system[digits]))) {
            n = std::stoi(system.substr(digits));
        }
    }

    // scheme markers shift the hash so the four schemes disagree, as real
    // prompt variants would
    const uint64_t h = fnv1a(query) ^ (at ? 0x9e3779b97f4a7c15ull : 0) ^
                       (cot ? 0xc2b2ae3d27d4eb4full : 0);
    static const char* kQuestionForms[8] = {
        "Are you looking for general information about %s or something specific?",
        "Which aspect of %s matters most to you?",
        "Do you want recent material related to %s?",
        "Is %s about a particular place, time, or product for you?",
        "Should results about %s focus on practical guidance or background?",
        "Do you mean %s in one particular sense, and if so which one?",
        "What do you plan to do with the results about %s?",
        "Would you like %s compared against the common alternatives?"};
    static const char* kQuerySuffixes[8] = {
        "overview",       "detailed guide", "latest updates",
        "examples",       "explained simply", "meaning",
        "for beginners",  "comparison"};

    std::vector<std::string> clarifications;
    for (int i = 0; i < n; ++i) {
        const size_t slot = (h + static_cast<size_t>(i)) % 8;
        if (select) {
            clarifications.push_back(query + " " + kQuerySuffixes[slot]);
        } else {
            const std::string form = kQuestionForms[slot];
            const size_t marker = form.find("%s");
            clarifications.push_back(form.substr(0, marker) + query +
                                     form.substr(marker + 2));
        }
    }

    nlohmann::json reply;
    if (cot) {
        static const std::pair<const char*, std::vector<const char*>> kTypeSets[5] = {
            {"is Semantic, since a key term has more than one sense, and "
             "Specify applies because the scope is broad",
             {"Semantic", "Specify"}},
            {"calls for Specify: the focus is clear but the scope is too wide",
             {"Specify"}},
            {"is Semantic: the phrasing supports several distinct readings",
             {"Semantic"}},
            {"mixes Generalize and Specify: a broader framing may fit the real "
             "need, or the scope may narrow",
             {"Generalize", "Specify"}},
            {"is Semantic and could Generalize to a wider information need",
             {"Semantic", "Generalize"}}};
        const auto& chosen = kTypeSets[h % 5];
        if (at) {
            reply["reasoning"] = "The query '" + query + "' " + chosen.first +
                                 ". Clarifying along these lines should "
                                 "separate the candidate intents.";
            reply["ambiguity_types"] = chosen.second;
        } else {
            reply["reasoning"] =
                "The query '" + query +
                "' admits more than one reading and its scope is not pinned "
                "down, so the clarification should separate the likely "
                "readings.";
        }
    }
    reply["clarifications"] = clarifications;

    // A share of replies wrap the object in prose, as real models do.
    if (h % 3 == 0) {
        return "Here is the requested JSON:\n" + reply.dump() +
               "\nLet me know if you need anything else.";
    }
    return reply.dump();
}

std::string select_reply(const std::string& user) {
    const size_t list_start = user.find("Reformulated queries:");
    const size_t intent_start = user.find("User intent: ");
    if (list_start == std::string::npos || intent_start == std::string::npos) {
        throw ScriptError("select response prompt misses its sections");
    }
    const std::string intent = user.substr(intent_start + 13);

    std::istringstream lines(
        user.substr(list_start, intent_start - list_start));
    std::string line;
    std::vector<std::string> options;
    while (std::getline(lines, line)) {
        const size_t dot = line.find(". ");
        if (dot == std::string::npos || dot == 0) continue;
        const std::string head = line.substr(0, dot);
        if (std::all_of(head.begin(), head.end(), [](unsigned char c) {
                return std::isdigit(c);
            })) {
            options.push_back(line.substr(dot + 2));
        }
    }
    if (options.empty()) {
        throw ScriptError("select response prompt offers no options");
    }
    size_t best = 0;
    double best_score = -1.0;
    for (size_t i = 0; i < options.size(); ++i) {
        const double s = token_f1(options[i], intent);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return options[best];
}

std::string respond_reply(const std::string& user) {
    const size_t intent_start = user.find("User intent: ");
    if (intent_start == std::string::npos) {
        throw ScriptError("respond response prompt misses the intent");
    }
    const std::string question =
        clarify::trim(line_after(user, "Clarifying question: "));
    std::string intent = clarify::trim(user.substr(intent_start + 13));
    const auto tokens = tokenize_lower(intent);
    // answers are partial: which detail stays unsaid depends on the question
    const uint64_t qh = fnv1a(question);
    std::string summary;
    size_t taken = 0;
    for (size_t i = 0; i < tokens.size() && taken < 25; ++i) {
        if ((i + qh) % 4 == 0) continue;
        if (!summary.empty()) summary += " ";
        summary += tokens[i];
        ++taken;
    }
    if (summary.empty() && !tokens.empty()) summary = tokens.front();
    return "I am interested in " + summary + ".";
}

std::string reformulation_reply(const std::string& user) {
    std::istringstream lines(user);
    std::string line;
    std::vector<std::string> user_lines;
    while (std::getline(lines, line)) {
        if (line.rfind("User: ", 0) == 0) user_lines.push_back(line.substr(6));
    }
    if (user_lines.empty()) {
        throw ScriptError("reformulation prompt has no user lines");
    }
    static const std::set<std::string> kStop = {
        "i",  "am", "a",   "an",  "the", "in", "of", "or",  "to", "for",
        "and", "is", "are", "interested", "mean", "yes", "no", "you",
        "do", "want", "looking", "about"};
    std::vector<std::string> kept;
    std::set<std::string> seen;
    for (const auto& text : user_lines) {
        for (const auto& token : tokenize_lower(text)) {
            if (kStop.count(token) || !seen.insert(token).second) continue;
            kept.push_back(token);
            if (kept.size() >= 24) break;
        }
        if (kept.size() >= 24) break;
    }
    std::string out;
    for (const auto& token : kept) {
        if (!out.empty()) out += " ";
        out += token;
    }
    return out.empty() ? user_lines.front() : out;
}

}  // namespace

std::string OfflineChatBackend::complete(const MessageList& messages,
                                         const SamplingParams&) {
    if (messages.empty() || messages.front().role != Role::System) {
        throw ScriptError("offline backend needs a leading system message");
    }
    const std::string& system = messages.front().content;
    const std::string& user = payload_message(messages);

    if (system.rfind("Given a query in an information-seeking system", 0) == 0) {
        return generation_reply(system, user);
    }
    if (system.find("choose the reformulated query that most accurately") !=
        std::string::npos) {
        return select_reply(user);
    }
    if (system.find("respond to the clarification question") != std::string::npos) {
        return respond_reply(user);
    }
    if (system.rfind("Given a conversation history, summarize", 0) == 0) {
        return reformulation_reply(user);
    }
    throw ScriptError("offline backend does not recognize this prompt");
}

EmbedFn deterministic_embed_fn(int dims) {
    if (dims < 2) throw ArgumentError("embedding needs >= 2 dimensions");
    return [dims](const std::vector<std::string>& texts) {
        if (texts.empty()) throw ArgumentError("no texts to embed");
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (const auto& text : texts) {
            std::vector<double> v(static_cast<size_t>(dims), 0.0);
            for (const auto& token : tokenize_lower(text)) {
                const uint64_t h = fnv1a(token);
                v[h % static_cast<uint64_t>(dims)] +=
                    (h >> 32) % 2 == 0 ? 1.0 : -1.0;
            }
            double norm = 0;
            for (double x : v) norm += x * x;
            if (norm == 0) {
                v[0] = 1.0;  // empty or fully cancelled text: fixed unit vector
            } else {
                norm = std::sqrt(norm);
                for (double& x : v) x /= norm;
            }
            out.push_back(std::move(v));
        }
        return out;
    };
}

}  // namespace clarify::llm
