#include "clarify/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace clarify::prompting {

namespace {

int scheme_index(PromptScheme scheme) { return static_cast<int>(scheme); }
int scenario_index(Scenario scenario) { return static_cast<int>(scenario); }

// Sentence fragments shared by all four scheme variants. The base sentence is
// written for one clarifying question; select mode and n_outputs > 1 reuse the
// same frame with the noun phrase swapped.
std::string output_phrase(Scenario scenario, int n) {
    if (scenario == Scenario::Select) {
        return n == 1 ? "a reformulated query"
                      : std::to_string(n) + " diverse reformulated queries";
    }
    return n == 1 ? "a clarifying question"
                  : std::to_string(n) + " diverse clarifying questions";
}

std::string output_noun(Scenario scenario, int n) {
    if (scenario == Scenario::Select) {
        return n == 1 ? "the reformulated query" : "the reformulated queries";
    }
    return n == 1 ? "the clarifying question" : "the clarifying questions";
}

std::string base_sentence(Scenario scenario, int n) {
    return "Given a query in an information-seeking system, generate " +
           output_phrase(scenario, n) + " that you think " +
           (n == 1 ? "is" : "are") +
           " most appropriate to gain a better understanding of the user's "
           "intent.";
}

const std::string kAtIntro =
    " The ambiguity of a query can be multifaceted, and there are multiple "
    "possible ambiguity types:";

const std::string kAtClosing =
    "Consider the above ambiguity types when generating.";

std::string cot_sentence(Scenario scenario, int n) {
    return "Before generating " + output_noun(scenario, n) +
           ", provide a textual explanation of your reasoning about why the "
           "original query is ambiguous and how you plan to clarify it.";
}

std::string at_cot_sentence(Scenario scenario, int n) {
    return "Before generating " + output_noun(scenario, n) +
           ", provide a textual explanation of your reasoning about which "
           "types of ambiguity apply to the given query. Based on these "
           "ambiguity types, describe how you plan to clarify the original "
           "query.";
}

std::string item_placeholder(Scenario scenario) {
    return scenario == Scenario::Select ? "<reformulated query>"
                                        : "<clarifying question>";
}

const std::string kSelectResponseInstruction =
    "Imagine that you are a user seeking information with the help of a "
    "conversational assistant. At each turn of the conversation, the "
    "assistant provides you several reformulated queries to better "
    "understand your intent. Given a conversation history and a paragraph "
    "describing the user intent, choose the reformulated query that most "
    "accurately reflects the provided user intent.";

const std::string kRespondResponseInstruction =
    "Imagine that you are a user seeking information with the help of a "
    "conversational assistant. At each turn of the conversation, the "
    "assistant asks a clarification question to better understand your "
    "intent. Given a conversation history and a paragraph describing the "
    "user intent, respond to the clarification question based on the "
    "provided user intent.";

const std::string kReformulationInstruction =
    "Given a conversation history, summarize the conversation as a "
    "reformulated query. The conversation history includes the initial "
    "query and several clarification turns between the user and a virtual "
    "assistant.";

std::string truncate_fragment(std::string_view raw) {
    constexpr size_t kMax = 2000;
    if (raw.size() <= kMax) return std::string(raw);
    return std::string(raw.substr(0, kMax)) + "...";
}

// Pulls the first parseable JSON object out of a reply that may wrap it in
// prose. Balanced-brace scan, string- and escape-aware.
nlohmann::json extract_json_object(const std::string& raw) {
    for (size_t start = raw.find('{'); start != std::string::npos;
         start = raw.find('{', start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (size_t i = start; i < raw.size(); ++i) {
            char c = raw[i];
            if (escaped) {
                escaped = false;
                continue;
            }
            if (in_string) {
                if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{') ++depth;
            else if (c == '}') {
                if (--depth == 0) {
                    auto candidate = raw.substr(start, i - start + 1);
                    auto parsed =
                        nlohmann::json::parse(candidate, nullptr, false);
                    if (!parsed.is_discarded() && parsed.is_object()) {
                        return parsed;
                    }
                    break;  // malformed despite balance; try the next '{'
                }
            }
        }
    }
    throw ParseError("no JSON object found in reply", truncate_fragment(raw));
}

bool requires_field(const OutputSchema& schema, std::string_view field) {
    return std::find(schema.required_fields.begin(),
                     schema.required_fields.end(),
                     field) != schema.required_fields.end();
}

}  // namespace

OutputSchema make_output_schema(PromptScheme scheme, Scenario scenario) {
    OutputSchema schema;
    schema.scheme = scheme;
    schema.kind = clarification_kind_for(scenario);
    if (is_cot_scheme(scheme)) schema.required_fields.push_back("reasoning");
    if (scheme == PromptScheme::AtCot) {
        schema.required_fields.push_back("ambiguity_types");
    }
    schema.required_fields.push_back("clarifications");

    const std::string item = item_placeholder(scenario);
    std::string shape;
    switch (scheme) {
        case PromptScheme::Standard:
        case PromptScheme::AtStandard:
            shape = "{\"clarifications\": [\"" + item + "\", ...]}";
            break;
        case PromptScheme::Cot:
            shape = "{\"reasoning\": \"<your reasoning>\", \"clarifications\": "
                    "[\"" + item + "\", ...]}";
            break;
        case PromptScheme::AtCot:
            shape = "{\"reasoning\": \"<your reasoning>\", \"ambiguity_types\": "
                    "[\"Semantic\" | \"Generalize\" | \"Specify\", ...], "
                    "\"clarifications\": [\"" + item + "\", ...]}";
            break;
    }
    schema.format_instruction =
        "Respond with a single JSON object of the form " + shape +
        ". Output the JSON object and nothing else.";
    return schema;
}

namespace text {

std::string ambiguity_definitions_block() {
    std::string block;
    for (auto kind : kAllAmbiguityKinds) {
        block += "- ";
        block += to_string(kind);
        block += ": ";
        block += ambiguity_definition(kind);
        block += "\n";
    }
    block.pop_back();
    return block;
}

std::string generation_system(PromptScheme scheme, Scenario scenario,
                              int n_outputs) {
    if (n_outputs < 1) {
        throw ArgumentError("n_outputs must be >= 1, got " +
                            std::to_string(n_outputs));
    }
    const auto schema = make_output_schema(scheme, scenario);
    std::string s = base_sentence(scenario, n_outputs);
    switch (scheme) {
        case PromptScheme::Standard:
            break;
        case PromptScheme::AtStandard:
            s += kAtIntro + "\n" + ambiguity_definitions_block() + "\n" +
                 kAtClosing;
            break;
        case PromptScheme::Cot:
            s += "\n" + cot_sentence(scenario, n_outputs);
            break;
        case PromptScheme::AtCot:
            s += kAtIntro + "\n" + ambiguity_definitions_block() + "\n" +
                 at_cot_sentence(scenario, n_outputs);
            break;
    }
    s += "\n" + schema.format_instruction;
    return s;
}

std::string response_system(Scenario scenario) {
    if (scenario == Scenario::Select) {
        return kSelectResponseInstruction +
               "\nReply with the chosen reformulated query exactly as it is "
               "written, and nothing else.";
    }
    return kRespondResponseInstruction +
           "\nReply with your answer to the question, and nothing else.";
}

std::string reformulation_system() {
    return kReformulationInstruction +
           "\nReply with the reformulated query, and nothing else.";
}

}  // namespace text

std::string render_history(const Conversation& conversation) {
    std::string out = "Conversation history:\nUser: " + conversation.query.text;
    for (const auto& turn : conversation.turns) {
        out += "\nAssistant: ";
        for (size_t i = 0; i < turn.offered.size(); ++i) {
            if (i > 0) out += " | ";
            out += turn.offered[i].text;
        }
        out += "\nUser: " + turn.user_reply;
    }
    return out;
}

PromptBundle build_generation_prompt(PromptScheme scheme, Scenario scenario,
                                     const Conversation& conversation,
                                     const std::vector<FewShotExample>& few_shots,
                                     int n_outputs) {
    if (n_outputs < 1) {
        throw ArgumentError("n_outputs must be >= 1, got " +
                            std::to_string(n_outputs));
    }
    PromptBundle bundle;
    bundle.scheme = scheme;
    bundle.purpose = Purpose::Generation;
    bundle.messages.push_back(
        {llm::Role::System, text::generation_system(scheme, scenario, n_outputs)});
    for (const auto& shot : few_shots) {
        bundle.messages.push_back(
            {llm::Role::User, "Conversation history:\nUser: " + shot.input_query +
                                  "\nCurrent query: " + shot.input_query});
        bundle.messages.push_back(
            {llm::Role::Assistant, shot.expected_output.dump()});
    }
    const std::string current =
        effective_query(conversation, conversation.completed_turns());
    bundle.messages.push_back(
        {llm::Role::User,
         render_history(conversation) + "\nCurrent query: " + current});
    return bundle;
}

PromptBundle build_response_prompt(Scenario scenario,
                                   const Conversation& conversation,
                                   const std::vector<Clarification>& offered,
                                   const UserIntent& intent) {
    if (scenario == Scenario::Select && offered.size() < 2) {
        throw ArgumentError("select response prompt needs >= 2 offered "
                            "reformulations, got " +
                            std::to_string(offered.size()));
    }
    if (scenario == Scenario::Respond && offered.size() != 1) {
        throw ArgumentError("respond response prompt needs exactly 1 offered "
                            "question, got " +
                            std::to_string(offered.size()));
    }
    const auto expected_kind = clarification_kind_for(scenario);
    for (const auto& c : offered) {
        if (c.kind != expected_kind) {
            throw ArgumentError("offered clarification kind does not match "
                                "scenario " +
                                std::string(to_string(scenario)));
        }
    }

    PromptBundle bundle;
    bundle.purpose = Purpose::Response;
    bundle.messages.push_back({llm::Role::System, text::response_system(scenario)});

    std::string user = render_history(conversation);
    if (scenario == Scenario::Select) {
        user += "\nReformulated queries:";
        for (size_t i = 0; i < offered.size(); ++i) {
            user += "\n" + std::to_string(i + 1) + ". " + offered[i].text;
        }
    } else {
        user += "\nClarifying question: " + offered.front().text;
    }
    user += "\nUser intent: " + intent.description;
    bundle.messages.push_back({llm::Role::User, user});
    return bundle;
}

PromptBundle build_reformulation_prompt(const Conversation& conversation) {
    if (conversation.scenario != Scenario::Respond) {
        throw ArgumentError("reformulation prompts exist only under respond");
    }
    if (conversation.completed_turns() < 1) {
        throw ArgumentError("reformulation needs at least one completed turn");
    }
    PromptBundle bundle;
    bundle.purpose = Purpose::Reformulation;
    bundle.messages.push_back({llm::Role::System, text::reformulation_system()});
    bundle.messages.push_back({llm::Role::User, render_history(conversation)});
    return bundle;
}

GenerationOutput parse_generation_output(const std::string& raw,
                                         const OutputSchema& schema) {
    const auto j = extract_json_object(raw);
    for (const auto& field : schema.required_fields) {
        if (!j.contains(field)) {
            throw ParseError("missing required field '" + field + "'",
                             truncate_fragment(j.dump()));
        }
    }

    GenerationOutput out;

    if (requires_field(schema, "reasoning")) {
        const auto& r = j.at("reasoning");
        if (!r.is_string() || trim(r.get<std::string>()).empty()) {
            throw ParseError("field 'reasoning' must be a non-empty string",
                             truncate_fragment(j.dump()));
        }
        out.reasoning = r.get<std::string>();
    }

    if (requires_field(schema, "ambiguity_types")) {
        const auto& types = j.at("ambiguity_types");
        if (!types.is_array() || types.empty()) {
            throw ParseError("field 'ambiguity_types' must be a non-empty array",
                             truncate_fragment(j.dump()));
        }
        std::vector<AmbiguityKind> kinds;
        for (const auto& t : types) {
            if (!t.is_string()) {
                throw ParseError("ambiguity type entries must be strings",
                                 truncate_fragment(j.dump()));
            }
            AmbiguityKind kind;
            try {
                kind = ambiguity_kind_from_string(t.get<std::string>());
            } catch (const ArgumentError&) {
                throw ParseError("unknown ambiguity type '" +
                                     t.get<std::string>() + "'",
                                 truncate_fragment(j.dump()));
            }
            if (std::find(kinds.begin(), kinds.end(), kind) != kinds.end()) {
                throw ParseError("duplicate ambiguity type '" +
                                     t.get<std::string>() + "'",
                                 truncate_fragment(j.dump()));
            }
            kinds.push_back(kind);
        }
        out.predicted_types = std::move(kinds);
    }

    const auto& cs = j.at("clarifications");
    if (!cs.is_array() || cs.empty()) {
        throw ParseError("field 'clarifications' must be a non-empty array",
                         truncate_fragment(j.dump()));
    }
    for (const auto& c : cs) {
        if (!c.is_string() || trim(c.get<std::string>()).empty()) {
            throw ParseError("clarification entries must be non-empty strings",
                             truncate_fragment(j.dump()));
        }
        out.clarifications.push_back({schema.kind, c.get<std::string>()});
    }

    out.validate(schema.scheme);
    return out;
}

GenerationOutput generate_with_retry(llm::ChatBackend& backend,
                                     const PromptBundle& bundle,
                                     const OutputSchema& schema,
                                     const llm::SamplingParams& params,
                                     int max_retries) {
    if (max_retries < 0) {
        throw ArgumentError("max_retries must be >= 0");
    }
    std::vector<std::string> attempts;
    std::string last_error;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        llm::MessageList messages = bundle.messages;
        if (attempt > 0) {
            messages.push_back(
                {llm::Role::User, "Your previous output failed to parse: " +
                                      last_error +
                                      ". Reply with only the JSON object."});
        }
        attempts.push_back(backend.complete(messages, params));
        try {
            return parse_generation_output(attempts.back(), schema);
        } catch (const ParseError& e) {
            last_error = e.what();
        }
    }
    const auto n_attempts = attempts.size();  // read before the move below
    throw ExhaustionError("generation failed to parse after " +
                              std::to_string(n_attempts) + " attempts: " +
                              last_error,
                          std::move(attempts));
}

std::vector<AmbiguityKind> extract_predicted_types(std::string_view reasoning) {
    bool seen[3] = {false, false, false};
    std::string word;
    auto flush = [&] {
        if (word == "semantic") seen[0] = true;
        else if (word == "generalize") seen[1] = true;
        else if (word == "specify") seen[2] = true;
        word.clear();
    };
    for (char c : reasoning) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush();
        }
    }
    flush();

    std::vector<AmbiguityKind> kinds;
    for (size_t i = 0; i < 3; ++i) {
        if (seen[i]) kinds.push_back(kAllAmbiguityKinds[i]);
    }
    return kinds;
}

// ---------------------------------------------------------------------------
// Few-shot exemplars
// ---------------------------------------------------------------------------

namespace {

nlohmann::json shot_output(PromptScheme scheme, std::string reasoning,
                           std::vector<std::string> types,
                           std::vector<std::string> clarifications) {
    nlohmann::json j;
    if (is_cot_scheme(scheme)) j["reasoning"] = std::move(reasoning);
    if (scheme == PromptScheme::AtCot) j["ambiguity_types"] = std::move(types);
    j["clarifications"] = std::move(clarifications);
    return j;
}

}  // namespace

FewShotSet FewShotSet::defaults() {
    FewShotSet set;
    auto add = [&set](PromptScheme scheme, Scenario scenario, std::string query,
                      nlohmann::json output) {
        set.shots_[scheme_index(scheme)][scenario_index(scenario)].push_back(
            {std::move(query), std::move(output)});
    };

    add(PromptScheme::Standard, Scenario::Respond, "jaguar speed",
        shot_output(PromptScheme::Standard, "", {},
                    {"Are you interested in the speed of the jaguar animal or "
                     "of a Jaguar car?",
                     "Do you want the top recorded speed or a typical running "
                     "speed?",
                     "Are you asking about a specific Jaguar car model?"}));
    add(PromptScheme::Standard, Scenario::Select, "jaguar speed",
        shot_output(PromptScheme::Standard, "", {},
                    {"jaguar animal top speed km/h",
                     "jaguar f-type top speed",
                     "how fast can a jaguar run"}));

    add(PromptScheme::AtStandard, Scenario::Respond, "memory cards",
        shot_output(PromptScheme::AtStandard, "", {},
                    {"Are you looking for memory cards for a camera, a phone, "
                     "or a game console?",
                     "Do you want to buy memory cards or learn how they work?",
                     "Which storage capacity do you need?"}));
    add(PromptScheme::AtStandard, Scenario::Select, "memory cards",
        shot_output(PromptScheme::AtStandard, "", {},
                    {"best sd memory cards for dslr cameras",
                     "how flash memory cards store data",
                     "memory card capacity comparison"}));

    add(PromptScheme::Cot, Scenario::Respond, "apple storage",
        shot_output(PromptScheme::Cot,
                    "The word 'apple' may refer to the fruit or to the "
                    "technology company, so the query is open to several "
                    "readings, and it does not say which aspect of storage "
                    "matters. Asking which sense is meant should reveal the "
                    "intent.",
                    {},
                    {"Do you mean keeping apples fresh, or storage products "
                     "made by Apple?",
                     "If you mean the company, are you asking about iCloud or "
                     "device storage?",
                     "If you mean the fruit, are you asking about home storage "
                     "or commercial storage?"}));
    add(PromptScheme::Cot, Scenario::Select, "apple storage",
        shot_output(PromptScheme::Cot,
                    "The query 'apple storage' mixes two senses of 'apple' and "
                    "does not say which facet of storage is wanted, so the "
                    "reformulations should separate the readings.",
                    {},
                    {"how to store apples so they stay fresh",
                     "apple icloud storage plans and pricing",
                     "check free storage space on iphone"}));

    add(PromptScheme::AtCot, Scenario::Respond, "bank opening hours",
        shot_output(PromptScheme::AtCot,
                    "The word 'bank' is a homonym (a financial institution or "
                    "a river bank), which makes the query Semantic. The query "
                    "also names no specific institution, city, or day, so "
                    "Specify applies as well.",
                    {"Semantic", "Specify"},
                    {"Do you mean a financial bank branch?",
                     "Which bank and which city are you asking about?",
                     "Are you interested in hours for a specific day, such as "
                     "a holiday?"}));
    add(PromptScheme::AtCot, Scenario::Select, "bank opening hours",
        shot_output(PromptScheme::AtCot,
                    "The query is Semantic because 'bank' is a homonym, and "
                    "Specify because no institution, branch, or day is given. "
                    "The reformulations should pin down the institution and "
                    "the place.",
                    {"Semantic", "Specify"},
                    {"chase bank branch opening hours near me",
                     "bank of america saturday opening hours",
                     "typical retail bank opening hours on weekdays"}));
    return set;
}

FewShotSet FewShotSet::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw IngestionError("cannot open few-shot file " + file.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError("few-shot file " + file.string() +
                             " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) {
        throw IngestionError("few-shot file must hold an object keyed by scheme");
    }

    FewShotSet set;
    std::vector<std::string> offenders;
    for (auto scheme : kAllPromptSchemes) {
        const std::string scheme_key{to_string(scheme)};
        if (!j.contains(scheme_key)) continue;
        for (auto scenario : {Scenario::Select, Scenario::Respond}) {
            const std::string scenario_key{to_string(scenario)};
            if (!j[scheme_key].contains(scenario_key)) continue;
            const auto schema = make_output_schema(scheme, scenario);
            for (const auto& entry : j[scheme_key][scenario_key]) {
                FewShotExample shot;
                shot.input_query = entry.value("input_query", "");
                shot.expected_output = entry.value("expected_output",
                                                   nlohmann::json::object());
                const std::string label = scheme_key + "/" + scenario_key +
                                          ": " + shot.input_query;
                if (trim(shot.input_query).empty()) {
                    offenders.push_back(label);
                    continue;
                }
                try {
                    parse_generation_output(shot.expected_output.dump(), schema);
                } catch (const ParseError&) {
                    offenders.push_back(label);
                    continue;
                }
                set.shots_[scheme_index(scheme)][scenario_index(scenario)]
                    .push_back(std::move(shot));
            }
        }
    }
    if (!offenders.empty()) {
        throw IngestionError("few-shot examples fail their output schema",
                             offenders);
    }
    return set;
}

const std::vector<FewShotExample>& FewShotSet::get(PromptScheme scheme,
                                                   Scenario scenario) const {
    return shots_[scheme_index(scheme)][scenario_index(scenario)];
}

}  // namespace clarify::prompting
