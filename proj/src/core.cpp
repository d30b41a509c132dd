#include "clarify/core.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace clarify {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Canonical definition sentences. Byte-identical copies live in
// fixtures/prompts/ambiguity_type_definitions.txt; a test keeps them in sync.
const std::string kSemanticDefinition =
    "The query is semantically ambiguous for several common reasons: it may "
    "include homonyms; a word in the query may refer to a specific entity while "
    "also functioning as a common word; or an entity mentioned in the query "
    "could refer to multiple distinct entities.";

const std::string kGeneralizeDefinition =
    "The query focuses on specific information; however, a broader, closely "
    "related query might better capture the user's true information needs.";

const std::string kSpecifyDefinition =
    "The query has a clear focus but may encompass too broad a research scope. "
    "It is possible to further narrow down this scope by providing more "
    "specific information related to the query.";

}  // namespace

std::string trim(std::string_view s) {
    size_t begin = 0;
    size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return std::string(s.substr(begin, end - begin));
}

std::string_view to_string(AmbiguityKind kind) {
    switch (kind) {
        case AmbiguityKind::Semantic: return "Semantic";
        case AmbiguityKind::Generalize: return "Generalize";
        case AmbiguityKind::Specify: return "Specify";
    }
    return "Semantic";
}

AmbiguityKind ambiguity_kind_from_string(std::string_view name) {
    const std::string n = lower(trim(name));
    if (n == "semantic") return AmbiguityKind::Semantic;
    if (n == "generalize") return AmbiguityKind::Generalize;
    if (n == "specify") return AmbiguityKind::Specify;
    throw ParseError("unknown ambiguity type: '" + std::string(name) + "'",
                     std::string(name));
}

const std::string& ambiguity_definition(AmbiguityKind kind) {
    switch (kind) {
        case AmbiguityKind::Semantic: return kSemanticDefinition;
        case AmbiguityKind::Generalize: return kGeneralizeDefinition;
        case AmbiguityKind::Specify: return kSpecifyDefinition;
    }
    return kSemanticDefinition;
}

std::string_view to_string(PromptScheme scheme) {
    switch (scheme) {
        case PromptScheme::Standard: return "standard";
        case PromptScheme::AtStandard: return "at_standard";
        case PromptScheme::Cot: return "cot";
        case PromptScheme::AtCot: return "at_cot";
    }
    return "standard";
}

std::string_view display_name(PromptScheme scheme) {
    switch (scheme) {
        case PromptScheme::Standard: return "standard";
        case PromptScheme::AtStandard: return "AT-standard";
        case PromptScheme::Cot: return "CoT";
        case PromptScheme::AtCot: return "AT-CoT";
    }
    return "standard";
}

PromptScheme scheme_from_string(std::string_view name) {
    const std::string n = lower(trim(name));
    if (n == "standard") return PromptScheme::Standard;
    if (n == "at_standard" || n == "at-standard") return PromptScheme::AtStandard;
    if (n == "cot") return PromptScheme::Cot;
    if (n == "at_cot" || n == "at-cot") return PromptScheme::AtCot;
    throw ParseError("unknown prompt scheme: '" + std::string(name) + "'",
                     std::string(name));
}

bool is_at_scheme(PromptScheme scheme) {
    return scheme == PromptScheme::AtStandard || scheme == PromptScheme::AtCot;
}

bool is_cot_scheme(PromptScheme scheme) {
    return scheme == PromptScheme::Cot || scheme == PromptScheme::AtCot;
}

std::string_view to_string(Scenario scenario) {
    return scenario == Scenario::Select ? "select" : "respond";
}

Scenario scenario_from_string(std::string_view name) {
    const std::string n = lower(trim(name));
    if (n == "select") return Scenario::Select;
    if (n == "respond") return Scenario::Respond;
    throw ParseError("unknown scenario: '" + std::string(name) + "'",
                     std::string(name));
}

std::string_view to_string(ClarificationKind kind) {
    return kind == ClarificationKind::ClarifyingQuestion ? "clarifying_question"
                                                         : "reformulated_query";
}

ClarificationKind clarification_kind_from_string(std::string_view name) {
    const std::string n = lower(trim(name));
    if (n == "clarifying_question") return ClarificationKind::ClarifyingQuestion;
    if (n == "reformulated_query") return ClarificationKind::ReformulatedQuery;
    throw ParseError("unknown clarification kind: '" + std::string(name) + "'",
                     std::string(name));
}

ClarificationKind clarification_kind_for(Scenario scenario) {
    return scenario == Scenario::Respond ? ClarificationKind::ClarifyingQuestion
                                         : ClarificationKind::ReformulatedQuery;
}

Query Query::make(std::string query_id, std::string text,
                  std::optional<int> ambiguity_level) {
    Query q;
    q.query_id = std::move(query_id);
    q.text = trim(text);
    if (q.text.empty()) {
        throw ValidationError("query text must be non-empty (query_id=" +
                              q.query_id + ")");
    }
    if (ambiguity_level && (*ambiguity_level < 1 || *ambiguity_level > 4)) {
        throw ValidationError("ambiguity_level must be in [1,4], got " +
                              std::to_string(*ambiguity_level));
    }
    q.ambiguity_level = ambiguity_level;
    return q;
}

UserIntent UserIntent::make(std::string intent_id, std::string query_id,
                            std::string description) {
    UserIntent intent{std::move(intent_id), std::move(query_id),
                      std::move(description)};
    if (intent.description.empty()) {
        throw ValidationError("intent description must be non-empty (intent_id=" +
                              intent.intent_id + ")");
    }
    return intent;
}

void GenerationOutput::validate(PromptScheme scheme) const {
    if (clarifications.empty()) {
        throw ValidationError("generation output has an empty clarifications list");
    }
    for (const auto& c : clarifications) {
        if (c.text.empty()) {
            throw ValidationError("generation output contains an empty clarification");
        }
    }
    if (is_cot_scheme(scheme)) {
        if (!reasoning) {
            throw ValidationError("reasoning is required for scheme " +
                                  std::string(to_string(scheme)));
        }
    } else if (reasoning) {
        throw ValidationError("reasoning is not allowed for scheme " +
                              std::string(to_string(scheme)));
    }
    if (scheme == PromptScheme::AtCot) {
        if (!predicted_types || predicted_types->empty()) {
            throw ValidationError("at_cot output must carry at least one predicted type");
        }
        std::set<AmbiguityKind> seen;
        for (AmbiguityKind kind : *predicted_types) {
            if (!seen.insert(kind).second) {
                throw ValidationError("duplicated predicted ambiguity type: " +
                                      std::string(to_string(kind)));
            }
        }
    } else if (predicted_types) {
        throw ValidationError("predicted types are only allowed for at_cot");
    }
}

void validate(const Conversation& conversation) {
    const ClarificationKind expected = clarification_kind_for(conversation.scenario);
    for (size_t i = 0; i < conversation.turns.size(); ++i) {
        const Turn& turn = conversation.turns[i];
        if (turn.index != static_cast<int>(i) + 1) {
            throw ValidationError("turn indices must be 1..len contiguous");
        }
        for (const auto& c : turn.offered) {
            if (c.kind != expected) {
                throw ValidationError("offered clarification kind does not match scenario");
            }
        }
        if (conversation.scenario == Scenario::Select) {
            const bool member = std::any_of(
                turn.offered.begin(), turn.offered.end(),
                [&](const Clarification& c) { return c.text == turn.user_reply; });
            if (!member) {
                throw ValidationError("select turn reply is not among offered reformulations");
            }
        } else if (!turn.reformulated_query) {
            throw ValidationError("respond turn is missing its reformulated query");
        }
    }
}

std::string effective_query(const Conversation& conversation, int turn_index) {
    const int completed = conversation.completed_turns();
    if (turn_index < 0 || turn_index > completed) {
        throw RangeError("turn index " + std::to_string(turn_index) +
                         " out of range [0," + std::to_string(completed) + "]");
    }
    if (turn_index == 0) return conversation.query.text;
    const Turn& turn = conversation.turns[static_cast<size_t>(turn_index) - 1];
    if (conversation.scenario == Scenario::Select) return turn.user_reply;
    if (!turn.reformulated_query || turn.reformulated_query->empty()) {
        throw ValidationError("respond turn " + std::to_string(turn_index) +
                              " has no reformulated query");
    }
    return *turn.reformulated_query;
}

// --- serialization ---

void to_json(nlohmann::json& j, const AmbiguityType& v) {
    j = {{"kind", to_string(v.kind)}, {"definition_text", v.definition_text}};
}

void from_json(const nlohmann::json& j, AmbiguityType& v) {
    v.kind = ambiguity_kind_from_string(j.at("kind").get<std::string>());
    v.definition_text = j.at("definition_text").get<std::string>();
}

void to_json(nlohmann::json& j, const Query& v) {
    j = {{"query_id", v.query_id}, {"text", v.text}};
    if (v.ambiguity_level) j["ambiguity_level"] = *v.ambiguity_level;
}

void from_json(const nlohmann::json& j, Query& v) {
    std::optional<int> level;
    if (j.contains("ambiguity_level") && !j.at("ambiguity_level").is_null()) {
        level = j.at("ambiguity_level").get<int>();
    }
    v = Query::make(j.at("query_id").get<std::string>(),
                    j.at("text").get<std::string>(), level);
}

void to_json(nlohmann::json& j, const UserIntent& v) {
    j = {{"intent_id", v.intent_id},
         {"query_id", v.query_id},
         {"description", v.description}};
}

void from_json(const nlohmann::json& j, UserIntent& v) {
    v = UserIntent::make(j.at("intent_id").get<std::string>(),
                         j.at("query_id").get<std::string>(),
                         j.at("description").get<std::string>());
}

void to_json(nlohmann::json& j, const Clarification& v) {
    j = {{"kind", to_string(v.kind)}, {"text", v.text}};
}

void from_json(const nlohmann::json& j, Clarification& v) {
    v.kind = clarification_kind_from_string(j.at("kind").get<std::string>());
    v.text = j.at("text").get<std::string>();
}

void to_json(nlohmann::json& j, const GenerationOutput& v) {
    j = nlohmann::json::object();
    if (v.reasoning) j["reasoning"] = *v.reasoning;
    if (v.predicted_types) {
        auto arr = nlohmann::json::array();
        for (AmbiguityKind kind : *v.predicted_types) arr.push_back(to_string(kind));
        j["predicted_types"] = std::move(arr);
    }
    j["clarifications"] = v.clarifications;
}

void from_json(const nlohmann::json& j, GenerationOutput& v) {
    v = GenerationOutput{};
    if (j.contains("reasoning") && !j.at("reasoning").is_null()) {
        v.reasoning = j.at("reasoning").get<std::string>();
    }
    if (j.contains("predicted_types") && !j.at("predicted_types").is_null()) {
        std::vector<AmbiguityKind> kinds;
        for (const auto& item : j.at("predicted_types")) {
            kinds.push_back(ambiguity_kind_from_string(item.get<std::string>()));
        }
        v.predicted_types = std::move(kinds);
    }
    v.clarifications = j.at("clarifications").get<std::vector<Clarification>>();
}

void to_json(nlohmann::json& j, const Turn& v) {
    j = {{"index", v.index},
         {"offered", v.offered},
         {"user_reply", v.user_reply}};
    if (v.reformulated_query) j["reformulated_query"] = *v.reformulated_query;
}

void from_json(const nlohmann::json& j, Turn& v) {
    v = Turn{};
    v.index = j.at("index").get<int>();
    v.offered = j.at("offered").get<std::vector<Clarification>>();
    v.user_reply = j.at("user_reply").get<std::string>();
    if (j.contains("reformulated_query") && !j.at("reformulated_query").is_null()) {
        v.reformulated_query = j.at("reformulated_query").get<std::string>();
    }
}

void to_json(nlohmann::json& j, const Conversation& v) {
    j = {{"query", v.query},
         {"intent", v.intent},
         {"scenario", to_string(v.scenario)},
         {"scheme", to_string(v.scheme)},
         {"turns", v.turns}};
}

void from_json(const nlohmann::json& j, Conversation& v) {
    v = Conversation{};
    v.query = j.at("query").get<Query>();
    v.intent = j.at("intent").get<UserIntent>();
    v.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    v.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    v.turns = j.at("turns").get<std::vector<Turn>>();
}

}  // namespace clarify
