#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "clarify/errors.hpp"

// Domain types shared by all modules. No I/O, no LLM access; everything here
// is immutable after construction and safe to share across threads.

namespace clarify {

// ---------------------------------------------------------------------------
// Ambiguity types
// ---------------------------------------------------------------------------

enum class AmbiguityKind { Semantic, Generalize, Specify };

inline constexpr std::array<AmbiguityKind, 3> kAllAmbiguityKinds = {
    AmbiguityKind::Semantic, AmbiguityKind::Generalize, AmbiguityKind::Specify};

std::string_view to_string(AmbiguityKind kind);

/// Case-insensitive on the kind name; rejects anything outside the three kinds.
AmbiguityKind ambiguity_kind_from_string(std::string_view name);

/// The canonical definition sentence for a kind.
const std::string& ambiguity_definition(AmbiguityKind kind);

/// One of the three action-oriented ambiguity categories together with its
/// canonical definition sentence.
struct AmbiguityType {
    AmbiguityKind kind;
    std::string definition_text;

    static AmbiguityType of(AmbiguityKind kind) {
        return {kind, ambiguity_definition(kind)};
    }
};

// ---------------------------------------------------------------------------
// Prompting schemes and interaction scenarios
// ---------------------------------------------------------------------------

enum class PromptScheme { Standard, AtStandard, Cot, AtCot };

inline constexpr std::array<PromptScheme, 4> kAllPromptSchemes = {
    PromptScheme::Standard, PromptScheme::AtStandard, PromptScheme::Cot,
    PromptScheme::AtCot};

std::string_view to_string(PromptScheme scheme);   // "standard", "at_standard", ...
std::string_view display_name(PromptScheme scheme);  // "standard", "AT-standard", ...
PromptScheme scheme_from_string(std::string_view name);

bool is_at_scheme(PromptScheme scheme);   // AT definitions included in prompt
bool is_cot_scheme(PromptScheme scheme);  // reasoning requested before output

enum class Scenario { Select, Respond };

std::string_view to_string(Scenario scenario);
Scenario scenario_from_string(std::string_view name);

// ---------------------------------------------------------------------------
// Queries, intents, clarifications
// ---------------------------------------------------------------------------

struct Query {
    std::string query_id;
    std::string text;  // trimmed, non-empty
    std::optional<int> ambiguity_level;  // in [1,4] when present

    /// Trims text and checks invariants.
    static Query make(std::string query_id, std::string text,
                      std::optional<int> ambiguity_level = std::nullopt);
};

struct UserIntent {
    std::string intent_id;
    std::string query_id;
    std::string description;  // non-empty

    static UserIntent make(std::string intent_id, std::string query_id,
                           std::string description);
};

enum class ClarificationKind { ClarifyingQuestion, ReformulatedQuery };

std::string_view to_string(ClarificationKind kind);
ClarificationKind clarification_kind_from_string(std::string_view name);

/// Kind ClarifyingQuestion under scenario respond; ReformulatedQuery under select.
ClarificationKind clarification_kind_for(Scenario scenario);

struct Clarification {
    ClarificationKind kind;
    std::string text;  // verbatim, never normalized here
};

// ---------------------------------------------------------------------------
// Structured LLM output
// ---------------------------------------------------------------------------

struct GenerationOutput {
    std::optional<std::string> reasoning;
    std::optional<std::vector<AmbiguityKind>> predicted_types;
    std::vector<Clarification> clarifications;  // non-empty

    /// Checks the per-scheme invariants: reasoning present iff CoT-scheme,
    /// predicted_types only for AT-CoT and then a non-empty duplicate-free
    /// subset of the three kinds, clarifications non-empty.
    void validate(PromptScheme scheme) const;
};

// ---------------------------------------------------------------------------
// Conversations
// ---------------------------------------------------------------------------

struct Turn {
    int index = 1;  // >= 1
    std::vector<Clarification> offered;
    std::string user_reply;  // selected RQ text, or free-text answer
    std::optional<std::string> reformulated_query;  // present after respond turns
};

struct Conversation {
    Query query;
    UserIntent intent;
    Scenario scenario = Scenario::Respond;
    PromptScheme scheme = PromptScheme::Standard;
    std::vector<Turn> turns;  // indices 1..len contiguous

    int completed_turns() const { return static_cast<int>(turns.size()); }
};

/// Checks turn indexing, select-membership, respond reformulations and kind
/// coherence for every committed turn.
void validate(const Conversation& conversation);

/// The query carried into retrieval at a given turn: turn 0 is the original
/// text; under select the turn's selected reformulation; under respond the
/// turn's reformulated_query.
std::string effective_query(const Conversation& conversation, int turn_index);

// ---------------------------------------------------------------------------
// Serialization (canonical flat JSON objects, snake_case field names)
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const AmbiguityType& v);
void from_json(const nlohmann::json& j, AmbiguityType& v);
void to_json(nlohmann::json& j, const Query& v);
void from_json(const nlohmann::json& j, Query& v);
void to_json(nlohmann::json& j, const UserIntent& v);
void from_json(const nlohmann::json& j, UserIntent& v);
void to_json(nlohmann::json& j, const Clarification& v);
void from_json(const nlohmann::json& j, Clarification& v);
void to_json(nlohmann::json& j, const GenerationOutput& v);
void from_json(const nlohmann::json& j, GenerationOutput& v);
void to_json(nlohmann::json& j, const Turn& v);
void from_json(const nlohmann::json& j, Turn& v);
void to_json(nlohmann::json& j, const Conversation& v);
void from_json(const nlohmann::json& j, Conversation& v);

/// Trims ASCII whitespace from both ends.
std::string trim(std::string_view s);

}  // namespace clarify
