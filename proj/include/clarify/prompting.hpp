#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "clarify/core.hpp"
#include "clarify/llm_backend.hpp"

// Assembles the exact prompt text for every LLM call (generation, response,
// reformulation), and parses structured LLM replies including the retry loop.
// All builders are pure; canonical texts are mirrored byte-exactly under
// fixtures/prompts/.

namespace clarify::prompting {

enum class Purpose { Generation, Response, Reformulation };

/// Fully assembled message sequence for one LLM call. First message is
/// always the system instruction.
struct PromptBundle {
    llm::MessageList messages;
    PromptScheme scheme = PromptScheme::Standard;
    Purpose purpose = Purpose::Generation;

    const std::string& system_text() const { return messages.front().content; }
};

/// An in-context example: a fresh query and its reference structured output.
struct FewShotExample {
    std::string input_query;
    nlohmann::json expected_output;
};

/// Curated exemplars per (scheme, scenario); loadable from a fixtures file
/// and overridable, with built-in defaults.
class FewShotSet {
public:
    static FewShotSet defaults();
    static FewShotSet load(const std::filesystem::path& file);
    static FewShotSet none() { return FewShotSet{}; }

    const std::vector<FewShotExample>& get(PromptScheme scheme,
                                           Scenario scenario) const;

private:
    // [scheme][scenario]
    std::vector<FewShotExample> shots_[4][2];
};

/// The structured-output contract for one scheme: which top-level fields the
/// reply must carry and the format instruction appended to the system text.
struct OutputSchema {
    PromptScheme scheme = PromptScheme::Standard;
    ClarificationKind kind = ClarificationKind::ClarifyingQuestion;
    std::vector<std::string> required_fields;
    std::string format_instruction;
};

OutputSchema make_output_schema(PromptScheme scheme, Scenario scenario);

// --- canonical prompt texts -------------------------------------------------

namespace text {

/// The three ambiguity-type definitions, one "Kind: definition" line each.
std::string ambiguity_definitions_block();

/// System instruction for a generation call, format instruction included.
std::string generation_system(PromptScheme scheme, Scenario scenario,
                              int n_outputs);

/// System instruction for the simulated user's reply.
std::string response_system(Scenario scenario);

/// System instruction turning a respond conversation into a query.
std::string reformulation_system();

}  // namespace text

/// Chat history block used by every user message: the initial query and each
/// committed turn, rendered turn by turn.
std::string render_history(const Conversation& conversation);

// --- bundle builders ---------------------------------------------------------

/// System message instructs generating exactly n_outputs clarifications of
/// the kind matching the scenario; user message carries the rendered history
/// and the current effective query; few-shot examples sit in between.
PromptBundle build_generation_prompt(PromptScheme scheme, Scenario scenario,
                                     const Conversation& conversation,
                                     const std::vector<FewShotExample>& few_shots,
                                     int n_outputs);

/// Select expects >= 2 offered reformulations, respond exactly one question.
PromptBundle build_response_prompt(Scenario scenario,
                                   const Conversation& conversation,
                                   const std::vector<Clarification>& offered,
                                   const UserIntent& intent);

/// Respond conversations only; requires at least one committed turn.
PromptBundle build_reformulation_prompt(const Conversation& conversation);

// --- output parsing -----------------------------------------------------------

/// Parses one structured reply. Leading/trailing prose around a single
/// well-formed JSON object is tolerated and stripped; fields outside the
/// schema are ignored. Throws ParseError carrying the offending fragment.
GenerationOutput parse_generation_output(const std::string& raw,
                                         const OutputSchema& schema);

/// Sends the bundle, retrying on parse failures up to max_retries times.
/// Each retry re-sends the same bundle plus one corrective user message
/// naming the parse error. Exhaustion carries every raw attempt.
GenerationOutput generate_with_retry(llm::ChatBackend& backend,
                                     const PromptBundle& bundle,
                                     const OutputSchema& schema,
                                     const llm::SamplingParams& params,
                                     int max_retries = 10);

/// Fallback extractor for outputs lacking the structured ambiguity_types
/// field: case-insensitive whole-word scan, deduplicated, ordered
/// Semantic, Generalize, Specify.
std::vector<AmbiguityKind> extract_predicted_types(std::string_view reasoning);

}  // namespace clarify::prompting
