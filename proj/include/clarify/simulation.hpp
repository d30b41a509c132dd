#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clarify/core.hpp"
#include "clarify/llm_backend.hpp"
#include "clarify/prompting.hpp"

// Multi-turn conversation state machine. Per turn: generate clarifications,
// obtain the simulated user's feedback, and under respond reformulate the
// whole history into a standalone query. No stopping rules; users are always
// cooperative and see their full intent description.

namespace clarify::simulation {

/// Wall-clock source for provenance timestamps; injectable so tests produce
/// byte-identical records.
using Clock = std::function<std::string()>;

/// ISO 8601 UTC, second resolution.
std::string system_clock_utc();

struct SimulationConfig {
    Scenario scenario = Scenario::Respond;
    PromptScheme scheme = PromptScheme::Standard;
    int max_turns = 3;
    int n_outputs = 1;  // clarifications requested per turn
    llm::SamplingParams sampling;
    int max_parse_retries = 10;

    /// Scenario defaults: 5 offered reformulations under select, a single
    /// question under respond.
    static SimulationConfig make(Scenario scenario, PromptScheme scheme);

    /// Respond offers exactly one question per turn; select at least two
    /// reformulations; max_turns >= 1.
    void validate() const;
};

void to_json(nlohmann::json& j, const SimulationConfig& v);
void from_json(const nlohmann::json& j, SimulationConfig& v);

struct Provenance {
    std::string backend_identity;
    /// SHA-256 over the ordered cache keys of every LLM call in the run;
    /// equal traces yield equal digests.
    std::string call_digest;
    std::string started_at;
    std::string finished_at;
};

void to_json(nlohmann::json& j, const Provenance& v);
void from_json(const nlohmann::json& j, Provenance& v);

struct RunRecord {
    SimulationConfig config;
    Conversation conversation;
    std::vector<std::string> per_turn_effective_queries;  // index 0 = original
    bool failed = false;
    std::string error;  // set when failed
    Provenance provenance;
};

void to_json(nlohmann::json& j, const RunRecord& v);
void from_json(const nlohmann::json& j, RunRecord& v);

/// On-disk run records under {root}/{dataset}/{scheme}/{scenario}/
/// {query_id}.{intent_id}, one canonical JSON line per file, plus a manifest
/// of completed keys for resume.
class RunStore {
public:
    RunStore(std::filesystem::path root, std::string dataset);

    static std::string key_for(PromptScheme scheme, Scenario scenario,
                               const std::string& query_id,
                               const std::string& intent_id);
    static std::string key_for(const RunRecord& record);

    bool has(const std::string& key) const;
    /// True when the key is persisted and its run did not fail.
    bool has_success(const std::string& key) const;
    void put(const RunRecord& record);
    RunRecord get(const std::string& key) const;
    std::vector<RunRecord> load_all() const;

    std::filesystem::path path_for(const std::string& key) const;
    const std::string& dataset() const { return dataset_; }
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path manifest_path() const;

    std::filesystem::path root_;
    std::string dataset_;
    mutable std::mutex mutex_;
    std::map<std::string, bool> keys_;  // key -> failed flag
    std::vector<std::string> order_;    // manifest order, duplicates collapsed
};

struct MatrixConfig {
    int max_turns = 3;
    int n_select_outputs = 5;
    int n_respond_outputs = 1;
    llm::SamplingParams sampling;
    int max_parse_retries = 10;
    int parallelism = 1;  // conversations run concurrently, turns sequential
};

class Simulator {
public:
    explicit Simulator(std::shared_ptr<llm::ChatBackend> backend,
                       prompting::FewShotSet few_shots = prompting::FewShotSet::defaults(),
                       Clock clock = system_clock_utc);

    /// Runs generation, response and (respond only) reformulation for the
    /// next turn of `state`. Select replies are validated to be members of
    /// the offered list, with one corrective re-ask and a nearest-match
    /// fallback.
    Turn simulate_turn(const Conversation& state, const SimulationConfig& config);

    /// Exactly config.max_turns turns; failures yield a partial record
    /// marked failed instead of throwing.
    RunRecord simulate_conversation(const Query& query, const UserIntent& intent,
                                    const SimulationConfig& config);

    /// One record per (pair, scheme, scenario), in that nesting order.
    /// Previously persisted successful records are loaded, not re-simulated;
    /// failures are recorded and the batch continues.
    std::vector<RunRecord> simulate_matrix(
        const std::vector<std::pair<Query, UserIntent>>& pairs,
        const std::vector<PromptScheme>& schemes,
        const std::vector<Scenario>& scenarios, const MatrixConfig& config,
        RunStore* store = nullptr);

private:
    Turn run_turn(llm::ChatBackend& backend, const Conversation& state,
                  const SimulationConfig& config);

    std::shared_ptr<llm::ChatBackend> backend_;
    prompting::FewShotSet few_shots_;
    Clock clock_;
};

}  // namespace clarify::simulation
