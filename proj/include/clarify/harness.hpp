#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "clarify/cg_eval.hpp"
#include "clarify/core.hpp"
#include "clarify/data_io.hpp"
#include "clarify/ir_eval.hpp"
#include "clarify/llm_backend.hpp"
#include "clarify/simulation.hpp"

// CLI wiring: configuration, run-directory persistence and report rendering.

namespace clarify::harness {

struct RunConfig {
    std::string dataset = "dataset";

    std::filesystem::path cg_path;
    data_io::IrPaths ir_paths;
    bool facet_qrels = true;
    std::filesystem::path mapping_path;
    std::filesystem::path few_shots_path;

    std::vector<PromptScheme> schemes{PromptScheme::Standard,
                                      PromptScheme::AtStandard,
                                      PromptScheme::Cot, PromptScheme::AtCot};
    std::vector<Scenario> scenarios{Scenario::Select, Scenario::Respond};
    int max_turns = 3;
    int n_outputs = 5;          // generated per call; also the select offer count
    int n_respond_outputs = 1;  // questions offered per respond turn
    int max_parse_retries = 10;
    int intent_char_budget = 2000;
    // "single": one call asking for n_outputs; "per_output": n_outputs calls
    // asking for one each (seed bumped per call)
    std::string generation_calls = "single";

    llm::SamplingParams sampling;
    std::uint64_t seed = 0;

    std::string backend = "offline";    // offline | http
    std::string scorer = "lexical";     // lexical | embedding
    std::string reranker = "identity";  // identity | service
    llm::EndpointConfig endpoint;
    std::filesystem::path cache_path;

    std::string metric = "ndcg";  // ndcg | mrr
    std::string gain = "linear";  // linear | exponential
    int k_retrieve = 100;
    int k_metric = 10;
    bool trec_runs = false;

    double alpha = 0.01;
    bool unpaired = false;  // Welch instead of the paired test
    int parallelism = 1;
    bool resume = true;

    std::filesystem::path out_dir = "out";

    static RunConfig from_file(const std::filesystem::path& path);
    /// Canonical serialization; the basis of config_hash.
    nlohmann::json canonical() const;
    std::string config_hash() const;
};

void to_json(nlohmann::json& j, const RunConfig& v);
void from_json(const nlohmann::json& j, RunConfig& v);

/// Single-writer guard on a run directory. Holding the lock file fails fast
/// when another process owns it; released on destruction.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path file_;
};

std::shared_ptr<llm::ChatBackend> make_backend(const RunConfig& config);
std::unique_ptr<cg_eval::SimilarityScorer> make_scorer(const RunConfig& config);
std::unique_ptr<ir_eval::Reranker> make_reranker(const RunConfig& config);

void cmd_run_cg(const RunConfig& config);
void cmd_simulate(const RunConfig& config);
void cmd_eval_ir(const RunConfig& config);
void cmd_align(const RunConfig& config);
void cmd_report(const RunConfig& config);
/// Writes the canonical prompt texts and default few-shot exemplars.
void cmd_prompts(const std::filesystem::path& out_dir);

struct ConvertOptions {
    std::string format;  // "tsv" | "qulac-json"
    std::filesystem::path input;
    std::filesystem::path out_dir;
    std::filesystem::path ids_file;  // optional id subset
};

void cmd_convert(const ConvertOptions& options);

/// Full CLI. Exit codes: 0 success, 1 validation, 2 runtime failure,
/// 3 backend exhaustion.
int run_cli(int argc, char** argv);

}  // namespace clarify::harness
