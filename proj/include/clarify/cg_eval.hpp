#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clarify/core.hpp"
#include "clarify/llm_backend.hpp"

// Clarification-generation scoring: similarity matrix between generated and
// annotated clarifications, per-query max aggregation, dataset means on the
// 0-100 scale, stratification by ambiguity level and the predicted-type
// distribution table.

namespace clarify::cg_eval {

/// Token-level F1 over lowercased alphanumeric tokens. Empty vs empty is 1,
/// empty vs non-empty is 0. Deterministic fallback scorer; symmetric.
double lexical_score(const std::string& a, const std::string& b);

/// Similarity in [0,1]. Implementations must be safe for concurrent score
/// calls.
class SimilarityScorer {
public:
    virtual ~SimilarityScorer() = default;
    virtual double score(const std::string& candidate,
                         const std::string& reference) = 0;
    /// Elementwise over aligned pairs; batched where the backend allows.
    virtual std::vector<double> score_pairs(
        const std::vector<std::pair<std::string, std::string>>& pairs);
    virtual std::string identity() const = 0;
};

class LexicalScorer : public SimilarityScorer {
public:
    double score(const std::string& candidate,
                 const std::string& reference) override {
        return lexical_score(candidate, reference);
    }
    std::string identity() const override { return "lexical-f1"; }
};

/// Cosine similarity of service embeddings mapped onto [0,1] via (cos+1)/2.
/// Embeddings are cached per text; batch scoring embeds each unique text once.
class EmbeddingScorer : public SimilarityScorer {
public:
    explicit EmbeddingScorer(llm::EmbedFn embed_fn,
                             std::string identity = "embedding-cosine");

    double score(const std::string& candidate,
                 const std::string& reference) override;
    std::vector<double> score_pairs(
        const std::vector<std::pair<std::string, std::string>>& pairs) override;
    std::string identity() const override { return identity_; }

private:
    /// Fetches any texts missing from the cache in one service call.
    void ensure_cached(const std::vector<std::string>& texts);

    llm::EmbedFn embed_fn_;
    std::string identity_;
    std::mutex mutex_;
    std::map<std::string, std::vector<double>> cache_;
};

struct ScoreMatrix {
    std::vector<std::string> generated;  // M
    std::vector<std::string> annotated;  // N
    std::vector<std::vector<double>> values;  // M x N, each in [0,1]
};

/// values[i][j] = scorer.score(generated[i], annotated[j]).
ScoreMatrix score_matrix(const std::vector<std::string>& generated,
                         const std::vector<std::string>& annotated,
                         SimilarityScorer& scorer);

/// Max over all matrix entries: a generation method is good if any generated
/// clarification is highly similar to any reference.
double query_score(const ScoreMatrix& matrix);

/// One dataset item: the query and its annotated reference clarifications.
struct CgQuery {
    Query query;
    std::vector<std::string> annotated;
};

struct QueryScore {
    std::string query_id;
    double score = 0.0;  // [0,1]
};

struct AtDistributionRow {
    AmbiguityKind kind = AmbiguityKind::Semantic;
    int count = 0;             // queries whose prediction set holds the kind
    double frequency_pct = 0;  // share of queries, in [0,100]
    double delta_score = 0;    // mean score gap over those queries, x100
    bool has_delta = false;
};

struct CgReport {
    std::string scorer_identity;
    std::string config_hash;  // provenance, filled by the caller
    std::vector<QueryScore> per_query;
    std::vector<std::string> skipped;  // query ids lacking generations
    double dataset_score = 0.0;        // mean per-query score x100
    std::map<int, double> per_level;   // ambiguity level -> mean x100
    std::map<int, int> per_level_counts;
    std::vector<AtDistributionRow> at_rows;
};

void to_json(nlohmann::json& j, const CgReport& v);
void from_json(const nlohmann::json& j, CgReport& v);

/// Scores every query with at least one generation; queries without
/// generations are skipped and counted, never averaged.
CgReport evaluate_dataset(
    const std::vector<CgQuery>& items,
    const std::map<std::string, std::vector<std::string>>& generations,
    SimilarityScorer& scorer);

/// Mean score x100 per ambiguity level. Queries absent from the level map
/// are excluded with a warning (collected into `missing` when given).
std::map<int, double> stratify_by_level(
    const std::vector<QueryScore>& per_query,
    const std::map<std::string, int>& levels,
    std::vector<std::string>* missing = nullptr);

/// Frequency of each predicted kind over the queries (shares can sum past
/// 100; a query may carry several kinds) and the mean score gap between the
/// two schemes over exactly the queries predicting that kind.
std::vector<AtDistributionRow> at_distribution(
    const std::map<std::string, std::vector<AmbiguityKind>>& predictions,
    const std::map<std::string, double>& atcot_scores,
    const std::map<std::string, double>& cot_scores);

// --- report rendering --------------------------------------------------------

/// "80.6" plus any marker suffix, one decimal.
std::string format_score(double value_x100, const std::string& markers = "");

/// "44.6 (up 1.3)" style cell: frequency plus signed score delta.
std::string format_at_cell(const AtDistributionRow& row);

/// Fixed-width plain-text table; first column holds row names.
std::string render_table(const std::string& title,
                         const std::vector<std::string>& column_names,
                         const std::vector<std::string>& row_names,
                         const std::vector<std::vector<std::string>>& cells);

/// Line-delimited report: one summary record then one record per query.
void write_report_jsonl(const CgReport& report,
                        const std::filesystem::path& path);

}  // namespace clarify::cg_eval
