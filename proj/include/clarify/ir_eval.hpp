#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clarify/core.hpp"
#include "clarify/llm_backend.hpp"
#include "clarify/simulation.hpp"

// Retrieval evaluation: BM25 inverted index, two-stage retrieve-rerank
// pipeline, nDCG@10 / MRR@10, and per-turn scoring of simulated runs.

namespace clarify::ir_eval {

inline constexpr double kBm25K1 = 0.9;
inline constexpr double kBm25B = 0.4;

/// Lowercase, split on non-alphanumeric, drop empties.
std::vector<std::string> tokenize(const std::string& text);

struct Posting {
    int doc = 0;  // index into doc_ids()
    int tf = 0;
};

/// Immutable inverted index; safe for concurrent searches after build.
class Corpus {
public:
    static Corpus build(const std::map<std::string, std::string>& documents);

    size_t size() const { return doc_ids_.size(); }  // N
    double avgdl() const { return avgdl_; }
    int df(const std::string& term) const;
    const std::vector<Posting>* postings(const std::string& term) const;

    const std::vector<std::string>& doc_ids() const { return doc_ids_; }
    int doc_length(int doc) const { return lengths_.at(static_cast<size_t>(doc)); }
    const std::string& doc_text(const std::string& doc_id) const;
    bool contains(const std::string& doc_id) const;

private:
    std::vector<std::string> doc_ids_;  // ascending
    std::vector<std::string> texts_;
    std::vector<int> lengths_;
    double avgdl_ = 0.0;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::unordered_map<std::string, int> id_to_index_;
};

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

/// Ordered by (score desc, doc_id asc); no duplicate doc ids.
using Ranking = std::vector<ScoredDoc>;

void sort_ranking(Ranking& ranking);

/// idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)); query terms form a set;
/// documents with no overlap are excluded.
Ranking bm25_search(const Corpus& index, const std::string& query, int k = 100);

class Reranker {
public:
    virtual ~Reranker() = default;
    /// Must return a permutation of the candidate doc ids.
    virtual Ranking rerank(const std::string& query, const Ranking& candidates,
                           const Corpus& corpus) = 0;
    virtual std::string identity() const = 0;
};

class IdentityReranker : public Reranker {
public:
    Ranking rerank(const std::string&, const Ranking& candidates,
                   const Corpus&) override {
        return candidates;
    }
    std::string identity() const override { return "identity"; }
};

/// Scores each candidate by embedding cosine between query and document
/// text; a service-backed stand-in for a neural cross-encoder.
class EmbeddingReranker : public Reranker {
public:
    explicit EmbeddingReranker(llm::EmbedFn embed_fn);
    Ranking rerank(const std::string& query, const Ranking& candidates,
                   const Corpus& corpus) override;
    std::string identity() const override { return "embedding-cosine"; }

private:
    llm::EmbedFn embed_fn_;
};

/// BM25 top-k then rerank; enforces the permutation invariant and the
/// Ranking ordering rule on the reranker output.
Ranking retrieve_rerank(const Corpus& index, const std::string& query,
                        Reranker& reranker, int k = 100);

// ---------------------------------------------------------------------------
// Relevance judgments and metrics
// ---------------------------------------------------------------------------

/// Grades per (query, facet); facet "0" covers classic single-facet qrels.
class Qrels {
public:
    /// Negative grades (spam labels) clamp to 0; duplicate
    /// (query, facet, doc) rows are rejected.
    void add(const std::string& query_id, const std::string& facet_id,
             const std::string& doc_id, int grade);

    /// Whitespace-separated "qid facet_or_iter docid grade". When
    /// column2_is_facet is false the column is ignored and facet "0" used.
    static Qrels parse_file(const std::filesystem::path& path,
                            bool column2_is_facet);
    static Qrels parse(const std::string& text, bool column2_is_facet);

    const std::map<std::string, int>* get(const std::string& query_id,
                                          const std::string& facet_id) const;
    bool has_positive(const std::string& query_id,
                      const std::string& facet_id) const;
    size_t size() const { return entries_.size(); }  // (query, facet) groups
    std::vector<std::pair<std::string, std::string>> keys() const;

private:
    std::map<std::pair<std::string, std::string>, std::map<std::string, int>>
        entries_;
};

enum class GainKind { Linear, Exponential };

/// DCG with gain grade/log2(rank+1) (linear, default) or
/// (2^grade - 1)/log2(rank+1); IDCG over all judged docs sorted by grade.
double ndcg_at_k(const Ranking& ranking,
                 const std::map<std::string, int>& grades, int k = 10,
                 GainKind gain = GainKind::Linear);

/// 1/rank of the first doc with grade >= 1 within k, else 0.
double mrr_at_k(const Ranking& ranking,
                const std::map<std::string, int>& grades, int k = 10);

// ---------------------------------------------------------------------------
// Run scoring
// ---------------------------------------------------------------------------

enum class Metric { Ndcg, Mrr };

std::string metric_label(Metric metric, int k);  // "ndcg@10", "mrr@10"

struct IrCellKey {
    PromptScheme scheme = PromptScheme::Standard;
    Scenario scenario = Scenario::Respond;
    int turn = 1;

    auto operator<=>(const IrCellKey&) const = default;
};

struct IrCell {
    double mean = 0.0;
    int count = 0;
};

struct IrReport {
    std::string metric;  // label, e.g. "ndcg@10"
    std::string gain;    // "linear" or "exponential"
    std::string config_hash;
    IrCell baseline;     // turn-0 queries over unique (query, intent) pairs
    std::map<IrCellKey, IrCell> cells;
    // per-cell conversation scores keyed "query_id.intent_id"; feeds paired
    // significance tests and re-rendering
    std::map<IrCellKey, std::map<std::string, double>> per_run;
    std::vector<std::string> skipped;  // runs without usable qrels
    int failed_runs = 0;
};

void to_json(nlohmann::json& j, const IrReport& v);
void from_json(const nlohmann::json& j, IrReport& v);

struct IrEvalOptions {
    Metric metric = Metric::Ndcg;
    GainKind gain = GainKind::Linear;
    int k_retrieve = 100;
    int k_metric = 10;
    int parallelism = 1;
};

/// Scores every committed turn of every successful run with its intent's
/// facet qrels (facet = intent id when judged, else "0"). Conversations
/// without qrels or without a positive grade are skipped and counted.
IrReport evaluate_runs(const std::vector<simulation::RunRecord>& runs,
                       const Corpus& index, Reranker& reranker,
                       const Qrels& qrels, const IrEvalOptions& options = {});

/// TREC run lines: "qid Q0 docid rank score tag".
void write_trec_run(std::ostream& out, const std::string& query_id,
                    const Ranking& ranking, const std::string& tag);

}  // namespace clarify::ir_eval
