#include "clarify/ir_eval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace clarify::ir_eval {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    for (char c : text) {
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

Corpus Corpus::build(const std::map<std::string, std::string>& documents) {
    if (documents.empty()) {
        throw ArgumentError("corpus needs at least one document");
    }
    Corpus corpus;
    long long total_len = 0;
    for (const auto& [doc_id, text] : documents) {
        const int index = static_cast<int>(corpus.doc_ids_.size());
        corpus.id_to_index_[doc_id] = index;
        corpus.doc_ids_.push_back(doc_id);
        corpus.texts_.push_back(text);

        std::unordered_map<std::string, int> tf;
        int length = 0;
        for (const auto& term : tokenize(text)) {
            ++tf[term];
            ++length;
        }
        corpus.lengths_.push_back(length);
        total_len += length;
        for (const auto& [term, count] : tf) {
            corpus.postings_[term].push_back({index, count});
        }
    }
    corpus.avgdl_ =
        static_cast<double>(total_len) / static_cast<double>(documents.size());
    return corpus;
}

int Corpus::df(const std::string& term) const {
    const auto it = postings_.find(term);
    return it == postings_.end() ? 0 : static_cast<int>(it->second.size());
}

const std::vector<Posting>* Corpus::postings(const std::string& term) const {
    const auto it = postings_.find(term);
    return it == postings_.end() ? nullptr : &it->second;
}

const std::string& Corpus::doc_text(const std::string& doc_id) const {
    const auto it = id_to_index_.find(doc_id);
    if (it == id_to_index_.end()) {
        throw ArgumentError("unknown doc id '" + doc_id + "'");
    }
    return texts_[static_cast<size_t>(it->second)];
}

bool Corpus::contains(const std::string& doc_id) const {
    return id_to_index_.find(doc_id) != id_to_index_.end();
}

void sort_ranking(Ranking& ranking) {
    std::sort(ranking.begin(), ranking.end(),
              [](const ScoredDoc& a, const ScoredDoc& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.doc_id < b.doc_id;
              });
}

Ranking bm25_search(const Corpus& index, const std::string& query, int k) {
    if (k < 1) throw ArgumentError("k must be >= 1");
    const auto tokens = tokenize(query);
    std::set<std::string> terms(tokens.begin(), tokens.end());

    const double n = static_cast<double>(index.size());
    std::unordered_map<int, double> scores;
    for (const auto& term : terms) {
        const auto* postings = index.postings(term);
        if (!postings) continue;
        const double df = static_cast<double>(postings->size());
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (const auto& posting : *postings) {
            const double tf = static_cast<double>(posting.tf);
            const double norm =
                kBm25K1 * (1.0 - kBm25B +
                           kBm25B * index.doc_length(posting.doc) / index.avgdl());
            scores[posting.doc] += idf * tf * (kBm25K1 + 1.0) / (tf + norm);
        }
    }

    Ranking ranking;
    ranking.reserve(scores.size());
    for (const auto& [doc, score] : scores) {
        ranking.push_back({index.doc_ids()[static_cast<size_t>(doc)], score});
    }
    sort_ranking(ranking);
    if (static_cast<int>(ranking.size()) > k) {
        ranking.resize(static_cast<size_t>(k));
    }
    return ranking;
}

EmbeddingReranker::EmbeddingReranker(llm::EmbedFn embed_fn)
    : embed_fn_(std::move(embed_fn)) {
    if (!embed_fn_) throw ArgumentError("reranker needs an embed function");
}

Ranking EmbeddingReranker::rerank(const std::string& query,
                                  const Ranking& candidates,
                                  const Corpus& corpus) {
    if (candidates.empty()) return candidates;
    std::vector<std::string> texts{query};
    for (const auto& c : candidates) texts.push_back(corpus.doc_text(c.doc_id));
    const auto vectors = embed_fn_(texts);
    if (vectors.size() != texts.size()) {
        throw ProtocolError("embedding service returned " +
                            std::to_string(vectors.size()) + " vectors for " +
                            std::to_string(texts.size()) + " texts");
    }
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0, na = 0, nb = 0;
        for (size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        return na == 0 || nb == 0 ? 0.0 : dot / std::sqrt(na * nb);
    };
    Ranking out;
    out.reserve(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        out.push_back({candidates[i].doc_id, cosine(vectors[0], vectors[i + 1])});
    }
    sort_ranking(out);
    return out;
}

Ranking retrieve_rerank(const Corpus& index, const std::string& query,
                        Reranker& reranker, int k) {
    const Ranking candidates = bm25_search(index, query, k);
    if (candidates.empty()) return candidates;
    Ranking reranked = reranker.rerank(query, candidates, index);

    auto ids = [](const Ranking& r) {
        std::vector<std::string> out;
        out.reserve(r.size());
        for (const auto& d : r) out.push_back(d.doc_id);
        std::sort(out.begin(), out.end());
        return out;
    };
    if (ids(reranked) != ids(candidates)) {
        throw PipelineError("reranker output is not a permutation of its input");
    }
    sort_ranking(reranked);
    return reranked;
}

// ---------------------------------------------------------------------------
// Qrels
// ---------------------------------------------------------------------------

void Qrels::add(const std::string& query_id, const std::string& facet_id,
                const std::string& doc_id, int grade) {
    auto& grades = entries_[{query_id, facet_id}];
    if (grades.find(doc_id) != grades.end()) {
        throw IngestionError("duplicate qrels row",
                             {query_id + " " + facet_id + " " + doc_id});
    }
    grades[doc_id] = std::max(0, grade);
}

Qrels Qrels::parse(const std::string& text, bool column2_is_facet) {
    Qrels qrels;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream fields(line);
        std::string query_id, column2, doc_id;
        int grade = 0;
        if (!(fields >> query_id >> column2 >> doc_id >> grade)) {
            throw IngestionError("malformed qrels line " +
                                     std::to_string(line_no),
                                 {line});
        }
        qrels.add(query_id, column2_is_facet ? column2 : "0", doc_id, grade);
    }
    return qrels;
}

Qrels Qrels::parse_file(const std::filesystem::path& path,
                        bool column2_is_facet) {
    std::ifstream in(path);
    if (!in) {
        throw IngestionError("cannot open qrels file " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), column2_is_facet);
}

const std::map<std::string, int>* Qrels::get(const std::string& query_id,
                                             const std::string& facet_id) const {
    const auto it = entries_.find({query_id, facet_id});
    return it == entries_.end() ? nullptr : &it->second;
}

bool Qrels::has_positive(const std::string& query_id,
                         const std::string& facet_id) const {
    const auto* grades = get(query_id, facet_id);
    if (!grades) return false;
    return std::any_of(grades->begin(), grades->end(),
                       [](const auto& kv) { return kv.second > 0; });
}

std::vector<std::pair<std::string, std::string>> Qrels::keys() const {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(entries_.size());
    for (const auto& [key, grades] : entries_) out.push_back(key);
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace {

double gain_of(int grade, GainKind gain) {
    if (gain == GainKind::Linear) return static_cast<double>(grade);
    return std::pow(2.0, static_cast<double>(grade)) - 1.0;
}

void require_positive(const std::map<std::string, int>& grades) {
    const bool positive = std::any_of(grades.begin(), grades.end(),
                                      [](const auto& kv) { return kv.second > 0; });
    if (!positive) {
        throw ArgumentError("metric undefined: no positive grade in qrels");
    }
}

}  // namespace

double ndcg_at_k(const Ranking& ranking,
                 const std::map<std::string, int>& grades, int k,
                 GainKind gain) {
    if (k < 1) throw ArgumentError("k must be >= 1");
    require_positive(grades);

    double dcg = 0.0;
    const int depth = std::min<int>(k, static_cast<int>(ranking.size()));
    for (int i = 0; i < depth; ++i) {
        const auto it = grades.find(ranking[static_cast<size_t>(i)].doc_id);
        if (it == grades.end()) continue;
        dcg += gain_of(it->second, gain) / std::log2(static_cast<double>(i) + 2.0);
    }

    std::vector<int> ideal;
    ideal.reserve(grades.size());
    for (const auto& [doc, grade] : grades) ideal.push_back(grade);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    const int ideal_depth = std::min<int>(k, static_cast<int>(ideal.size()));
    for (int i = 0; i < ideal_depth; ++i) {
        idcg += gain_of(ideal[static_cast<size_t>(i)], gain) /
                std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg / idcg;
}

double mrr_at_k(const Ranking& ranking,
                const std::map<std::string, int>& grades, int k) {
    if (k < 1) throw ArgumentError("k must be >= 1");
    require_positive(grades);
    const int depth = std::min<int>(k, static_cast<int>(ranking.size()));
    for (int i = 0; i < depth; ++i) {
        const auto it = grades.find(ranking[static_cast<size_t>(i)].doc_id);
        if (it != grades.end() && it->second >= 1) {
            return 1.0 / (static_cast<double>(i) + 1.0);
        }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Run scoring
// ---------------------------------------------------------------------------

std::string metric_label(Metric metric, int k) {
    return (metric == Metric::Ndcg ? "ndcg@" : "mrr@") + std::to_string(k);
}

void to_json(nlohmann::json& j, const IrReport& v) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& [key, cell] : v.cells) {
        nlohmann::json entry = {{"scheme", to_string(key.scheme)},
                                {"scenario", to_string(key.scenario)},
                                {"turn", key.turn},
                                {"mean", cell.mean},
                                {"count", cell.count}};
        const auto samples = v.per_run.find(key);
        if (samples != v.per_run.end()) entry["samples"] = samples->second;
        cells.push_back(std::move(entry));
    }
    j = nlohmann::json{{"metric", v.metric},
                       {"gain", v.gain},
                       {"config_hash", v.config_hash},
                       {"baseline", {{"mean", v.baseline.mean},
                                     {"count", v.baseline.count}}},
                       {"cells", cells},
                       {"skipped", v.skipped},
                       {"failed_runs", v.failed_runs}};
}

void from_json(const nlohmann::json& j, IrReport& v) {
    v = IrReport{};
    v.metric = j.at("metric").get<std::string>();
    v.gain = j.value("gain", "linear");
    v.config_hash = j.value("config_hash", "");
    v.baseline.mean = j.at("baseline").at("mean").get<double>();
    v.baseline.count = j.at("baseline").at("count").get<int>();
    for (const auto& c : j.at("cells")) {
        IrCellKey key{scheme_from_string(c.at("scheme").get<std::string>()),
                      scenario_from_string(c.at("scenario").get<std::string>()),
                      c.at("turn").get<int>()};
        v.cells[key] = {c.at("mean").get<double>(), c.at("count").get<int>()};
        if (c.contains("samples")) {
            v.per_run[key] = c.at("samples").get<std::map<std::string, double>>();
        }
    }
    v.skipped = j.value("skipped", std::vector<std::string>{});
    v.failed_runs = j.value("failed_runs", 0);
}

IrReport evaluate_runs(const std::vector<simulation::RunRecord>& runs,
                       const Corpus& index, Reranker& reranker,
                       const Qrels& qrels, const IrEvalOptions& options) {
    if (options.parallelism < 1) throw ArgumentError("parallelism must be >= 1");
    if (options.k_retrieve < 1 || options.k_metric < 1) {
        throw ArgumentError("retrieval and metric depths must be >= 1");
    }

    IrReport report;
    report.metric = metric_label(options.metric, options.k_metric);
    report.gain = options.gain == GainKind::Linear ? "linear" : "exponential";

    auto score_query = [&](const std::string& query,
                           const std::map<std::string, int>& grades) {
        const Ranking ranking =
            retrieve_rerank(index, query, reranker, options.k_retrieve);
        return options.metric == Metric::Ndcg
                   ? ndcg_at_k(ranking, grades, options.k_metric, options.gain)
                   : mrr_at_k(ranking, grades, options.k_metric);
    };

    struct Accum {
        double sum = 0;
        int count = 0;
    };
    std::map<IrCellKey, Accum> cell_accum;
    Accum baseline_accum;
    std::set<std::pair<std::string, std::string>> baseline_seen;
    std::mutex mutex;

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < runs.size();
             i = next.fetch_add(1)) {
            const auto& run = runs[i];
            const auto& conv = run.conversation;
            const std::string run_key = simulation::RunStore::key_for(run);
            if (run.failed) {
                std::lock_guard lock(mutex);
                ++report.failed_runs;
                continue;
            }

            std::string facet = conv.intent.intent_id;
            const auto* grades = qrels.get(conv.query.query_id, facet);
            if (!grades) {
                facet = "0";
                grades = qrels.get(conv.query.query_id, facet);
            }
            if (!grades || !qrels.has_positive(conv.query.query_id, facet)) {
                std::lock_guard lock(mutex);
                report.skipped.push_back(run_key);
                continue;
            }

            std::vector<std::pair<int, double>> turn_scores;
            for (int t = 1; t <= conv.completed_turns(); ++t) {
                turn_scores.emplace_back(
                    t, score_query(run.per_turn_effective_queries
                                       [static_cast<size_t>(t)],
                                   *grades));
            }
            const std::pair<std::string, std::string> pair_key{
                conv.query.query_id, conv.intent.intent_id};
            bool own_baseline = false;
            {
                std::lock_guard lock(mutex);
                own_baseline = baseline_seen.insert(pair_key).second;
            }
            if (own_baseline) {
                const double base =
                    score_query(run.per_turn_effective_queries[0], *grades);
                std::lock_guard lock(mutex);
                baseline_accum.sum += base;
                baseline_accum.count += 1;
            }
            const std::string sample_key =
                conv.query.query_id + "." + conv.intent.intent_id;
            std::lock_guard lock(mutex);
            for (const auto& [turn, score] : turn_scores) {
                const IrCellKey key{conv.scheme, conv.scenario, turn};
                auto& acc = cell_accum[key];
                acc.sum += score;
                acc.count += 1;
                report.per_run[key][sample_key] = score;
            }
        }
    };

    const int threads =
        std::min<int>(options.parallelism, static_cast<int>(runs.size()));
    if (threads <= 1) {
        worker();
    } else {
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto guarded = [&] {
            try {
                worker();
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        };
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(threads));
        for (int i = 0; i < threads; ++i) pool.emplace_back(guarded);
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    for (const auto& [key, acc] : cell_accum) {
        report.cells[key] = {acc.sum / acc.count, acc.count};
    }
    if (baseline_accum.count > 0) {
        report.baseline = {baseline_accum.sum / baseline_accum.count,
                           baseline_accum.count};
    }
    return report;
}

void write_trec_run(std::ostream& out, const std::string& query_id,
                    const Ranking& ranking, const std::string& tag) {
    for (size_t i = 0; i < ranking.size(); ++i) {
        out << query_id << " Q0 " << ranking[i].doc_id << " " << i + 1 << " "
            << ranking[i].score << " " << tag << "\n";
    }
}

}  // namespace clarify::ir_eval
