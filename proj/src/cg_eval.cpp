#include "clarify/cg_eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace clarify::cg_eval {

namespace {

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

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ProtocolError("embedding dimensions differ: " +
                            std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
    }
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

double lexical_score(const std::string& a, const std::string& b) {
    const auto ta = tokenize_lower(a);
    const auto tb = tokenize_lower(b);
    if (ta.empty() && tb.empty()) return 1.0;
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
    const double precision = static_cast<double>(common) / ta.size();
    const double recall = static_cast<double>(common) / tb.size();
    return 2.0 * precision * recall / (precision + recall);
}

std::vector<double> SimilarityScorer::score_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& [a, b] : pairs) out.push_back(score(a, b));
    return out;
}

EmbeddingScorer::EmbeddingScorer(llm::EmbedFn embed_fn, std::string identity)
    : embed_fn_(std::move(embed_fn)), identity_(std::move(identity)) {
    if (!embed_fn_) throw ArgumentError("embedding scorer needs an embed function");
}

void EmbeddingScorer::ensure_cached(const std::vector<std::string>& texts) {
    std::vector<std::string> missing;
    {
        std::lock_guard lock(mutex_);
        std::set<std::string> requested;
        for (const auto& t : texts) {
            if (cache_.find(t) == cache_.end() && requested.insert(t).second) {
                missing.push_back(t);
            }
        }
    }
    if (missing.empty()) return;
    const auto vectors = embed_fn_(missing);
    if (vectors.size() != missing.size()) {
        throw ProtocolError("embedding service returned " +
                            std::to_string(vectors.size()) + " vectors for " +
                            std::to_string(missing.size()) + " texts");
    }
    std::lock_guard lock(mutex_);
    for (size_t i = 0; i < missing.size(); ++i) cache_[missing[i]] = vectors[i];
}

double EmbeddingScorer::score(const std::string& candidate,
                              const std::string& reference) {
    ensure_cached({candidate, reference});
    std::lock_guard lock(mutex_);
    return clamp01((cosine(cache_.at(candidate), cache_.at(reference)) + 1.0) / 2.0);
}

std::vector<double> EmbeddingScorer::score_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::vector<std::string> texts;
    for (const auto& [a, b] : pairs) {
        texts.push_back(a);
        texts.push_back(b);
    }
    ensure_cached(texts);
    std::vector<double> out;
    out.reserve(pairs.size());
    std::lock_guard lock(mutex_);
    for (const auto& [a, b] : pairs) {
        out.push_back(clamp01((cosine(cache_.at(a), cache_.at(b)) + 1.0) / 2.0));
    }
    return out;
}

ScoreMatrix score_matrix(const std::vector<std::string>& generated,
                         const std::vector<std::string>& annotated,
                         SimilarityScorer& scorer) {
    if (generated.empty() || annotated.empty()) {
        throw ArgumentError("score matrix needs non-empty generated and "
                            "annotated lists");
    }
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(generated.size() * annotated.size());
    for (const auto& g : generated) {
        for (const auto& a : annotated) pairs.emplace_back(g, a);
    }
    const auto flat = scorer.score_pairs(pairs);

    ScoreMatrix matrix;
    matrix.generated = generated;
    matrix.annotated = annotated;
    matrix.values.resize(generated.size(),
                         std::vector<double>(annotated.size(), 0.0));
    size_t k = 0;
    for (size_t i = 0; i < generated.size(); ++i) {
        for (size_t j = 0; j < annotated.size(); ++j) {
            const double v = flat[k++];
            if (v < 0.0 || v > 1.0 || std::isnan(v)) {
                throw ValidationError("similarity score outside [0,1]");
            }
            matrix.values[i][j] = v;
        }
    }
    return matrix;
}

double query_score(const ScoreMatrix& matrix) {
    if (matrix.values.empty() || matrix.values.front().empty()) {
        throw ArgumentError("query score needs a non-empty matrix");
    }
    double best = 0.0;
    for (const auto& row : matrix.values) {
        for (double v : row) best = std::max(best, v);
    }
    return best;
}

CgReport evaluate_dataset(
    const std::vector<CgQuery>& items,
    const std::map<std::string, std::vector<std::string>>& generations,
    SimilarityScorer& scorer) {
    if (items.empty()) throw ArgumentError("dataset has no queries");

    CgReport report;
    report.scorer_identity = scorer.identity();
    double total = 0.0;
    for (const auto& item : items) {
        if (item.annotated.empty()) {
            throw ArgumentError("query '" + item.query.query_id +
                                "' has no annotated clarifications");
        }
        const auto it = generations.find(item.query.query_id);
        if (it == generations.end() || it->second.empty()) {
            report.skipped.push_back(item.query.query_id);
            continue;
        }
        const double s =
            query_score(score_matrix(it->second, item.annotated, scorer));
        report.per_query.push_back({item.query.query_id, s});
        total += s;
    }
    if (report.per_query.empty()) {
        throw ArgumentError("no query could be scored: every query lacks "
                            "generations");
    }
    report.dataset_score = total / report.per_query.size() * 100.0;
    return report;
}

std::map<int, double> stratify_by_level(
    const std::vector<QueryScore>& per_query,
    const std::map<std::string, int>& levels,
    std::vector<std::string>* missing) {
    std::map<int, double> sums;
    std::map<int, int> counts;
    for (const auto& qs : per_query) {
        const auto it = levels.find(qs.query_id);
        if (it == levels.end()) {
            llm::log_warn("query '" + qs.query_id +
                          "' has no ambiguity level; excluded from strata");
            if (missing) missing->push_back(qs.query_id);
            continue;
        }
        if (it->second < 1 || it->second > 4) {
            throw ArgumentError("ambiguity level " + std::to_string(it->second) +
                                " for query '" + qs.query_id +
                                "' outside [1,4]");
        }
        sums[it->second] += qs.score;
        counts[it->second] += 1;
    }
    std::map<int, double> means;
    for (const auto& [level, sum] : sums) {
        means[level] = sum / counts[level] * 100.0;
    }
    return means;
}

std::vector<AtDistributionRow> at_distribution(
    const std::map<std::string, std::vector<AmbiguityKind>>& predictions,
    const std::map<std::string, double>& atcot_scores,
    const std::map<std::string, double>& cot_scores) {
    std::vector<AtDistributionRow> rows;
    for (auto kind : kAllAmbiguityKinds) {
        AtDistributionRow row;
        row.kind = kind;
        double atcot_sum = 0, cot_sum = 0;
        int scored = 0;
        for (const auto& [query_id, kinds] : predictions) {
            if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
                continue;
            }
            row.count += 1;
            const auto a = atcot_scores.find(query_id);
            const auto c = cot_scores.find(query_id);
            if (a != atcot_scores.end() && c != cot_scores.end()) {
                atcot_sum += a->second;
                cot_sum += c->second;
                ++scored;
            }
        }
        if (!predictions.empty()) {
            row.frequency_pct =
                100.0 * row.count / static_cast<double>(predictions.size());
        }
        if (scored > 0) {
            row.delta_score = (atcot_sum - cot_sum) / scored * 100.0;
            row.has_delta = true;
        }
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Serialization and rendering
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const CgReport& v) {
    nlohmann::json per_query = nlohmann::json::array();
    for (const auto& qs : v.per_query) {
        per_query.push_back({{"query_id", qs.query_id}, {"score", qs.score}});
    }
    nlohmann::json levels = nlohmann::json::object();
    for (const auto& [level, mean] : v.per_level) {
        levels[std::to_string(level)] = {
            {"mean", mean}, {"count", v.per_level_counts.at(level)}};
    }
    nlohmann::json at_rows = nlohmann::json::array();
    for (const auto& row : v.at_rows) {
        nlohmann::json r = {{"kind", to_string(row.kind)},
                            {"count", row.count},
                            {"frequency_pct", row.frequency_pct}};
        if (row.has_delta) r["delta_score"] = row.delta_score;
        at_rows.push_back(r);
    }
    j = nlohmann::json{{"scorer_identity", v.scorer_identity},
                       {"config_hash", v.config_hash},
                       {"dataset_score", v.dataset_score},
                       {"per_query", per_query},
                       {"skipped", v.skipped},
                       {"per_level", levels},
                       {"at_rows", at_rows}};
}

void from_json(const nlohmann::json& j, CgReport& v) {
    v = CgReport{};
    v.scorer_identity = j.at("scorer_identity").get<std::string>();
    v.config_hash = j.value("config_hash", "");
    v.dataset_score = j.at("dataset_score").get<double>();
    // summary lines in report files carry no per_query block
    if (j.contains("per_query")) {
        for (const auto& qs : j.at("per_query")) {
            v.per_query.push_back({qs.at("query_id").get<std::string>(),
                                   qs.at("score").get<double>()});
        }
    }
    v.skipped = j.value("skipped", std::vector<std::string>{});
    if (j.contains("per_level")) {
        for (const auto& [key, entry] : j.at("per_level").items()) {
            const int level = std::stoi(key);
            v.per_level[level] = entry.at("mean").get<double>();
            v.per_level_counts[level] = entry.at("count").get<int>();
        }
    }
    if (j.contains("at_rows")) {
        for (const auto& r : j.at("at_rows")) {
            AtDistributionRow row;
            row.kind = ambiguity_kind_from_string(r.at("kind").get<std::string>());
            row.count = r.at("count").get<int>();
            row.frequency_pct = r.at("frequency_pct").get<double>();
            if (r.contains("delta_score")) {
                row.delta_score = r.at("delta_score").get<double>();
                row.has_delta = true;
            }
            v.at_rows.push_back(row);
        }
    }
}

std::string format_score(double value_x100, const std::string& markers) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(1);
    out << value_x100 << markers;
    return out.str();
}

std::string format_at_cell(const AtDistributionRow& row) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(1);
    out << row.frequency_pct;
    if (row.has_delta) {
        out << " (" << (row.delta_score >= 0 ? "↑ " : "↓ ")
            << std::abs(row.delta_score) << ")";
    }
    return out.str();
}

std::string render_table(const std::string& title,
                         const std::vector<std::string>& column_names,
                         const std::vector<std::string>& row_names,
                         const std::vector<std::vector<std::string>>& cells) {
    if (row_names.size() != cells.size()) {
        throw ArgumentError("table rows and cells disagree");
    }
    for (const auto& row : cells) {
        if (row.size() != column_names.size()) {
            throw ArgumentError("table columns and cells disagree");
        }
    }
    // Measured in bytes; good enough for the ASCII-plus-arrows content used.
    std::vector<size_t> widths(column_names.size() + 1, 0);
    for (const auto& name : row_names) widths[0] = std::max(widths[0], name.size());
    for (size_t c = 0; c < column_names.size(); ++c) {
        widths[c + 1] = column_names[c].size();
        for (const auto& row : cells) {
            widths[c + 1] = std::max(widths[c + 1], row[c].size());
        }
    }

    auto pad = [](const std::string& s, size_t w) {
        return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
    };
    std::ostringstream out;
    if (!title.empty()) out << title << "\n";
    out << pad("", widths[0]);
    for (size_t c = 0; c < column_names.size(); ++c) {
        out << "  " << pad(column_names[c], widths[c + 1]);
    }
    out << "\n";
    size_t total = widths[0];
    for (size_t c = 0; c < column_names.size(); ++c) total += 2 + widths[c + 1];
    out << std::string(total, '-') << "\n";
    for (size_t r = 0; r < row_names.size(); ++r) {
        out << pad(row_names[r], widths[0]);
        for (size_t c = 0; c < column_names.size(); ++c) {
            out << "  " << pad(cells[r][c], widths[c + 1]);
        }
        out << "\n";
    }
    return out.str();
}

void write_report_jsonl(const CgReport& report,
                        const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IngestionError("cannot write report " + path.string());
    }
    nlohmann::json summary = report;
    summary.erase("per_query");
    summary["type"] = "summary";
    out << summary.dump() << "\n";
    for (const auto& qs : report.per_query) {
        out << nlohmann::json{{"type", "query"},
                              {"query_id", qs.query_id},
                              {"score", qs.score}}
                   .dump()
            << "\n";
    }
}

}  // namespace clarify::cg_eval
