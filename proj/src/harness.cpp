#include "clarify/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "clarify/offline_backend.hpp"
#include "clarify/prompting.hpp"
#include "clarify/stats.hpp"

namespace clarify::harness {

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        if (!trim(item).empty()) out.push_back(trim(item));
    }
    return out;
}

std::vector<PromptScheme> parse_schemes(const std::string& csv) {
    std::vector<PromptScheme> out;
    for (const auto& name : split_csv(csv)) out.push_back(scheme_from_string(name));
    if (out.empty()) throw ArgumentError("scheme list is empty");
    return out;
}

std::vector<Scenario> parse_scenarios(const std::string& csv) {
    std::vector<Scenario> out;
    for (const auto& name : split_csv(csv)) {
        out.push_back(scenario_from_string(name));
    }
    if (out.empty()) throw ArgumentError("scenario list is empty");
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IngestionError("cannot write " + path.string());
    out << content;
}

void write_config_snapshot(const RunConfig& config) {
    nlohmann::json j = config.canonical();
    j["config_hash"] = config.config_hash();
    write_text(config.out_dir / "config.json", j.dump(2) + "\n");
}

cg_eval::CgReport read_cg_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open report " + path.string());
    std::string line;
    cg_eval::CgReport report;
    bool have_summary = false;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw IngestionError("corrupt report line in " + path.string());
        }
        if (j.value("type", "") == "summary") {
            report = j.get<cg_eval::CgReport>();
            have_summary = true;
        } else if (j.value("type", "") == "query") {
            report.per_query.push_back({j.at("query_id").get<std::string>(),
                                        j.at("score").get<double>()});
        }
    }
    if (!have_summary) {
        throw IngestionError("report " + path.string() + " has no summary line");
    }
    return report;
}

std::filesystem::path cg_report_path(const RunConfig& config,
                                     PromptScheme scheme) {
    return config.out_dir / "cg" /
           ("report_" + std::string(to_string(scheme)) + ".jsonl");
}

std::filesystem::path ir_report_path(const RunConfig& config) {
    return config.out_dir / "ir" / ("report_" + config.metric + ".json");
}

/// Restrict each scheme's label->score map to the labels present everywhere,
/// the alignment the paired test needs.
std::map<PromptScheme, std::map<std::string, double>> align_on_common_labels(
    const std::map<PromptScheme, std::map<std::string, double>>& per_scheme) {
    if (per_scheme.empty()) return {};
    std::set<std::string> common;
    bool first = true;
    for (const auto& [scheme, scores] : per_scheme) {
        std::set<std::string> labels;
        for (const auto& [label, score] : scores) labels.insert(label);
        if (first) {
            common = std::move(labels);
            first = false;
        } else {
            std::set<std::string> kept;
            std::set_intersection(common.begin(), common.end(), labels.begin(),
                                  labels.end(),
                                  std::inserter(kept, kept.begin()));
            common = std::move(kept);
        }
    }
    if (common.size() < 2) return {};
    std::map<PromptScheme, std::map<std::string, double>> aligned;
    for (const auto& [scheme, scores] : per_scheme) {
        for (const auto& label : common) {
            aligned[scheme][label] = scores.at(label);
        }
    }
    return aligned;
}

std::map<PromptScheme, std::string> markers_or_empty(
    const std::map<PromptScheme, std::map<std::string, double>>& per_scheme,
    double alpha, bool unpaired) {
    const auto aligned = align_on_common_labels(per_scheme);
    if (aligned.size() < 2) return {};
    return stats::significance_markers(aligned, alpha, unpaired);
}

std::string render_cg_tables(
    const RunConfig& config,
    const std::map<PromptScheme, cg_eval::CgReport>& reports) {
    std::map<PromptScheme, std::map<std::string, double>> per_scheme;
    for (const auto& [scheme, report] : reports) {
        for (const auto& qs : report.per_query) {
            per_scheme[scheme][qs.query_id] = qs.score;
        }
    }
    const auto markers =
        markers_or_empty(per_scheme, config.alpha, config.unpaired);

    std::string out = "# config " + config.config_hash() + "\n\n";

    std::vector<std::string> row_names;
    std::vector<std::vector<std::string>> cells;
    for (const auto& [scheme, report] : reports) {
        row_names.push_back(std::string(display_name(scheme)));
        const auto m = markers.find(scheme);
        cells.push_back({cg_eval::format_score(
            report.dataset_score, m == markers.end() ? "" : m->second)});
    }
    out += cg_eval::render_table("Clarification generation, " + config.dataset,
                                 {config.dataset}, row_names, cells);

    std::set<int> levels;
    for (const auto& [scheme, report] : reports) {
        for (const auto& [level, score] : report.per_level) levels.insert(level);
    }
    if (!levels.empty()) {
        std::vector<std::string> columns;
        for (int level : levels) {
            columns.push_back("level " + std::to_string(level));
        }
        std::vector<std::vector<std::string>> level_cells;
        for (const auto& [scheme, report] : reports) {
            std::vector<std::string> row;
            for (int level : levels) {
                const auto it = report.per_level.find(level);
                row.push_back(it == report.per_level.end()
                                  ? "-"
                                  : cg_eval::format_score(it->second));
            }
            level_cells.push_back(std::move(row));
        }
        out += "\n" + cg_eval::render_table("By ambiguity level", columns,
                                            row_names, level_cells);
    }

    const auto atcot = reports.find(PromptScheme::AtCot);
    if (atcot != reports.end() && !atcot->second.at_rows.empty()) {
        std::vector<std::string> columns;
        std::vector<std::string> row{};
        for (const auto& r : atcot->second.at_rows) {
            columns.push_back(std::string(to_string(r.kind)));
            row.push_back(cg_eval::format_at_cell(r));
        }
        out += "\n" + cg_eval::render_table(
                          "Predicted ambiguity types, frequency % (score "
                          "delta vs CoT)",
                          columns, {std::string(display_name(PromptScheme::AtCot))},
                          {row});
    }
    return out;
}

std::string render_ir_tables(const RunConfig& config,
                             const ir_eval::IrReport& report) {
    std::string out = "# config " + config.config_hash() + "\n\n";
    out += "Retrieval, " + config.dataset + ", " + report.metric + " (" +
           report.gain + " gain)\n";
    {
        std::ostringstream line;
        line.setf(std::ios::fixed);
        line.precision(4);
        line << "w/o clarification: " << report.baseline.mean << " (n="
             << report.baseline.count << ")\n";
        out += line.str();
    }

    std::set<int> turns;
    std::set<std::pair<PromptScheme, Scenario>> combos;
    for (const auto& [key, cell] : report.cells) {
        turns.insert(key.turn);
        combos.insert({key.scheme, key.scenario});
    }
    if (combos.empty()) return out;

    // markers per (scenario, turn) block, comparing schemes pairwise
    std::map<std::pair<Scenario, int>, std::map<PromptScheme, std::string>>
        block_markers;
    std::set<std::pair<Scenario, int>> blocks;
    for (const auto& [key, cell] : report.cells) {
        blocks.insert({key.scenario, key.turn});
    }
    for (const auto& [scenario, turn] : blocks) {
        std::map<PromptScheme, std::map<std::string, double>> per_scheme;
        for (const auto& [key, samples] : report.per_run) {
            if (key.scenario == scenario && key.turn == turn) {
                per_scheme[key.scheme] = samples;
            }
        }
        block_markers[{scenario, turn}] =
            markers_or_empty(per_scheme, config.alpha, config.unpaired);
    }

    std::vector<std::string> columns;
    for (int turn : turns) columns.push_back("turn " + std::to_string(turn));
    std::vector<std::string> row_names;
    std::vector<std::vector<std::string>> cells;
    for (const auto& [scheme, scenario] : combos) {
        row_names.push_back(std::string(display_name(scheme)) + " " +
                            std::string(to_string(scenario)));
        std::vector<std::string> row;
        for (int turn : turns) {
            const auto it = report.cells.find({scheme, scenario, turn});
            if (it == report.cells.end()) {
                row.push_back("-");
                continue;
            }
            std::ostringstream cell;
            cell.setf(std::ios::fixed);
            cell.precision(4);
            cell << it->second.mean;
            const auto& markers = block_markers[{scenario, turn}];
            const auto m = markers.find(scheme);
            if (m != markers.end()) cell << m->second;
            row.push_back(cell.str());
        }
        cells.push_back(std::move(row));
    }
    out += cg_eval::render_table("", columns, row_names, cells);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const RunConfig& v) {
    std::vector<std::string> schemes, scenarios;
    for (auto s : v.schemes) schemes.emplace_back(to_string(s));
    for (auto s : v.scenarios) scenarios.emplace_back(to_string(s));
    j = nlohmann::json{
        {"dataset", v.dataset},
        {"cg_path", v.cg_path.string()},
        {"ir_paths",
         {{"queries", v.ir_paths.queries.string()},
          {"intents", v.ir_paths.intents.string()},
          {"qrels", v.ir_paths.qrels.string()},
          {"corpus", v.ir_paths.corpus.string()}}},
        {"facet_qrels", v.facet_qrels},
        {"mapping_path", v.mapping_path.string()},
        {"few_shots_path", v.few_shots_path.string()},
        {"schemes", schemes},
        {"scenarios", scenarios},
        {"max_turns", v.max_turns},
        {"n_outputs", v.n_outputs},
        {"n_respond_outputs", v.n_respond_outputs},
        {"max_parse_retries", v.max_parse_retries},
        {"intent_char_budget", v.intent_char_budget},
        {"generation_calls", v.generation_calls},
        {"sampling", v.sampling},
        {"seed", v.seed},
        {"backend", v.backend},
        {"scorer", v.scorer},
        {"reranker", v.reranker},
        {"endpoint", v.endpoint},
        {"cache_path", v.cache_path.string()},
        {"metric", v.metric},
        {"gain", v.gain},
        {"k_retrieve", v.k_retrieve},
        {"k_metric", v.k_metric},
        {"trec_runs", v.trec_runs},
        {"alpha", v.alpha},
        {"unpaired", v.unpaired},
        {"parallelism", v.parallelism},
        {"resume", v.resume},
        {"out_dir", v.out_dir.string()}};
}

void from_json(const nlohmann::json& j, RunConfig& v) {
    v.dataset = j.value("dataset", v.dataset);
    v.cg_path = j.value("cg_path", v.cg_path.string());
    if (j.contains("ir_paths")) {
        const auto& p = j.at("ir_paths");
        v.ir_paths.queries = p.value("queries", v.ir_paths.queries.string());
        v.ir_paths.intents = p.value("intents", v.ir_paths.intents.string());
        v.ir_paths.qrels = p.value("qrels", v.ir_paths.qrels.string());
        v.ir_paths.corpus = p.value("corpus", v.ir_paths.corpus.string());
    }
    v.facet_qrels = j.value("facet_qrels", v.facet_qrels);
    v.mapping_path = j.value("mapping_path", v.mapping_path.string());
    v.few_shots_path = j.value("few_shots_path", v.few_shots_path.string());
    if (j.contains("schemes")) {
        v.schemes.clear();
        for (const auto& s : j.at("schemes")) {
            v.schemes.push_back(scheme_from_string(s.get<std::string>()));
        }
    }
    if (j.contains("scenarios")) {
        v.scenarios.clear();
        for (const auto& s : j.at("scenarios")) {
            v.scenarios.push_back(scenario_from_string(s.get<std::string>()));
        }
    }
    v.max_turns = j.value("max_turns", v.max_turns);
    v.n_outputs = j.value("n_outputs", v.n_outputs);
    v.n_respond_outputs = j.value("n_respond_outputs", v.n_respond_outputs);
    v.max_parse_retries = j.value("max_parse_retries", v.max_parse_retries);
    v.intent_char_budget = j.value("intent_char_budget", v.intent_char_budget);
    v.generation_calls = j.value("generation_calls", v.generation_calls);
    if (j.contains("sampling")) v.sampling = j.at("sampling");
    v.seed = j.value("seed", v.seed);
    v.backend = j.value("backend", v.backend);
    v.scorer = j.value("scorer", v.scorer);
    v.reranker = j.value("reranker", v.reranker);
    if (j.contains("endpoint")) {
        v.endpoint = j.at("endpoint");
    } else {
        v.endpoint = llm::EndpointConfig::from_env();
    }
    v.cache_path = j.value("cache_path", v.cache_path.string());
    v.metric = j.value("metric", v.metric);
    v.gain = j.value("gain", v.gain);
    v.k_retrieve = j.value("k_retrieve", v.k_retrieve);
    v.k_metric = j.value("k_metric", v.k_metric);
    v.trec_runs = j.value("trec_runs", v.trec_runs);
    v.alpha = j.value("alpha", v.alpha);
    v.unpaired = j.value("unpaired", v.unpaired);
    v.parallelism = j.value("parallelism", v.parallelism);
    v.resume = j.value("resume", v.resume);
    v.out_dir = j.value("out_dir", v.out_dir.string());
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError("config " + path.string() + " is not valid JSON: " +
                             e.what());
    }
    RunConfig config;
    from_json(j, config);
    return config;
}

nlohmann::json RunConfig::canonical() const { return nlohmann::json(*this); }

std::string RunConfig::config_hash() const {
    return llm::sha256_hex(canonical().dump());
}

// ---------------------------------------------------------------------------
// Run lock
// ---------------------------------------------------------------------------

RunLock::RunLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    file_ = dir / ".lock";
    if (std::filesystem::exists(file_)) {
        throw Error("run directory " + dir.string() +
                    " is locked by another process (remove " + file_.string() +
                    " if stale)");
    }
    std::ofstream out(file_, std::ios::trunc);
    if (!out) throw Error("cannot create lock file " + file_.string());
    out << "locked\n";
}

RunLock::~RunLock() {
    std::error_code ec;
    std::filesystem::remove(file_, ec);
}

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

std::shared_ptr<llm::ChatBackend> make_backend(const RunConfig& config) {
    if (config.backend == "offline") {
        return std::make_shared<llm::OfflineChatBackend>();
    }
    if (config.backend == "http") {
        return std::make_shared<llm::HttpChatBackend>(config.endpoint);
    }
    throw ArgumentError("unknown backend '" + config.backend +
                        "' (expected offline or http)");
}

namespace {

// Counter sits inside the cache so cache hits are not counted: a re-run over
// a complete cache must report zero backend calls.
struct WiredBackend {
    std::shared_ptr<llm::CountingBackend> counting;
    std::shared_ptr<llm::ChatBackend> effective;
};

WiredBackend wire_backend(const RunConfig& config) {
    WiredBackend wired;
    wired.counting = std::make_shared<llm::CountingBackend>(make_backend(config));
    wired.effective = wired.counting;
    if (!config.cache_path.empty()) {
        wired.effective = llm::cached(
            wired.counting, std::make_shared<llm::CacheStore>(config.cache_path));
    }
    return wired;
}

llm::EmbedFn embed_fn_for(const RunConfig& config) {
    if (config.backend == "http") return llm::make_embed_fn(config.endpoint);
    return llm::deterministic_embed_fn();
}

}  // namespace

std::unique_ptr<cg_eval::SimilarityScorer> make_scorer(const RunConfig& config) {
    if (config.scorer == "lexical") {
        return std::make_unique<cg_eval::LexicalScorer>();
    }
    if (config.scorer == "embedding") {
        return std::make_unique<cg_eval::EmbeddingScorer>(embed_fn_for(config));
    }
    throw ArgumentError("unknown scorer '" + config.scorer +
                        "' (expected lexical or embedding)");
}

std::unique_ptr<ir_eval::Reranker> make_reranker(const RunConfig& config) {
    if (config.reranker == "identity") {
        return std::make_unique<ir_eval::IdentityReranker>();
    }
    if (config.reranker == "service") {
        return std::make_unique<ir_eval::EmbeddingReranker>(embed_fn_for(config));
    }
    throw ArgumentError("unknown reranker '" + config.reranker +
                        "' (expected identity or service)");
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_run_cg(const RunConfig& config) {
    if (config.cg_path.empty()) {
        throw ArgumentError("run-cg needs cg_path in the config");
    }
    const auto dataset = data_io::load_cg(config.cg_path, config.dataset);
    std::cout << "dataset " << dataset.name << ": " << dataset.query_count()
              << " queries, " << dataset.cq_count() << " annotated questions\n";

    RunLock lock(config.out_dir);
    write_config_snapshot(config);

    std::vector<cg_eval::CgQuery> items;
    std::map<std::string, int> levels;
    for (const auto& query : dataset.queries) {
        const auto it = dataset.annotations.find(query.query_id);
        if (it == dataset.annotations.end()) continue;
        items.push_back({query, it->second});
        if (query.ambiguity_level) levels[query.query_id] = *query.ambiguity_level;
    }
    if (items.empty()) {
        throw ValidationError("dataset has no annotated queries to score");
    }

    const auto wired = wire_backend(config);
    auto scorer = make_scorer(config);
    const auto few_shots = config.few_shots_path.empty()
                               ? prompting::FewShotSet::defaults()
                               : prompting::FewShotSet::load(config.few_shots_path);
    llm::SamplingParams sampling = config.sampling;
    sampling.seed = config.seed;

    std::map<PromptScheme, cg_eval::CgReport> reports;
    std::map<std::string, std::vector<AmbiguityKind>> atcot_predictions;
    int exhausted = 0;

    for (const auto scheme : config.schemes) {
        const auto schema =
            prompting::make_output_schema(scheme, Scenario::Respond);
        std::map<std::string, std::vector<std::string>> generations;

        const auto gen_path =
            config.out_dir / "cg" /
            ("generations_" + std::string(to_string(scheme)) + ".jsonl");
        std::filesystem::create_directories(gen_path.parent_path());
        std::ofstream gen_out(gen_path, std::ios::trunc);
        if (!gen_out) {
            throw IngestionError("cannot write " + gen_path.string());
        }

        for (const auto& item : items) {
            Conversation conv;
            conv.query = item.query;
            conv.intent = UserIntent{"-", item.query.query_id, "-"};
            conv.scenario = Scenario::Respond;
            conv.scheme = scheme;

            GenerationOutput output;
            try {
                if (config.generation_calls == "per_output") {
                    // n calls asking for one clarification each
                    for (int i = 0; i < config.n_outputs; ++i) {
                        const auto bundle = prompting::build_generation_prompt(
                            scheme, Scenario::Respond, conv,
                            few_shots.get(scheme, Scenario::Respond), 1);
                        llm::SamplingParams call_params = sampling;
                        call_params.seed = config.seed + static_cast<std::uint64_t>(i);
                        auto one = prompting::generate_with_retry(
                            *wired.effective, bundle, schema, call_params,
                            config.max_parse_retries);
                        if (i == 0) {
                            output = std::move(one);
                        } else {
                            output.clarifications.insert(
                                output.clarifications.end(),
                                one.clarifications.begin(),
                                one.clarifications.end());
                        }
                    }
                } else if (config.generation_calls == "single") {
                    const auto bundle = prompting::build_generation_prompt(
                        scheme, Scenario::Respond, conv,
                        few_shots.get(scheme, Scenario::Respond),
                        config.n_outputs);
                    output = prompting::generate_with_retry(
                        *wired.effective, bundle, schema, sampling,
                        config.max_parse_retries);
                } else {
                    throw ArgumentError("unknown generation_calls '" +
                                        config.generation_calls +
                                        "' (expected single or per_output)");
                }
            } catch (const ExhaustionError& e) {
                llm::log_warn("generation exhausted for query '" +
                              item.query.query_id + "': " + e.what());
                ++exhausted;
                gen_out << nlohmann::json{{"query_id", item.query.query_id},
                                          {"scheme", to_string(scheme)},
                                          {"error", e.what()}}
                                .dump()
                        << "\n";
                continue;
            }

            std::vector<std::string> texts;
            for (const auto& c : output.clarifications) texts.push_back(c.text);
            generations[item.query.query_id] = texts;

            nlohmann::json record{{"query_id", item.query.query_id},
                                  {"scheme", to_string(scheme)},
                                  {"clarifications", texts}};
            if (output.reasoning) record["reasoning"] = *output.reasoning;
            if (scheme == PromptScheme::AtCot) {
                std::vector<AmbiguityKind> kinds =
                    output.predicted_types
                        ? *output.predicted_types
                        : prompting::extract_predicted_types(
                              output.reasoning.value_or(""));
                atcot_predictions[item.query.query_id] = kinds;
                std::vector<std::string> names;
                for (auto k : kinds) names.emplace_back(to_string(k));
                record["predicted_types"] = names;
            }
            gen_out << record.dump() << "\n";
        }

        auto report = cg_eval::evaluate_dataset(items, generations, *scorer);
        report.config_hash = config.config_hash();
        if (!levels.empty()) {
            report.per_level = cg_eval::stratify_by_level(report.per_query, levels);
            for (const auto& qs : report.per_query) {
                const auto lvl = levels.find(qs.query_id);
                if (lvl != levels.end()) report.per_level_counts[lvl->second] += 1;
            }
        }
        reports[scheme] = std::move(report);
    }

    // score delta table needs both reasoning schemes
    if (reports.count(PromptScheme::AtCot) && reports.count(PromptScheme::Cot)) {
        std::map<std::string, double> atcot_scores, cot_scores;
        for (const auto& qs : reports[PromptScheme::AtCot].per_query) {
            atcot_scores[qs.query_id] = qs.score;
        }
        for (const auto& qs : reports[PromptScheme::Cot].per_query) {
            cot_scores[qs.query_id] = qs.score;
        }
        reports[PromptScheme::AtCot].at_rows =
            cg_eval::at_distribution(atcot_predictions, atcot_scores, cot_scores);
    }

    for (const auto& [scheme, report] : reports) {
        cg_eval::write_report_jsonl(report, cg_report_path(config, scheme));
    }
    const std::string tables = render_cg_tables(config, reports);
    write_text(config.out_dir / "cg" / "tables.txt", tables);
    std::cout << tables;
    std::cout << "backend_calls=" << wired.counting->calls()
              << " exhausted_queries=" << exhausted << "\n";
}

void cmd_simulate(const RunConfig& config) {
    if (config.scenarios.empty() || config.schemes.empty()) {
        throw ArgumentError("simulate needs schemes and scenarios");
    }
    const bool wants_select =
        std::find(config.scenarios.begin(), config.scenarios.end(),
                  Scenario::Select) != config.scenarios.end();
    if (wants_select && config.n_outputs < 2) {
        throw ArgumentError("select scenarios need n_outputs >= 2");
    }

    const auto dataset = data_io::load_ir(config.ir_paths, config.facet_qrels,
                                          config.dataset,
                                          config.intent_char_budget);
    std::cout << "dataset " << dataset.name << ": " << dataset.queries.size()
              << " queries, " << dataset.intents.size() << " intents\n";

    RunLock lock(config.out_dir);
    write_config_snapshot(config);
    data_io::write_dataset_manifest(
        config.out_dir / "dataset_manifest.json", config.dataset,
        {config.ir_paths.queries, config.ir_paths.intents, config.ir_paths.qrels,
         config.ir_paths.corpus});

    std::map<std::string, Query> by_id;
    for (const auto& q : dataset.queries) by_id[q.query_id] = q;
    std::vector<std::pair<Query, UserIntent>> pairs;
    for (const auto& intent : dataset.intents) {
        pairs.emplace_back(by_id.at(intent.query_id), intent);
    }
    if (pairs.empty()) throw ValidationError("dataset has no (query, intent) pairs");

    const auto runs_root = config.out_dir / "runs";
    if (!config.resume) {
        std::filesystem::remove_all(runs_root / config.dataset);
    }
    simulation::RunStore store(runs_root, config.dataset);

    int resumed = 0;
    for (const auto& [query, intent] : pairs) {
        for (const auto scheme : config.schemes) {
            for (const auto scenario : config.scenarios) {
                if (store.has_success(simulation::RunStore::key_for(
                        scheme, scenario, query.query_id, intent.intent_id))) {
                    ++resumed;
                }
            }
        }
    }

    const auto wired = wire_backend(config);
    const auto few_shots = config.few_shots_path.empty()
                               ? prompting::FewShotSet::defaults()
                               : prompting::FewShotSet::load(config.few_shots_path);
    simulation::Simulator simulator(wired.effective, few_shots);

    simulation::MatrixConfig matrix;
    matrix.max_turns = config.max_turns;
    matrix.n_select_outputs = config.n_outputs;
    matrix.n_respond_outputs = config.n_respond_outputs;
    matrix.sampling = config.sampling;
    matrix.sampling.seed = config.seed;
    matrix.max_parse_retries = config.max_parse_retries;
    matrix.parallelism = config.parallelism;

    const auto records = simulator.simulate_matrix(pairs, config.schemes,
                                                   config.scenarios, matrix,
                                                   &store);
    int failed = 0;
    for (const auto& r : records) failed += r.failed ? 1 : 0;
    std::cout << "records=" << records.size() << " failed=" << failed
              << " resumed=" << resumed
              << " backend_calls=" << wired.counting->calls() << "\n";
}

void cmd_eval_ir(const RunConfig& config) {
    RunLock lock(config.out_dir);
    write_config_snapshot(config);

    simulation::RunStore store(config.out_dir / "runs", config.dataset);
    const auto records = store.load_all();
    if (records.empty()) {
        throw ValidationError("no run records under " +
                              (config.out_dir / "runs").string() +
                              "; run simulate first");
    }

    const auto corpus =
        ir_eval::Corpus::build(data_io::load_corpus(config.ir_paths.corpus));
    const auto qrels =
        ir_eval::Qrels::parse_file(config.ir_paths.qrels, config.facet_qrels);
    auto reranker = make_reranker(config);

    ir_eval::IrEvalOptions options;
    if (config.metric == "ndcg") {
        options.metric = ir_eval::Metric::Ndcg;
    } else if (config.metric == "mrr") {
        options.metric = ir_eval::Metric::Mrr;
    } else {
        throw ArgumentError("unknown metric '" + config.metric +
                            "' (expected ndcg or mrr)");
    }
    if (config.gain == "linear") {
        options.gain = ir_eval::GainKind::Linear;
    } else if (config.gain == "exponential") {
        options.gain = ir_eval::GainKind::Exponential;
    } else {
        throw ArgumentError("unknown gain '" + config.gain + "'");
    }
    options.k_retrieve = config.k_retrieve;
    options.k_metric = config.k_metric;
    options.parallelism = config.parallelism;

    auto report = ir_eval::evaluate_runs(records, corpus, *reranker, qrels,
                                         options);
    report.config_hash = config.config_hash();
    write_text(ir_report_path(config), nlohmann::json(report).dump(2) + "\n");

    const std::string tables = render_ir_tables(config, report);
    write_text(config.out_dir / "ir" / "tables.txt", tables);
    std::cout << tables;

    if (config.trec_runs) {
        std::map<std::string, std::ostringstream> files;
        for (const auto& record : records) {
            if (record.failed) continue;
            const auto& conv = record.conversation;
            for (int t = 1; t <= conv.completed_turns(); ++t) {
                const auto ranking = ir_eval::retrieve_rerank(
                    corpus, record.per_turn_effective_queries[static_cast<size_t>(t)],
                    *reranker, config.k_retrieve);
                const std::string name =
                    std::string(to_string(conv.scheme)) + "_" +
                    std::string(to_string(conv.scenario)) + "_turn" +
                    std::to_string(t) + ".run";
                ir_eval::write_trec_run(
                    files[name],
                    conv.query.query_id + "." + conv.intent.intent_id, ranking,
                    "clarify-" + std::string(to_string(conv.scheme)));
            }
        }
        for (const auto& [name, content] : files) {
            write_text(config.out_dir / "ir" / "trec" / name, content.str());
        }
        std::cout << "trec_runs=" << files.size() << "\n";
    }
}

void cmd_align(const RunConfig& config) {
    const std::vector<PromptScheme> required{
        PromptScheme::Standard, PromptScheme::AtStandard, PromptScheme::Cot,
        PromptScheme::AtCot};

    std::vector<double> cg_scores, ir_means;
    nlohmann::json pairs = nlohmann::json::array();

    ir_eval::IrReport ir_report;
    {
        const auto path = ir_report_path(config);
        std::ifstream in(path);
        if (!in) {
            throw ValidationError("missing IR report " + path.string() +
                                  "; run eval-ir first");
        }
        nlohmann::json j;
        in >> j;
        ir_report = j.get<ir_eval::IrReport>();
    }

    for (const auto scheme : required) {
        const auto path = cg_report_path(config, scheme);
        if (!std::filesystem::exists(path)) {
            throw ValidationError("missing CG report for scheme " +
                                  std::string(display_name(scheme)));
        }
        const auto report = read_cg_report(path);

        const ir_eval::IrCellKey key{scheme, Scenario::Respond, 1};
        const auto cell = ir_report.cells.find(key);
        if (cell == ir_report.cells.end()) {
            throw ValidationError("IR report has no respond turn-1 cell for " +
                                  std::string(display_name(scheme)));
        }
        cg_scores.push_back(report.dataset_score);
        ir_means.push_back(cell->second.mean);
        pairs.push_back({{"scheme", to_string(scheme)},
                         {"cg_score", report.dataset_score},
                         {"ir_mean", cell->second.mean}});
    }

    const auto result = stats::pearson(cg_scores, ir_means);
    nlohmann::json out{{"pairs", pairs},
                       {"r", result.r},
                       {"p", result.p},
                       {"n", result.n},
                       {"degenerate", result.degenerate},
                       {"config_hash", config.config_hash()}};
    write_text(config.out_dir / "align" / "alignment.json", out.dump(2) + "\n");

    std::ostringstream line;
    line.setf(std::ios::fixed);
    line.precision(4);
    line << "cg-ir alignment over " << result.n << " schemes: r=" << result.r
         << " p=" << result.p << "\n";
    std::cout << line.str();
}

void cmd_report(const RunConfig& config) {
    bool rendered = false;

    std::map<PromptScheme, cg_eval::CgReport> reports;
    for (const auto scheme : config.schemes) {
        const auto path = cg_report_path(config, scheme);
        if (std::filesystem::exists(path)) {
            reports[scheme] = read_cg_report(path);
        }
    }
    if (!reports.empty()) {
        const std::string tables = render_cg_tables(config, reports);
        write_text(config.out_dir / "cg" / "tables.txt", tables);
        std::cout << tables;
        rendered = true;
    }

    const auto ir_path = ir_report_path(config);
    if (std::filesystem::exists(ir_path)) {
        std::ifstream in(ir_path);
        nlohmann::json j;
        in >> j;
        const auto report = j.get<ir_eval::IrReport>();
        const std::string tables = render_ir_tables(config, report);
        write_text(config.out_dir / "ir" / "tables.txt", tables);
        std::cout << tables;
        rendered = true;
    }

    if (!rendered) {
        throw ValidationError("nothing to render under " +
                              config.out_dir.string() +
                              "; run run-cg or eval-ir first");
    }
}

void cmd_prompts(const std::filesystem::path& out_dir) {
    namespace text = prompting::text;
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "ambiguity_type_definitions.txt",
               text::ambiguity_definitions_block() + "\n");
    for (const auto scheme : kAllPromptSchemes) {
        for (const auto scenario : {Scenario::Select, Scenario::Respond}) {
            const std::string name = "generation_" +
                                     std::string(to_string(scheme)) + "_" +
                                     std::string(to_string(scenario)) + ".txt";
            write_text(out_dir / name,
                       text::generation_system(scheme, scenario, 5) + "\n");
        }
    }
    write_text(out_dir / "response_select.txt",
               text::response_system(Scenario::Select) + "\n");
    write_text(out_dir / "response_respond.txt",
               text::response_system(Scenario::Respond) + "\n");
    write_text(out_dir / "reformulation.txt", text::reformulation_system() + "\n");

    nlohmann::json shots = nlohmann::json::object();
    const auto defaults = prompting::FewShotSet::defaults();
    for (const auto scheme : kAllPromptSchemes) {
        for (const auto scenario : {Scenario::Select, Scenario::Respond}) {
            nlohmann::json list = nlohmann::json::array();
            for (const auto& shot : defaults.get(scheme, scenario)) {
                list.push_back({{"input_query", shot.input_query},
                                {"expected_output", shot.expected_output}});
            }
            shots[std::string(to_string(scheme))]
                 [std::string(to_string(scenario))] = list;
        }
    }
    write_text(out_dir / "few_shots.json", shots.dump(2) + "\n");
    std::cout << "wrote prompt fixtures to " << out_dir.string() << "\n";
}

void cmd_convert(const ConvertOptions& options) {
    std::set<std::string> keep;
    if (!options.ids_file.empty()) {
        std::ifstream in(options.ids_file);
        if (!in) {
            throw IngestionError("cannot open id list " +
                                 options.ids_file.string());
        }
        std::string line;
        while (std::getline(in, line)) {
            if (!trim(line).empty()) keep.insert(trim(line));
        }
        if (keep.empty()) throw IngestionError("id list is empty");
    }
    const auto want = [&keep](const std::string& id) {
        return keep.empty() || keep.count(id) > 0;
    };

    struct Entry {
        std::string query;
        std::optional<int> level;
        std::vector<std::string> cqs;
        std::vector<std::pair<std::string, std::string>> intents;
    };
    std::map<std::string, Entry> entries;

    if (options.format == "tsv") {
        std::ifstream in(options.input);
        if (!in) throw IngestionError("cannot open " + options.input.string());
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            std::vector<std::string> fields;
            std::string field;
            std::istringstream row(line);
            while (std::getline(row, field, '\t')) fields.push_back(field);
            if (fields.size() < 3) {
                throw IngestionError("tsv line " + std::to_string(line_no) +
                                         " needs query_id, query, question",
                                     {line});
            }
            if (!want(fields[0])) continue;
            auto& entry = entries[fields[0]];
            entry.query = fields[1];
            entry.cqs.push_back(fields[2]);
            if (fields.size() > 3 && !trim(fields[3]).empty()) {
                entry.level = std::stoi(fields[3]);
            }
        }
    } else if (options.format == "qulac-json") {
        std::ifstream in(options.input);
        if (!in) throw IngestionError("cannot open " + options.input.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IngestionError("input is not valid JSON: " +
                                 std::string(e.what()));
        }
        // column-oriented table: {"topic_id": {row: value}, "topic": {...},
        // "question": {...}, "facet_id": {...}, "facet_desc": {...}}
        for (const auto& field : {"topic_id", "topic", "question"}) {
            if (!j.contains(field)) {
                throw IngestionError(std::string("qulac-json input misses '") +
                                     field + "' column");
            }
        }
        for (const auto& [row, id_value] : j.at("topic_id").items()) {
            std::string id = id_value.is_string()
                                 ? id_value.get<std::string>()
                                 : std::to_string(id_value.get<long long>());
            if (!want(id)) continue;
            auto& entry = entries[id];
            entry.query = j.at("topic").at(row).get<std::string>();
            const auto question = j.at("question").at(row);
            if (question.is_string() && !trim(question.get<std::string>()).empty()) {
                entry.cqs.push_back(question.get<std::string>());
            }
            if (j.contains("facet_id") && j.contains("facet_desc")) {
                const auto facet = j.at("facet_id").at(row);
                const std::string facet_id =
                    facet.is_string() ? facet.get<std::string>()
                                      : std::to_string(facet.get<long long>());
                const std::string desc =
                    j.at("facet_desc").at(row).get<std::string>();
                const auto exists = std::find_if(
                    entry.intents.begin(), entry.intents.end(),
                    [&](const auto& p) { return p.first == facet_id; });
                if (exists == entry.intents.end()) {
                    entry.intents.emplace_back(facet_id, desc);
                }
            }
        }
    } else {
        throw ArgumentError("unknown convert format '" + options.format +
                            "' (expected tsv or qulac-json)");
    }

    if (entries.empty()) throw IngestionError("conversion produced no queries");

    std::filesystem::create_directories(options.out_dir);
    {
        std::ofstream out(options.out_dir / "cg.jsonl", std::ios::trunc);
        for (const auto& [id, entry] : entries) {
            nlohmann::json record{{"query_id", id},
                                  {"query", entry.query},
                                  {"clarifying_questions", entry.cqs}};
            if (entry.level) record["ambiguity_level"] = *entry.level;
            out << record.dump() << "\n";
        }
    }
    bool any_intents = false;
    for (const auto& [id, entry] : entries) {
        any_intents = any_intents || !entry.intents.empty();
    }
    if (any_intents) {
        std::ofstream out(options.out_dir / "intents.jsonl", std::ios::trunc);
        for (const auto& [id, entry] : entries) {
            if (entry.intents.empty()) continue;
            nlohmann::json list = nlohmann::json::array();
            for (const auto& [intent_id, desc] : entry.intents) {
                list.push_back({{"intent_id", intent_id}, {"description", desc}});
            }
            out << nlohmann::json{{"query_id", id}, {"intents", list}}.dump()
                << "\n";
        }
    }
    std::cout << "converted " << entries.size() << " queries into "
              << options.out_dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

namespace {

struct CommonFlags {
    std::string config_path;
    std::string dataset;
    std::string schemes;
    std::string scenarios;
    int turns = 0;
    int n_outputs = 0;
    std::string scorer;
    std::string reranker;
    bool resume = false;
    bool no_resume = false;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run configuration file")
            ->required();
        cmd->add_option("--dataset", dataset, "dataset name override");
        cmd->add_option("--schemes", schemes,
                        "comma list: standard,at_standard,cot,at_cot");
        cmd->add_option("--scenarios", scenarios, "comma list: select,respond");
        cmd->add_option("--turns", turns, "conversation turns");
        cmd->add_option("--n-outputs", n_outputs, "clarifications per call");
        cmd->add_option("--scorer", scorer, "lexical or embedding");
        cmd->add_option("--reranker", reranker, "identity or service");
        cmd->add_flag("--resume", resume, "reuse persisted run records");
        cmd->add_flag("--no-resume", no_resume, "drop persisted run records");
        cmd->add_option("--seed", seed, "sampling seed")
            ->check(CLI::NonNegativeNumber);
        cmd->add_option("--out", out, "output directory");
    }

    RunConfig load(CLI::App* cmd) const {
        RunConfig config = RunConfig::from_file(config_path);
        if (cmd->count("--dataset")) config.dataset = dataset;
        if (cmd->count("--schemes")) config.schemes = parse_schemes(schemes);
        if (cmd->count("--scenarios")) {
            config.scenarios = parse_scenarios(scenarios);
        }
        if (cmd->count("--turns")) config.max_turns = turns;
        if (cmd->count("--n-outputs")) config.n_outputs = n_outputs;
        if (cmd->count("--scorer")) config.scorer = scorer;
        if (cmd->count("--reranker")) config.reranker = reranker;
        if (cmd->count("--resume")) config.resume = true;
        if (cmd->count("--no-resume")) config.resume = false;
        if (cmd->count("--seed")) config.seed = seed;
        if (cmd->count("--out")) config.out_dir = out;
        if (config.max_turns < 1) throw ArgumentError("turns must be >= 1");
        if (config.n_outputs < 1) throw ArgumentError("n-outputs must be >= 1");
        return config;
    }
};

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"ambiguity-aware clarification pipeline"};
    app.require_subcommand(1);

    CommonFlags run_cg_flags, simulate_flags, eval_ir_flags, align_flags,
        report_flags;

    auto* run_cg = app.add_subcommand("run-cg",
                                      "generate and score clarifications");
    run_cg_flags.attach(run_cg);
    auto* simulate = app.add_subcommand("simulate",
                                        "simulate multi-turn conversations");
    simulate_flags.attach(simulate);
    auto* eval_ir = app.add_subcommand("eval-ir",
                                       "score simulated runs with retrieval");
    eval_ir_flags.attach(eval_ir);
    auto* align = app.add_subcommand("align",
                                     "correlate CG scores with IR means");
    align_flags.attach(align);
    auto* report = app.add_subcommand("report",
                                      "re-render tables from persisted records");
    report_flags.attach(report);

    std::string prompts_out = "fixtures/prompts";
    auto* prompts = app.add_subcommand("prompts",
                                       "write canonical prompt fixtures");
    prompts->add_option("--out", prompts_out, "fixture directory");

    ConvertOptions convert_options;
    std::string convert_input, convert_out, convert_ids;
    auto* convert = app.add_subcommand("convert",
                                       "convert third-party dataset layouts");
    convert->add_option("--format", convert_options.format,
                        "tsv or qulac-json")
        ->required();
    convert->add_option("--input", convert_input, "source file")->required();
    convert->add_option("--out", convert_out, "output directory")->required();
    convert->add_option("--ids", convert_ids, "optional id-list filter");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (run_cg->parsed()) {
            cmd_run_cg(run_cg_flags.load(run_cg));
        } else if (simulate->parsed()) {
            cmd_simulate(simulate_flags.load(simulate));
        } else if (eval_ir->parsed()) {
            cmd_eval_ir(eval_ir_flags.load(eval_ir));
        } else if (align->parsed()) {
            cmd_align(align_flags.load(align));
        } else if (report->parsed()) {
            cmd_report(report_flags.load(report));
        } else if (prompts->parsed()) {
            cmd_prompts(prompts_out);
        } else if (convert->parsed()) {
            convert_options.input = convert_input;
            convert_options.out_dir = convert_out;
            convert_options.ids_file = convert_ids;
            cmd_convert(convert_options);
        }
    } catch (const ExhaustionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IngestionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace clarify::harness
