#include "clarify/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace clarify::simulation {

namespace {

// Crude token overlap used only as the fallback tiebreaker when the select
// agent refuses to copy an offered reformulation verbatim.
double lexical_overlap(const std::string& a, const std::string& b) {
    auto tokens = [](const std::string& s) {
        std::multiset<std::string> out;
        std::string word;
        for (char c : s) {
            if (std::isalnum(static_cast<unsigned char>(c))) {
                word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            } else if (!word.empty()) {
                out.insert(word);
                word.clear();
            }
        }
        if (!word.empty()) out.insert(word);
        return out;
    };
    const auto ta = tokens(a);
    const auto tb = tokens(b);
    if (ta.empty() || tb.empty()) return 0.0;
    size_t common = 0;
    for (const auto& t : ta) common += tb.count(t) > 0 ? 1 : 0;
    return static_cast<double>(common) / static_cast<double>(ta.size() + tb.size());
}

// Collects the cache key of every forwarded call so a run's provenance can
// fingerprint its full LLM trace.
class KeyTracingBackend : public llm::ChatBackend {
public:
    explicit KeyTracingBackend(llm::ChatBackend& inner) : inner_(inner) {}

    std::string complete(const llm::MessageList& messages,
                         const llm::SamplingParams& params) override {
        keys_.push_back(llm::cache_key(messages, params, inner_.identity()));
        return inner_.complete(messages, params);
    }
    std::string identity() const override { return inner_.identity(); }

    std::string digest() const {
        std::string joined;
        for (const auto& k : keys_) {
            joined += k;
            joined += '\n';
        }
        return llm::sha256_hex(joined);
    }

private:
    llm::ChatBackend& inner_;
    std::vector<std::string> keys_;
};

std::string sanitize_component(const std::string& s) {
    std::string out;
    for (char c : s) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
                c == '_' || c == '.')
                   ? c
                   : '_';
    }
    return out;
}

}  // namespace

std::string system_clock_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

SimulationConfig SimulationConfig::make(Scenario scenario, PromptScheme scheme) {
    SimulationConfig config;
    config.scenario = scenario;
    config.scheme = scheme;
    config.n_outputs = scenario == Scenario::Select ? 5 : 1;
    return config;
}

void SimulationConfig::validate() const {
    if (max_turns < 1) {
        throw ValidationError("max_turns must be >= 1");
    }
    if (scenario == Scenario::Respond && n_outputs != 1) {
        throw ValidationError("respond offers exactly one question per turn");
    }
    if (scenario == Scenario::Select && n_outputs < 2) {
        throw ValidationError("select needs at least two reformulations per turn");
    }
    if (max_parse_retries < 0) {
        throw ValidationError("max_parse_retries must be >= 0");
    }
}

void to_json(nlohmann::json& j, const SimulationConfig& v) {
    j = nlohmann::json{{"scenario", to_string(v.scenario)},
                       {"scheme", to_string(v.scheme)},
                       {"max_turns", v.max_turns},
                       {"n_outputs", v.n_outputs},
                       {"sampling", v.sampling},
                       {"max_parse_retries", v.max_parse_retries}};
}

void from_json(const nlohmann::json& j, SimulationConfig& v) {
    v.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    v.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    v.max_turns = j.at("max_turns").get<int>();
    v.n_outputs = j.at("n_outputs").get<int>();
    v.sampling = j.at("sampling").get<llm::SamplingParams>();
    v.max_parse_retries = j.value("max_parse_retries", 10);
}

void to_json(nlohmann::json& j, const Provenance& v) {
    j = nlohmann::json{{"backend_identity", v.backend_identity},
                       {"call_digest", v.call_digest},
                       {"started_at", v.started_at},
                       {"finished_at", v.finished_at}};
}

void from_json(const nlohmann::json& j, Provenance& v) {
    v.backend_identity = j.at("backend_identity").get<std::string>();
    v.call_digest = j.at("call_digest").get<std::string>();
    v.started_at = j.at("started_at").get<std::string>();
    v.finished_at = j.at("finished_at").get<std::string>();
}

void to_json(nlohmann::json& j, const RunRecord& v) {
    j = nlohmann::json{{"config", v.config},
                       {"conversation", v.conversation},
                       {"per_turn_effective_queries", v.per_turn_effective_queries},
                       {"failed", v.failed},
                       {"provenance", v.provenance}};
    if (v.failed) j["error"] = v.error;
}

void from_json(const nlohmann::json& j, RunRecord& v) {
    v.config = j.at("config").get<SimulationConfig>();
    v.conversation = j.at("conversation").get<Conversation>();
    v.per_turn_effective_queries =
        j.at("per_turn_effective_queries").get<std::vector<std::string>>();
    v.failed = j.at("failed").get<bool>();
    v.error = j.value("error", "");
    v.provenance = j.at("provenance").get<Provenance>();
}

// ---------------------------------------------------------------------------
// RunStore
// ---------------------------------------------------------------------------

RunStore::RunStore(std::filesystem::path root, std::string dataset)
    : root_(std::move(root)), dataset_(std::move(dataset)) {
    if (dataset_.empty()) throw ArgumentError("dataset name must be non-empty");
    std::filesystem::create_directories(root_ / dataset_);
    std::ifstream in(manifest_path());
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("key")) {
            throw IngestionError("corrupt manifest line in " +
                                 manifest_path().string());
        }
        const auto key = j.at("key").get<std::string>();
        if (keys_.find(key) == keys_.end()) order_.push_back(key);
        keys_[key] = j.value("failed", false);
    }
}

std::string RunStore::key_for(PromptScheme scheme, Scenario scenario,
                              const std::string& query_id,
                              const std::string& intent_id) {
    return std::string(to_string(scheme)) + "/" + std::string(to_string(scenario)) +
           "/" + sanitize_component(query_id) + "." + sanitize_component(intent_id);
}

std::string RunStore::key_for(const RunRecord& record) {
    return key_for(record.config.scheme, record.config.scenario,
                   record.conversation.query.query_id,
                   record.conversation.intent.intent_id);
}

std::filesystem::path RunStore::manifest_path() const {
    return root_ / dataset_ / "manifest.jsonl";
}

std::filesystem::path RunStore::path_for(const std::string& key) const {
    return root_ / dataset_ / key;
}

bool RunStore::has(const std::string& key) const {
    std::lock_guard lock(mutex_);
    return keys_.find(key) != keys_.end();
}

bool RunStore::has_success(const std::string& key) const {
    std::lock_guard lock(mutex_);
    const auto it = keys_.find(key);
    return it != keys_.end() && !it->second;
}

void RunStore::put(const RunRecord& record) {
    const std::string key = key_for(record);
    const auto path = path_for(key);
    std::lock_guard lock(mutex_);
    std::filesystem::create_directories(path.parent_path());
    {
        std::ofstream out(path, std::ios::trunc);
        if (!out) {
            throw IngestionError("cannot write run record " + path.string());
        }
        out << nlohmann::json(record).dump() << "\n";
    }
    {
        std::ofstream manifest(manifest_path(), std::ios::app);
        if (!manifest) {
            throw IngestionError("cannot append manifest " +
                                 manifest_path().string());
        }
        manifest << nlohmann::json{{"key", key}, {"failed", record.failed}}.dump()
                 << "\n";
    }
    if (keys_.find(key) == keys_.end()) order_.push_back(key);
    keys_[key] = record.failed;
}

RunRecord RunStore::get(const std::string& key) const {
    const auto path = path_for(key);
    std::ifstream in(path);
    if (!in) {
        throw IngestionError("missing run record " + path.string());
    }
    nlohmann::json j;
    in >> j;
    return j.get<RunRecord>();
}

std::vector<RunRecord> RunStore::load_all() const {
    std::vector<std::string> keys;
    {
        std::lock_guard lock(mutex_);
        keys = order_;
    }
    std::vector<RunRecord> records;
    records.reserve(keys.size());
    for (const auto& key : keys) records.push_back(get(key));
    return records;
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

Simulator::Simulator(std::shared_ptr<llm::ChatBackend> backend,
                     prompting::FewShotSet few_shots, Clock clock)
    : backend_(std::move(backend)),
      few_shots_(std::move(few_shots)),
      clock_(std::move(clock)) {
    if (!backend_) throw ArgumentError("simulator needs a backend");
    if (!clock_) throw ArgumentError("simulator needs a clock");
}

Turn Simulator::simulate_turn(const Conversation& state,
                              const SimulationConfig& config) {
    return run_turn(*backend_, state, config);
}

Turn Simulator::run_turn(llm::ChatBackend& backend, const Conversation& state,
                         const SimulationConfig& config) {
    config.validate();
    if (state.completed_turns() >= config.max_turns) {
        throw RangeError("conversation already has " +
                         std::to_string(state.completed_turns()) + " of " +
                         std::to_string(config.max_turns) + " turns");
    }

    const auto schema = prompting::make_output_schema(config.scheme, config.scenario);
    const auto bundle = prompting::build_generation_prompt(
        config.scheme, config.scenario, state,
        few_shots_.get(config.scheme, config.scenario), config.n_outputs);
    auto output = prompting::generate_with_retry(backend, bundle, schema,
                                                 config.sampling,
                                                 config.max_parse_retries);

    auto offered = std::move(output.clarifications);
    if (static_cast<int>(offered.size()) < config.n_outputs) {
        llm::log_warn("generation returned " + std::to_string(offered.size()) +
                      " of " + std::to_string(config.n_outputs) +
                      " requested clarifications for query '" +
                      state.query.query_id + "'");
    }
    if (config.scenario == Scenario::Respond && offered.size() > 1) {
        llm::log_warn("respond turn keeps only the first of " +
                      std::to_string(offered.size()) + " generated questions");
        offered.resize(1);
    }

    Turn turn;
    turn.index = state.completed_turns() + 1;

    if (config.scenario == Scenario::Select && offered.size() == 1) {
        // A single candidate leaves the user no choice to make.
        llm::log_warn("single reformulation offered; selecting it directly");
        turn.offered = offered;
        turn.user_reply = offered.front().text;
        return turn;
    }

    const auto response_bundle = prompting::build_response_prompt(
        config.scenario, state, offered, state.intent);
    std::string reply = trim(backend.complete(response_bundle.messages,
                                              config.sampling));

    if (config.scenario == Scenario::Select) {
        auto find_match = [&](const std::string& text) -> const Clarification* {
            for (const auto& c : offered) {
                if (trim(c.text) == text) return &c;
            }
            return nullptr;
        };
        const Clarification* chosen = find_match(reply);
        if (!chosen) {
            auto corrected = response_bundle.messages;
            corrected.push_back(
                {llm::Role::User,
                 "Your reply must be exactly one of the offered reformulated "
                 "queries, copied verbatim. Reply with that query only."});
            reply = trim(backend.complete(corrected, config.sampling));
            chosen = find_match(reply);
        }
        if (!chosen) {
            double best = -1.0;
            for (const auto& c : offered) {
                const double score = lexical_overlap(reply, c.text);
                if (score > best) {
                    best = score;
                    chosen = &c;
                }
            }
            llm::log_warn("select reply '" + reply +
                          "' matches no offered reformulation; falling back to "
                          "nearest '" +
                          chosen->text + "'");
        }
        turn.offered = offered;
        turn.user_reply = chosen->text;
        return turn;
    }

    if (reply.empty()) {
        throw PipelineError("simulated user returned an empty answer");
    }
    turn.offered = offered;
    turn.user_reply = reply;

    Conversation extended = state;
    extended.turns.push_back(turn);
    const auto reformulation_bundle = prompting::build_reformulation_prompt(extended);
    const std::string reformulated =
        trim(backend.complete(reformulation_bundle.messages, config.sampling));
    if (reformulated.empty()) {
        throw PipelineError("reformulation returned an empty query");
    }
    turn.reformulated_query = reformulated;
    return turn;
}

RunRecord Simulator::simulate_conversation(const Query& query,
                                           const UserIntent& intent,
                                           const SimulationConfig& config) {
    config.validate();
    KeyTracingBackend tracing(*backend_);

    RunRecord record;
    record.config = config;
    record.provenance.backend_identity = backend_->identity();
    record.provenance.started_at = clock_();

    Conversation conv;
    conv.query = query;
    conv.intent = intent;
    conv.scenario = config.scenario;
    conv.scheme = config.scheme;

    record.per_turn_effective_queries.push_back(query.text);
    try {
        for (int t = 1; t <= config.max_turns; ++t) {
            Turn turn = run_turn(tracing, conv, config);
            conv.turns.push_back(std::move(turn));
            record.per_turn_effective_queries.push_back(effective_query(conv, t));
        }
        validate(conv);
    } catch (const Error& e) {
        record.failed = true;
        record.error = e.what();
    }
    record.conversation = std::move(conv);
    record.provenance.finished_at = clock_();
    record.provenance.call_digest = tracing.digest();
    return record;
}

std::vector<RunRecord> Simulator::simulate_matrix(
    const std::vector<std::pair<Query, UserIntent>>& pairs,
    const std::vector<PromptScheme>& schemes,
    const std::vector<Scenario>& scenarios, const MatrixConfig& config,
    RunStore* store) {
    if (pairs.empty() || schemes.empty() || scenarios.empty()) {
        throw ArgumentError("matrix needs pairs, schemes and scenarios");
    }
    if (config.parallelism < 1) {
        throw ArgumentError("parallelism must be >= 1");
    }

    struct Cell {
        const std::pair<Query, UserIntent>* pair;
        SimulationConfig config;
    };
    std::vector<Cell> cells;
    for (const auto& pair : pairs) {
        for (const auto scheme : schemes) {
            for (const auto scenario : scenarios) {
                SimulationConfig cell_config = SimulationConfig::make(scenario, scheme);
                cell_config.max_turns = config.max_turns;
                cell_config.n_outputs = scenario == Scenario::Select
                                            ? config.n_select_outputs
                                            : config.n_respond_outputs;
                cell_config.sampling = config.sampling;
                cell_config.max_parse_retries = config.max_parse_retries;
                cells.push_back({&pair, cell_config});
            }
        }
    }

    std::vector<RunRecord> records(cells.size());
    std::mutex store_mutex;
    std::atomic<size_t> next{0};

    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < cells.size();
             i = next.fetch_add(1)) {
            const auto& cell = cells[i];
            const auto key = RunStore::key_for(
                cell.config.scheme, cell.config.scenario,
                cell.pair->first.query_id, cell.pair->second.intent_id);
            if (store) {
                std::lock_guard lock(store_mutex);
                if (store->has_success(key)) {
                    records[i] = store->get(key);
                    continue;
                }
            }
            RunRecord record;
            try {
                record = simulate_conversation(cell.pair->first,
                                               cell.pair->second, cell.config);
            } catch (const Error& e) {
                record.config = cell.config;
                record.conversation.query = cell.pair->first;
                record.conversation.intent = cell.pair->second;
                record.conversation.scenario = cell.config.scenario;
                record.conversation.scheme = cell.config.scheme;
                record.per_turn_effective_queries = {cell.pair->first.text};
                record.failed = true;
                record.error = e.what();
                record.provenance.backend_identity = backend_->identity();
                record.provenance.started_at = clock_();
                record.provenance.finished_at = record.provenance.started_at;
                record.provenance.call_digest = llm::sha256_hex("");
            }
            if (store) {
                std::lock_guard lock(store_mutex);
                store->put(record);
            }
            records[i] = std::move(record);
        }
    };

    const int threads = std::min<int>(config.parallelism,
                                      static_cast<int>(cells.size()));
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
    return records;
}

}  // namespace clarify::simulation
