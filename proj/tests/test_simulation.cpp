#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "clarify/offline_backend.hpp"
#include "clarify/simulation.hpp"
#include "support/test_util.hpp"

using namespace clarify;

namespace {

const simulation::Clock kFixedClock = [] {
    return std::string("2024-01-01T00:00:00Z");
};

Query mirror_query() { return Query::make("q1", "mirror effect", 3); }

UserIntent mirror_intent() {
    return UserIntent::make("f1", "q1",
                            "Tips on using wall mirrors to make a small room "
                            "look larger.");
}

std::string gen_reply(std::vector<std::string> clarifications) {
    return nlohmann::json{{"clarifications", clarifications}}.dump();
}

}  // namespace

TEST_CASE("simulation config defaults and validation") {
    const auto select = simulation::SimulationConfig::make(Scenario::Select,
                                                           PromptScheme::Cot);
    CHECK(select.n_outputs == 5);
    CHECK(select.max_turns == 3);
    CHECK(select.max_parse_retries == 10);
    CHECK_NOTHROW(select.validate());

    const auto respond = simulation::SimulationConfig::make(
        Scenario::Respond, PromptScheme::Standard);
    CHECK(respond.n_outputs == 1);
    CHECK_NOTHROW(respond.validate());

    auto bad = respond;
    bad.n_outputs = 3;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    auto narrow = select;
    narrow.n_outputs = 1;
    CHECK_THROWS_AS(narrow.validate(), ValidationError);
    auto no_turns = respond;
    no_turns.max_turns = 0;
    CHECK_THROWS_AS(no_turns.validate(), ValidationError);
    auto negative = respond;
    negative.max_parse_retries = -1;
    CHECK_THROWS_AS(negative.validate(), ValidationError);

    const nlohmann::json j = select;
    const auto back = j.get<simulation::SimulationConfig>();
    CHECK(back.scenario == Scenario::Select);
    CHECK(back.scheme == PromptScheme::Cot);
    CHECK(back.n_outputs == 5);
}

TEST_CASE("system clock renders iso utc seconds") {
    const auto stamp = simulation::system_clock_utc();
    REQUIRE(stamp.size() == 20);
    CHECK(stamp[4] == '-');
    CHECK(stamp[10] == 'T');
    CHECK(stamp.back() == 'Z');
}

TEST_CASE("run store keys, persistence, and resume bookkeeping") {
    testutil::TempDir tmp;

    CHECK(simulation::RunStore::key_for(PromptScheme::AtCot, Scenario::Select,
                                        "q1", "f2") == "at_cot/select/q1.f2");
    // path-hostile ids are flattened
    CHECK(simulation::RunStore::key_for(PromptScheme::Standard,
                                        Scenario::Respond, "q 1/x", "f#2") ==
          "standard/respond/q_1_x.f_2");

    simulation::RunStore store(tmp.path() / "runs", "mini");

    simulation::RunRecord record;
    record.config = simulation::SimulationConfig::make(Scenario::Respond,
                                                       PromptScheme::Standard);
    record.conversation.query = mirror_query();
    record.conversation.intent = mirror_intent();
    record.conversation.scenario = Scenario::Respond;
    record.conversation.scheme = PromptScheme::Standard;
    record.per_turn_effective_queries = {"mirror effect"};
    record.provenance = {"scripted", "digest", "t0", "t1"};

    const auto key = simulation::RunStore::key_for(record);
    CHECK_FALSE(store.has(key));
    store.put(record);
    CHECK(store.has(key));
    CHECK(store.has_success(key));

    const auto loaded = store.get(key);
    CHECK(nlohmann::json(loaded) == nlohmann::json(record));

    // failed rewrite flips has_success, and the latest write wins
    auto failed = record;
    failed.failed = true;
    failed.error = "backend down";
    store.put(failed);
    CHECK(store.has(key));
    CHECK_FALSE(store.has_success(key));
    CHECK(store.get(key).error == "backend down");

    // a fresh store instance replays the manifest
    simulation::RunStore reopened(tmp.path() / "runs", "mini");
    CHECK(reopened.has(key));
    CHECK_FALSE(reopened.has_success(key));
    REQUIRE(reopened.load_all().size() == 1);
    CHECK(reopened.load_all()[0].error == "backend down");

    CHECK_THROWS_AS(store.get("standard/respond/absent.f"), IngestionError);
    CHECK_THROWS_AS(simulation::RunStore(tmp.path() / "runs", ""),
                    ArgumentError);
}

TEST_CASE("corrupt manifests are rejected") {
    testutil::TempDir tmp;
    const auto dir = tmp.path() / "runs" / "mini";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "manifest.jsonl") << "not json\n";
    CHECK_THROWS_AS(simulation::RunStore(tmp.path() / "runs", "mini"),
                    IngestionError);
}

TEST_CASE("respond turn: generate, answer, reformulate") {
    auto backend = llm::ScriptedBackend::queue(
        {gen_reply({"Do you want to make the room look larger?"}),
         "Yes, with wall mirrors.",
         "using wall mirrors to make a small room look larger"});
    simulation::Simulator sim(backend, prompting::FewShotSet::none(),
                              kFixedClock);

    Conversation conv;
    conv.query = mirror_query();
    conv.intent = mirror_intent();
    conv.scenario = Scenario::Respond;
    conv.scheme = PromptScheme::Standard;

    const auto config = simulation::SimulationConfig::make(
        Scenario::Respond, PromptScheme::Standard);
    const auto turn = sim.simulate_turn(conv, config);

    CHECK(turn.index == 1);
    REQUIRE(turn.offered.size() == 1);
    CHECK(turn.offered[0].kind == ClarificationKind::ClarifyingQuestion);
    CHECK(turn.user_reply == "Yes, with wall mirrors.");
    CHECK(turn.reformulated_query ==
          "using wall mirrors to make a small room look larger");
    CHECK(backend->calls() == 3);

    // the three bundles in order: generation, response, reformulation
    const auto captured = backend->captured();
    CHECK(captured[0][0].content.find("Given a query in an information-seeking "
                                      "system") == 0);
    CHECK(captured[1][0].content.find("respond to the clarification question") !=
          std::string::npos);
    CHECK(captured[2][0].content.find("summarize the conversation") !=
          std::string::npos);
    // the response prompt shows the intent, so the user can answer faithfully
    CHECK(captured[1].back().content.find(mirror_intent().description) !=
          std::string::npos);
}

TEST_CASE("respond keeps only the first generated question") {
    auto backend = llm::ScriptedBackend::queue(
        {gen_reply({"First question?", "Second question?"}),
         "An answer.",
         "reformulated"});
    simulation::Simulator sim(backend, prompting::FewShotSet::none(),
                              kFixedClock);
    Conversation conv;
    conv.query = mirror_query();
    conv.intent = mirror_intent();
    conv.scenario = Scenario::Respond;
    conv.scheme = PromptScheme::Standard;
    const auto turn = sim.simulate_turn(
        conv,
        simulation::SimulationConfig::make(Scenario::Respond,
                                           PromptScheme::Standard));
    REQUIRE(turn.offered.size() == 1);
    CHECK(turn.offered[0].text == "First question?");
}

TEST_CASE("respond rejects empty answers and reformulations") {
    Conversation conv;
    conv.query = mirror_query();
    conv.intent = mirror_intent();
    conv.scenario = Scenario::Respond;
    conv.scheme = PromptScheme::Standard;
    const auto config = simulation::SimulationConfig::make(
        Scenario::Respond, PromptScheme::Standard);

    auto empty_answer = llm::ScriptedBackend::queue(
        {gen_reply({"A question?"}), "   "});
    simulation::Simulator sim1(empty_answer, prompting::FewShotSet::none(),
                               kFixedClock);
    CHECK_THROWS_AS(sim1.simulate_turn(conv, config), PipelineError);

    auto empty_reform = llm::ScriptedBackend::queue(
        {gen_reply({"A question?"}), "An answer.", "  "});
    simulation::Simulator sim2(empty_reform, prompting::FewShotSet::none(),
                               kFixedClock);
    CHECK_THROWS_AS(sim2.simulate_turn(conv, config), PipelineError);
}

TEST_CASE("select turn accepts a verbatim choice") {
    auto backend = llm::ScriptedBackend::queue(
        {gen_reply({"mirror effect decor", "mirror effect physics"}),
         "mirror effect decor"});
    simulation::Simulator sim(backend, prompting::FewShotSet::none(),
                              kFixedClock);

    Conversation conv;
    conv.query = mirror_query();
    conv.intent = mirror_intent();
    conv.scenario = Scenario::Select;
    conv.scheme = PromptScheme::Standard;

    auto config = simulation::SimulationConfig::make(Scenario::Select,
                                                     PromptScheme::Standard);
    config.n_outputs = 2;
    const auto turn = sim.simulate_turn(conv, config);

    CHECK(turn.user_reply == "mirror effect decor");
    CHECK(turn.offered.size() == 2);
    CHECK(turn.offered[0].kind == ClarificationKind::ReformulatedQuery);
    CHECK_FALSE(turn.reformulated_query.has_value());
    CHECK(backend->calls() == 2);  // no corrective round needed
}

TEST_CASE("select re-asks once, then falls back to nearest overlap") {
    Conversation conv;
    conv.query = mirror_query();
    conv.intent = mirror_intent();
    conv.scenario = Scenario::Select;
    conv.scheme = PromptScheme::Standard;
    auto config = simulation::SimulationConfig::make(Scenario::Select,
                                                     PromptScheme::Standard);
    config.n_outputs = 2;

    SUBCASE("corrective round recovers") {
        auto backend = llm::ScriptedBackend::queue(
            {gen_reply({"red car prices", "blue mountain bike"}),
             "I would pick the red car option",
             "red car prices"});
        simulation::Simulator sim(backend, prompting::FewShotSet::none(),
                                  kFixedClock);
        const auto turn = sim.simulate_turn(conv, config);
        CHECK(turn.user_reply == "red car prices");
        CHECK(backend->calls() == 3);
        const auto captured = backend->captured();
        CHECK(captured[2].back().content.find("copied verbatim") !=
              std::string::npos);
    }

    SUBCASE("fallback picks the lexically nearest offer") {
        auto backend = llm::ScriptedBackend::queue(
            {gen_reply({"red car prices", "blue mountain bike"}),
             "I would pick the red car option",
             "definitely the red car"});
        simulation::Simulator sim(backend, prompting::FewShotSet::none(),
                                  kFixedClock);
        const auto turn = sim.simulate_turn(conv, config);
        CHECK(turn.user_reply == "red car prices");
        CHECK(backend->calls() == 3);
    }

    SUBCASE("a single offered reformulation is selected without asking") {
        auto backend =
            llm::ScriptedBackend::queue({gen_reply({"red car prices"})});
        simulation::Simulator sim(backend, prompting::FewShotSet::none(),
                                  kFixedClock);
        const auto turn = sim.simulate_turn(conv, config);
        CHECK(turn.user_reply == "red car prices");
        CHECK(backend->calls() == 1);
    }
}

TEST_CASE("whole conversations run exactly max_turns turns") {
    auto backend = std::make_shared<llm::OfflineChatBackend>();
    simulation::Simulator sim(backend, prompting::FewShotSet::defaults(),
                              kFixedClock);

    for (auto scenario : {Scenario::Select, Scenario::Respond}) {
        for (auto scheme : {PromptScheme::Standard, PromptScheme::AtCot}) {
            auto config = simulation::SimulationConfig::make(scenario, scheme);
            config.max_turns = 3;
            const auto record =
                sim.simulate_conversation(mirror_query(), mirror_intent(),
                                          config);
            INFO("scenario=" << to_string(scenario)
                             << " scheme=" << to_string(scheme));
            REQUIRE_FALSE(record.failed);
            CHECK(record.conversation.completed_turns() == 3);
            CHECK(record.per_turn_effective_queries.size() == 4);
            CHECK(record.per_turn_effective_queries[0] == "mirror effect");
            CHECK_NOTHROW(validate(record.conversation));
            CHECK(record.provenance.backend_identity == "offline");
            CHECK(record.provenance.started_at == "2024-01-01T00:00:00Z");
            CHECK(record.provenance.call_digest.size() == 64);
            for (int t = 0; t <= 3; ++t) {
                CHECK(record.per_turn_effective_queries[static_cast<size_t>(t)] ==
                      effective_query(record.conversation, t));
            }
        }
    }
}

TEST_CASE("identical traces produce byte-identical records") {
    const auto simulate_once = [] {
        auto backend = std::make_shared<llm::OfflineChatBackend>();
        simulation::Simulator sim(backend, prompting::FewShotSet::defaults(),
                                  kFixedClock);
        auto config = simulation::SimulationConfig::make(Scenario::Respond,
                                                         PromptScheme::AtCot);
        return nlohmann::json(sim.simulate_conversation(mirror_query(),
                                                        mirror_intent(),
                                                        config))
            .dump();
    };
    CHECK(simulate_once() == simulate_once());
}

TEST_CASE("failures mid-conversation yield partial failed records") {
    // replies cover turn 1 only; turn 2 generation hits an empty queue
    auto backend = llm::ScriptedBackend::queue(
        {gen_reply({"A question?"}), "An answer.", "reformulated query"});
    simulation::Simulator sim(backend, prompting::FewShotSet::none(),
                              kFixedClock);
    auto config = simulation::SimulationConfig::make(Scenario::Respond,
                                                     PromptScheme::Standard);
    config.max_turns = 2;
    const auto record =
        sim.simulate_conversation(mirror_query(), mirror_intent(), config);
    CHECK(record.failed);
    CHECK(record.error.find("queue exhausted") != std::string::npos);
    CHECK(record.conversation.completed_turns() == 1);
    CHECK(record.per_turn_effective_queries.size() == 2);
}

TEST_CASE("parse exhaustion is recorded, not thrown") {
    std::vector<std::string> garbage(3, "not json");
    auto backend = llm::ScriptedBackend::queue(garbage);
    simulation::Simulator sim(backend, prompting::FewShotSet::none(),
                              kFixedClock);
    auto config = simulation::SimulationConfig::make(Scenario::Respond,
                                                     PromptScheme::Standard);
    config.max_turns = 1;
    config.max_parse_retries = 2;
    const auto record =
        sim.simulate_conversation(mirror_query(), mirror_intent(), config);
    CHECK(record.failed);
    CHECK(record.error.find("3 attempts") != std::string::npos);
    CHECK(backend->calls() == 3);
}

TEST_CASE("matrix covers pairs x schemes x scenarios in nesting order") {
    auto backend = std::make_shared<llm::OfflineChatBackend>();
    simulation::Simulator sim(backend, prompting::FewShotSet::defaults(),
                              kFixedClock);

    const std::vector<std::pair<Query, UserIntent>> pairs = {
        {mirror_query(), mirror_intent()},
        {Query::make("q2", "jaguar", 4),
         UserIntent::make("f2", "q2", "Top speed of the jaguar cat.")}};
    const std::vector<PromptScheme> schemes = {PromptScheme::Standard,
                                               PromptScheme::AtCot};
    const std::vector<Scenario> scenarios = {Scenario::Select,
                                             Scenario::Respond};

    simulation::MatrixConfig config;
    config.max_turns = 2;
    config.n_select_outputs = 3;

    testutil::TempDir tmp;
    simulation::RunStore store(tmp.path() / "runs", "mini");
    const auto records =
        sim.simulate_matrix(pairs, schemes, scenarios, config, &store);

    REQUIRE(records.size() == 8);
    CHECK(records[0].conversation.query.query_id == "q1");
    CHECK(records[0].config.scheme == PromptScheme::Standard);
    CHECK(records[0].config.scenario == Scenario::Select);
    CHECK(records[0].config.n_outputs == 3);
    CHECK(records[1].config.scenario == Scenario::Respond);
    CHECK(records[1].config.n_outputs == 1);
    CHECK(records[2].config.scheme == PromptScheme::AtCot);
    CHECK(records[4].conversation.query.query_id == "q2");
    for (const auto& record : records) {
        CHECK_FALSE(record.failed);
        CHECK(record.conversation.completed_turns() == 2);
    }

    // every record is persisted
    CHECK(store.load_all().size() == 8);

    // resume never touches the backend: an empty scripted queue would throw
    auto dead = llm::ScriptedBackend::queue({});
    simulation::Simulator resumed_sim(dead, prompting::FewShotSet::defaults(),
                                      kFixedClock);
    const auto resumed =
        resumed_sim.simulate_matrix(pairs, schemes, scenarios, config, &store);
    REQUIRE(resumed.size() == 8);
    CHECK(dead->calls() == 0);
    for (size_t i = 0; i < 8; ++i) {
        CHECK(nlohmann::json(resumed[i]) == nlohmann::json(records[i]));
    }
}

TEST_CASE("parallel matrix execution is deterministic") {
    const std::vector<std::pair<Query, UserIntent>> pairs = {
        {mirror_query(), mirror_intent()},
        {Query::make("q2", "jaguar", 4),
         UserIntent::make("f2", "q2", "Top speed of the jaguar cat.")},
        {Query::make("q3", "apple storage", 2),
         UserIntent::make("f3", "q3", "How much iCloud storage is free.")}};
    const std::vector<PromptScheme> schemes = {PromptScheme::Cot,
                                               PromptScheme::AtCot};
    const std::vector<Scenario> scenarios = {Scenario::Select,
                                             Scenario::Respond};

    const auto run_with = [&](int parallelism) {
        auto backend = std::make_shared<llm::OfflineChatBackend>();
        simulation::Simulator sim(backend, prompting::FewShotSet::defaults(),
                                  kFixedClock);
        simulation::MatrixConfig config;
        config.max_turns = 2;
        config.parallelism = parallelism;
        nlohmann::json all = nlohmann::json::array();
        for (const auto& r :
             sim.simulate_matrix(pairs, schemes, scenarios, config)) {
            all.push_back(r);
        }
        return all.dump();
    };
    CHECK(run_with(1) == run_with(4));
}

TEST_CASE("matrix argument validation") {
    auto backend = std::make_shared<llm::OfflineChatBackend>();
    simulation::Simulator sim(backend);
    simulation::MatrixConfig config;
    CHECK_THROWS_AS(sim.simulate_matrix({}, {PromptScheme::Standard},
                                        {Scenario::Respond}, config),
                    ArgumentError);
    CHECK_THROWS_AS(
        sim.simulate_matrix({{mirror_query(), mirror_intent()}}, {},
                            {Scenario::Respond}, config),
        ArgumentError);
    config.parallelism = 0;
    CHECK_THROWS_AS(
        sim.simulate_matrix({{mirror_query(), mirror_intent()}},
                            {PromptScheme::Standard}, {Scenario::Respond},
                            config),
        ArgumentError);
}
