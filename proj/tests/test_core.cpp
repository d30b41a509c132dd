#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "clarify/core.hpp"
#include "support/test_util.hpp"

using namespace clarify;

TEST_CASE("exactly three ambiguity kinds with distinct canonical definitions") {
    CHECK(kAllAmbiguityKinds.size() == 3);
    const auto& sem = ambiguity_definition(AmbiguityKind::Semantic);
    const auto& gen = ambiguity_definition(AmbiguityKind::Generalize);
    const auto& spe = ambiguity_definition(AmbiguityKind::Specify);
    CHECK(sem != gen);
    CHECK(gen != spe);
    // anchor phrases of each canonical definition
    CHECK(sem.find("homonyms") != std::string::npos);
    CHECK(gen.find("broader") != std::string::npos);
    CHECK(spe.find("narrow down") != std::string::npos);
    CHECK(AmbiguityType::of(AmbiguityKind::Specify).definition_text == spe);
}

TEST_CASE("ambiguity kind parsing is case-insensitive and strict") {
    CHECK(ambiguity_kind_from_string("semantic") == AmbiguityKind::Semantic);
    CHECK(ambiguity_kind_from_string("SEMANTIC") == AmbiguityKind::Semantic);
    CHECK(ambiguity_kind_from_string("Generalize") == AmbiguityKind::Generalize);
    CHECK(ambiguity_kind_from_string("sPeCiFy") == AmbiguityKind::Specify);
    CHECK_THROWS_AS(ambiguity_kind_from_string("lexical"), ParseError);
    CHECK_THROWS_AS(ambiguity_kind_from_string(""), ParseError);
}

TEST_CASE("prompt scheme names round-trip and accept aliases") {
    for (auto scheme : kAllPromptSchemes) {
        CHECK(scheme_from_string(to_string(scheme)) == scheme);
    }
    CHECK(scheme_from_string("at-cot") == PromptScheme::AtCot);
    CHECK(scheme_from_string("AT_STANDARD") == PromptScheme::AtStandard);
    CHECK(scheme_from_string("CoT") == PromptScheme::Cot);
    CHECK_THROWS_AS(scheme_from_string("zero-shot"), ParseError);
    CHECK(display_name(PromptScheme::AtCot) == "AT-CoT");
    CHECK(display_name(PromptScheme::Standard) == "standard");

    CHECK(is_at_scheme(PromptScheme::AtStandard));
    CHECK(is_at_scheme(PromptScheme::AtCot));
    CHECK_FALSE(is_at_scheme(PromptScheme::Standard));
    CHECK(is_cot_scheme(PromptScheme::Cot));
    CHECK(is_cot_scheme(PromptScheme::AtCot));
    CHECK_FALSE(is_cot_scheme(PromptScheme::AtStandard));
}

TEST_CASE("scenario parsing") {
    CHECK(scenario_from_string("select") == Scenario::Select);
    CHECK(scenario_from_string("Respond") == Scenario::Respond);
    CHECK_THROWS_AS(scenario_from_string("chat"), ParseError);
    CHECK(clarification_kind_for(Scenario::Select) ==
          ClarificationKind::ReformulatedQuery);
    CHECK(clarification_kind_for(Scenario::Respond) ==
          ClarificationKind::ClarifyingQuestion);
}

TEST_CASE("query construction trims and validates") {
    const auto q = Query::make("q1", "  jaguar  ", 4);
    CHECK(q.text == "jaguar");
    CHECK(q.ambiguity_level == 4);
    CHECK_THROWS_AS(Query::make("q2", "   "), ValidationError);
    CHECK_THROWS_AS(Query::make("q3", "ok", 0), ValidationError);
    CHECK_THROWS_AS(Query::make("q3", "ok", 5), ValidationError);
    CHECK(Query::make("q4", "ok", 1).ambiguity_level == 1);
}

TEST_CASE("user intent requires a description") {
    CHECK_THROWS_AS(UserIntent::make("f1", "q1", ""), ValidationError);
    CHECK(UserIntent::make("f1", "q1", "find maps").description == "find maps");
}

TEST_CASE("generation output validation per scheme") {
    GenerationOutput out;
    out.clarifications = {{ClarificationKind::ClarifyingQuestion, "Which one?"}};

    CHECK_NOTHROW(out.validate(PromptScheme::Standard));
    CHECK_THROWS_AS(out.validate(PromptScheme::Cot), ValidationError);

    out.reasoning = "the query is ambiguous";
    CHECK_NOTHROW(out.validate(PromptScheme::Cot));
    CHECK_THROWS_AS(out.validate(PromptScheme::Standard), ValidationError);

    out.predicted_types = std::vector<AmbiguityKind>{AmbiguityKind::Semantic,
                                                     AmbiguityKind::Specify};
    CHECK_NOTHROW(out.validate(PromptScheme::AtCot));
    CHECK_THROWS_AS(out.validate(PromptScheme::Cot), ValidationError);

    out.predicted_types = std::vector<AmbiguityKind>{};
    CHECK_THROWS_AS(out.validate(PromptScheme::AtCot), ValidationError);
    out.predicted_types = std::vector<AmbiguityKind>{AmbiguityKind::Semantic,
                                                     AmbiguityKind::Semantic};
    CHECK_THROWS_AS(out.validate(PromptScheme::AtCot), ValidationError);

    out.predicted_types = std::vector<AmbiguityKind>{AmbiguityKind::Semantic};
    out.clarifications.clear();
    CHECK_THROWS_AS(out.validate(PromptScheme::AtCot), ValidationError);
}

namespace {

Conversation select_conversation() {
    auto conv = testutil::fresh_conversation(Scenario::Select,
                                             PromptScheme::Standard,
                                             "glass mirror");
    Turn turn;
    turn.index = 1;
    turn.offered = {{ClarificationKind::ReformulatedQuery, "glass mirror decor tips"},
                    {ClarificationKind::ReformulatedQuery, "glass mirror repair"}};
    turn.user_reply = "glass mirror decor tips";
    conv.turns.push_back(turn);
    return conv;
}

Conversation respond_conversation() {
    auto conv = testutil::fresh_conversation(Scenario::Respond,
                                             PromptScheme::Cot);
    Turn t1;
    t1.index = 1;
    t1.offered = {{ClarificationKind::ClarifyingQuestion,
                   "Are you looking to make the room appear larger?"}};
    t1.user_reply = "Yes, with mirrors.";
    t1.reformulated_query = "mirror tricks to make a small room look larger";
    Turn t2 = t1;
    t2.index = 2;
    t2.user_reply = "Placement advice please.";
    t2.reformulated_query = "mirror placement to enlarge small room";
    conv.turns = {t1, t2};
    return conv;
}

}  // namespace

TEST_CASE("effective_query walks the turn structure") {
    const auto sel = select_conversation();
    CHECK(effective_query(sel, 0) == "glass mirror");
    CHECK(effective_query(sel, 1) == "glass mirror decor tips");

    const auto res = respond_conversation();
    CHECK(effective_query(res, 0) == "mirror effect in small room");
    CHECK(effective_query(res, 2) == "mirror placement to enlarge small room");

    CHECK_THROWS_AS(effective_query(sel, 2), RangeError);
    CHECK_THROWS_AS(effective_query(sel, -1), RangeError);
    // defined for every index up to completed turns
    for (int i = 0; i <= res.completed_turns(); ++i) {
        CHECK_FALSE(effective_query(res, i).empty());
    }
}

TEST_CASE("conversation validation catches structural defects") {
    CHECK_NOTHROW(validate(select_conversation()));
    CHECK_NOTHROW(validate(respond_conversation()));

    auto bad_index = respond_conversation();
    bad_index.turns[1].index = 3;
    CHECK_THROWS_AS(validate(bad_index), ValidationError);

    auto bad_member = select_conversation();
    bad_member.turns[0].user_reply = "a paraphrase instead";
    CHECK_THROWS_AS(validate(bad_member), ValidationError);

    auto bad_kind = select_conversation();
    bad_kind.turns[0].offered[0].kind = ClarificationKind::ClarifyingQuestion;
    CHECK_THROWS_AS(validate(bad_kind), ValidationError);

    auto no_reform = respond_conversation();
    no_reform.turns[1].reformulated_query.reset();
    CHECK_THROWS_AS(validate(no_reform), ValidationError);
}

namespace {

std::mt19937 rng(20240817);

std::string random_word() {
    static const char* kWords[] = {"mirror", "glass",  "room", "jaguar",
                                   "speed",  "storage", "apple", "bank",
                                   "hours",  "memory", "cards", "small"};
    return kWords[rng() % 12];
}

std::string random_text(int min_words = 1, int max_words = 6) {
    const int n = min_words + static_cast<int>(rng() % (max_words - min_words + 1));
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (!out.empty()) out += " ";
        out += random_word();
    }
    return out;
}

GenerationOutput random_output(PromptScheme scheme) {
    GenerationOutput out;
    const auto kind = rng() % 2 == 0 ? ClarificationKind::ClarifyingQuestion
                                     : ClarificationKind::ReformulatedQuery;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) out.clarifications.push_back({kind, random_text()});
    if (is_cot_scheme(scheme)) out.reasoning = random_text(3, 10);
    if (scheme == PromptScheme::AtCot) {
        std::vector<AmbiguityKind> kinds;
        for (auto k : kAllAmbiguityKinds) {
            if (rng() % 2 == 0) kinds.push_back(k);
        }
        if (kinds.empty()) kinds.push_back(AmbiguityKind::Semantic);
        out.predicted_types = kinds;
    }
    return out;
}

Conversation random_conversation() {
    const auto scenario = rng() % 2 == 0 ? Scenario::Select : Scenario::Respond;
    const auto scheme = kAllPromptSchemes[rng() % 4];
    auto conv = testutil::fresh_conversation(scenario, scheme, random_text());
    const int turns = static_cast<int>(rng() % 4);
    for (int t = 1; t <= turns; ++t) {
        Turn turn;
        turn.index = t;
        const auto kind = clarification_kind_for(scenario);
        const int offered = scenario == Scenario::Select
                                ? 2 + static_cast<int>(rng() % 4)
                                : 1;
        for (int i = 0; i < offered; ++i) {
            turn.offered.push_back({kind, random_text() + " " + std::to_string(i)});
        }
        turn.user_reply = scenario == Scenario::Select
                              ? turn.offered[rng() % turn.offered.size()].text
                              : random_text();
        if (scenario == Scenario::Respond) turn.reformulated_query = random_text();
        conv.turns.push_back(turn);
    }
    return conv;
}

}  // namespace

TEST_CASE("serialization round-trips are the identity") {
    for (int i = 0; i < 200; ++i) {
        const auto scheme = kAllPromptSchemes[rng() % 4];
        const auto out = random_output(scheme);
        const nlohmann::json j = out;
        const auto back = j.get<GenerationOutput>();
        CHECK(nlohmann::json(back) == j);

        const auto conv = random_conversation();
        const nlohmann::json cj = conv;
        const auto conv_back = cj.get<Conversation>();
        CHECK(nlohmann::json(conv_back) == cj);
    }
    const auto q = Query::make("q9", "mirror effect", 2);
    CHECK(nlohmann::json(nlohmann::json(q).get<Query>()) == nlohmann::json(q));
    const auto intent = UserIntent::make("f", "q9", "desc");
    CHECK(nlohmann::json(nlohmann::json(intent).get<UserIntent>()) ==
          nlohmann::json(intent));
}

TEST_CASE("generation output json rejects unknown type names") {
    GenerationOutput out;
    out.reasoning = "r";
    out.predicted_types = std::vector<AmbiguityKind>{AmbiguityKind::Semantic};
    out.clarifications = {{ClarificationKind::ClarifyingQuestion, "one?"}};
    nlohmann::json j = out;
    j["predicted_types"].push_back("pragmatic");
    CHECK_THROWS_AS((void)j.get<GenerationOutput>(), ParseError);
}

TEST_CASE("trim strips ascii whitespace") {
    CHECK(trim("  a b \t\n") == "a b");
    CHECK(trim("") == "");
    CHECK(trim("   ") == "");
}
