#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "clarify/harness.hpp"
#include "clarify/offline_backend.hpp"
#include "clarify/simulation.hpp"
#include "support/test_util.hpp"

using namespace clarify;
namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "clarify");
    std::vector<std::vector<char>> storage;
    for (const auto& a : args) {
        storage.emplace_back(a.begin(), a.end());
        storage.back().push_back('\0');
    }
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    return harness::run_cli(static_cast<int>(argv.size()), argv.data());
}

nlohmann::json mini_config_json(const fs::path& out_dir) {
    const auto data = testutil::fixtures() / "data";
    return nlohmann::json{
        {"dataset", "mini"},
        {"cg_path", (data / "cg_mini.jsonl").string()},
        {"ir_paths",
         {{"queries", (data / "ir_queries.jsonl").string()},
          {"intents", (data / "ir_intents.jsonl").string()},
          {"qrels", (data / "ir_qrels.txt").string()},
          {"corpus", (data / "ir_corpus.jsonl").string()}}},
        {"facet_qrels", true},
        {"backend", "offline"},
        {"scorer", "lexical"},
        {"reranker", "identity"},
        {"n_outputs", 3},
        {"max_turns", 2},
        {"parallelism", 2},
        {"trec_runs", true},
        {"out_dir", out_dir.string()}};
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j,
                      const std::string& name = "config.json") {
    const auto path = dir / name;
    testutil::write_file(path, j.dump(2) + "\n");
    return path;
}

int count_lines(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    int n = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("run config defaults cover the full pipeline") {
    harness::RunConfig config;
    CHECK(config.schemes.size() == 4);
    CHECK(config.scenarios.size() == 2);
    CHECK(config.max_turns == 3);
    CHECK(config.n_outputs == 5);
    CHECK(config.n_respond_outputs == 1);
    CHECK(config.max_parse_retries == 10);
    CHECK(config.intent_char_budget == 2000);
    CHECK(config.generation_calls == "single");
    CHECK(config.backend == "offline");
    CHECK(config.scorer == "lexical");
    CHECK(config.reranker == "identity");
    CHECK(config.metric == "ndcg");
    CHECK(config.gain == "linear");
    CHECK(config.alpha == doctest::Approx(0.01));
    CHECK(config.resume);
}

TEST_CASE("run config loads from file with partial overrides") {
    testutil::TempDir tmp;
    const auto path = write_config(
        tmp.path(), nlohmann::json{{"dataset", "demo"},
                                   {"schemes", {"standard", "at_cot"}},
                                   {"scenarios", {"respond"}},
                                   {"n_outputs", 7},
                                   {"seed", 42},
                                   {"metric", "mrr"}});
    const auto config = harness::RunConfig::from_file(path);
    CHECK(config.dataset == "demo");
    REQUIRE(config.schemes.size() == 2);
    CHECK(config.schemes[0] == PromptScheme::Standard);
    CHECK(config.schemes[1] == PromptScheme::AtCot);
    REQUIRE(config.scenarios.size() == 1);
    CHECK(config.scenarios[0] == Scenario::Respond);
    CHECK(config.n_outputs == 7);
    CHECK(config.seed == 42);
    CHECK(config.metric == "mrr");
    // untouched fields keep defaults
    CHECK(config.max_turns == 3);
    CHECK(config.backend == "offline");
}

TEST_CASE("run config file errors") {
    testutil::TempDir tmp;
    CHECK_THROWS_AS(harness::RunConfig::from_file(tmp.path() / "absent.json"),
                    IngestionError);

    const auto bad = tmp.path() / "bad.json";
    testutil::write_file(bad, "not json at all\n");
    CHECK_THROWS_AS(harness::RunConfig::from_file(bad), IngestionError);

    const auto bad_scheme = write_config(
        tmp.path(), nlohmann::json{{"schemes", {"zigzag"}}}, "scheme.json");
    CHECK_THROWS_AS(harness::RunConfig::from_file(bad_scheme), ParseError);
}

TEST_CASE("config hash is stable and sensitive") {
    harness::RunConfig a, b;
    CHECK(a.config_hash() == b.config_hash());
    CHECK(a.config_hash().size() == 64);
    CHECK(a.config_hash() == a.config_hash());

    b.seed = 1;
    CHECK(a.config_hash() != b.config_hash());

    b = a;
    b.metric = "mrr";
    CHECK(a.config_hash() != b.config_hash());

    // round trip through JSON preserves the hash
    nlohmann::json j = a;
    harness::RunConfig c;
    from_json(j, c);
    CHECK(c.config_hash() == a.config_hash());
    CHECK(j.at("generation_calls") == "single");
}

TEST_CASE("run lock admits one writer at a time") {
    testutil::TempDir tmp;
    const auto dir = tmp.path() / "run";
    {
        harness::RunLock lock(dir);
        CHECK(fs::exists(dir / ".lock"));
        CHECK_THROWS_AS(harness::RunLock second(dir), Error);
    }
    CHECK_FALSE(fs::exists(dir / ".lock"));
    harness::RunLock again(dir);  // released lock can be retaken
}

TEST_CASE("factories select implementations by name") {
    harness::RunConfig config;

    config.backend = "offline";
    CHECK(harness::make_backend(config)->identity() == "offline");
    config.backend = "http";
    CHECK(harness::make_backend(config)->identity().find("http") !=
          std::string::npos);
    config.backend = "carrier-pigeon";
    CHECK_THROWS_AS(harness::make_backend(config), ArgumentError);

    config.backend = "offline";
    config.scorer = "lexical";
    CHECK(harness::make_scorer(config)->identity() == "lexical-f1");
    config.scorer = "embedding";
    CHECK(harness::make_scorer(config)->identity() == "embedding-cosine");
    config.scorer = "vibes";
    CHECK_THROWS_AS(harness::make_scorer(config), ArgumentError);

    config.scorer = "lexical";
    config.reranker = "identity";
    CHECK(harness::make_reranker(config)->identity() == "identity");
    config.reranker = "service";
    CHECK(harness::make_reranker(config)->identity() == "embedding-cosine");
    config.reranker = "quantum";
    CHECK_THROWS_AS(harness::make_reranker(config), ArgumentError);
}

TEST_CASE("cli rejects malformed invocations") {
    CHECK(cli({"--help"}) == 0);
    CHECK(cli({}) == 1);                       // subcommand required
    CHECK(cli({"run-cg"}) == 1);               // --config required
    CHECK(cli({"make-coffee"}) == 1);          // unknown subcommand
    CHECK(cli({"run-cg", "--config", "/nonexistent/config.json"}) == 1);
}

TEST_CASE("cli surfaces command validation as exit 1") {
    testutil::TempDir tmp;

    SUBCASE("run-cg without cg_path") {
        auto j = mini_config_json(tmp.path() / "out");
        j.erase("cg_path");
        const auto path = write_config(tmp.path(), j);
        CHECK(cli({"run-cg", "--config", path.string()}) == 1);
    }

    SUBCASE("simulate select needs several offers") {
        auto j = mini_config_json(tmp.path() / "out");
        j["n_outputs"] = 1;
        const auto path = write_config(tmp.path(), j);
        CHECK(cli({"simulate", "--config", path.string()}) == 1);
    }

    SUBCASE("eval-ir before simulate") {
        const auto path =
            write_config(tmp.path(), mini_config_json(tmp.path() / "out"));
        CHECK(cli({"eval-ir", "--config", path.string()}) == 1);
    }

    SUBCASE("align before eval-ir") {
        const auto path =
            write_config(tmp.path(), mini_config_json(tmp.path() / "out"));
        CHECK(cli({"align", "--config", path.string()}) == 1);
    }

    SUBCASE("report with nothing persisted") {
        const auto path =
            write_config(tmp.path(), mini_config_json(tmp.path() / "out"));
        CHECK(cli({"report", "--config", path.string()}) == 1);
    }

    SUBCASE("unknown metric") {
        auto j = mini_config_json(tmp.path() / "out");
        j["metric"] = "map";
        const auto path = write_config(tmp.path(), j);
        CHECK(cli({"simulate", "--config", path.string()}) == 0);
        CHECK(cli({"eval-ir", "--config", path.string()}) == 1);
    }
}

TEST_CASE("cli reports unreachable endpoints as runtime failure") {
    testutil::TempDir tmp;
    auto j = mini_config_json(tmp.path() / "out");
    j["backend"] = "http";
    j["endpoint"] = nlohmann::json{{"base_url", "http://127.0.0.1:9"},
                                   {"timeout_s", 1},
                                   {"transport_retries", 0},
                                   {"backoff_initial_ms", 1}};
    const auto path = write_config(tmp.path(), j);
    CHECK(cli({"run-cg", "--config", path.string()}) == 2);
}

TEST_CASE("prompts command reproduces the committed fixtures") {
    testutil::TempDir tmp;
    const auto out = tmp.path() / "prompts";
    CHECK(cli({"prompts", "--out", out.string()}) == 0);

    const std::vector<std::string> names{
        "ambiguity_type_definitions.txt",
        "generation_standard_select.txt",
        "generation_at_cot_respond.txt",
        "response_select.txt",
        "response_respond.txt",
        "reformulation.txt",
        "few_shots.json"};
    for (const auto& name : names) {
        CAPTURE(name);
        REQUIRE(fs::exists(out / name));
        CHECK(testutil::read_file(out / name) ==
              testutil::read_file(testutil::fixtures() / "prompts" / name));
    }
}

TEST_CASE("offline pipeline runs end to end") {
    testutil::TempDir tmp;
    const auto out = tmp.path() / "out";
    const auto config_path = write_config(tmp.path(), mini_config_json(out));
    const auto config = harness::RunConfig::from_file(config_path);

    // --- generation + scoring ---
    REQUIRE(cli({"run-cg", "--config", config_path.string()}) == 0);
    for (const char* scheme : {"standard", "at_standard", "cot", "at_cot"}) {
        CAPTURE(scheme);
        CHECK(fs::exists(out / "cg" /
                         ("report_" + std::string(scheme) + ".jsonl")));
        CHECK(fs::exists(out / "cg" /
                         ("generations_" + std::string(scheme) + ".jsonl")));
    }
    CHECK(fs::exists(out / "config.json"));
    const auto cg_tables = testutil::read_file(out / "cg" / "tables.txt");
    CHECK(cg_tables.find("Clarification generation, mini") != std::string::npos);
    CHECK(cg_tables.find("AT-CoT") != std::string::npos);
    CHECK(cg_tables.find("# config " + config.config_hash()) !=
          std::string::npos);
    // every annotated query got scored under each scheme
    CHECK(count_lines(out / "cg" / "report_standard.jsonl") == 1 + 8);

    // --- conversation simulation ---
    REQUIRE(cli({"simulate", "--config", config_path.string()}) == 0);
    const auto manifest = out / "runs" / "mini" / "manifest.jsonl";
    REQUIRE(fs::exists(manifest));
    // 3 queries x 2 intents x 4 schemes x 2 scenarios
    CHECK(count_lines(manifest) == 48);
    {
        simulation::RunStore store(out / "runs", "mini");
        const auto records = store.load_all();
        REQUIRE(records.size() == 48);
        for (const auto& r : records) {
            CAPTURE(r.conversation.query.query_id);
            CHECK_FALSE(r.failed);
            CHECK(r.conversation.turns.size() == 2);
            CHECK(r.provenance.backend_identity == "offline");
        }
    }

    // resume: a second simulate reuses every record and adds nothing
    REQUIRE(cli({"simulate", "--config", config_path.string()}) == 0);
    CHECK(count_lines(manifest) == 48);

    // --- retrieval scoring ---
    REQUIRE(cli({"eval-ir", "--config", config_path.string()}) == 0);
    const auto report_path = out / "ir" / "report_ndcg.json";
    REQUIRE(fs::exists(report_path));
    nlohmann::json rj;
    std::ifstream(report_path) >> rj;
    const auto report = rj.get<ir_eval::IrReport>();
    CHECK(report.metric == "ndcg@10");
    CHECK(report.config_hash == config.config_hash());
    CHECK(report.baseline.count > 0);
    CHECK_FALSE(report.cells.empty());
    for (const auto& [key, cell] : report.cells) {
        CHECK(key.turn >= 1);
        CHECK(key.turn <= 2);
        CHECK(cell.mean >= 0.0);
        CHECK(cell.mean <= 1.0);
    }
    CHECK(fs::exists(out / "ir" / "trec" / "standard_select_turn1.run"));
    const auto ir_tables = testutil::read_file(out / "ir" / "tables.txt");
    CHECK(ir_tables.find("w/o clarification:") != std::string::npos);
    CHECK(ir_tables.find("turn 1") != std::string::npos);

    // --- alignment across schemes ---
    REQUIRE(cli({"align", "--config", config_path.string()}) == 0);
    nlohmann::json align;
    std::ifstream(out / "align" / "alignment.json") >> align;
    CHECK(align.at("n") == 4);
    CHECK(align.at("pairs").size() == 4);
    CHECK(align.at("config_hash") == config.config_hash());

    // --- re-render is byte identical ---
    REQUIRE(cli({"report", "--config", config_path.string()}) == 0);
    CHECK(testutil::read_file(out / "cg" / "tables.txt") == cg_tables);
    CHECK(testutil::read_file(out / "ir" / "tables.txt") == ir_tables);
}

TEST_CASE("cli overrides narrow a run") {
    testutil::TempDir tmp;
    const auto out = tmp.path() / "narrow";
    const auto config_path = write_config(tmp.path(), mini_config_json(out));
    REQUIRE(cli({"simulate", "--config", config_path.string(), "--schemes",
                 "standard", "--scenarios", "respond", "--turns", "1", "--out",
                 out.string()}) == 0);
    simulation::RunStore store(out / "runs", "mini");
    const auto records = store.load_all();
    REQUIRE(records.size() == 6);  // 3 queries x 2 intents, one cell each
    for (const auto& r : records) {
        CHECK(r.conversation.scheme == PromptScheme::Standard);
        CHECK(r.conversation.scenario == Scenario::Respond);
        CHECK(r.conversation.turns.size() == 1);
    }
}

TEST_CASE("convert ingests tab separated clarification data") {
    testutil::TempDir tmp;
    const auto input = tmp.path() / "source.tsv";
    testutil::write_file(input,
                         "q1\tjaguar\tDo you mean the animal?\t4\n"
                         "q1\tjaguar\tOr the car?\t4\n"
                         "q2\twindows\tThe OS or the glass kind?\n");
    const auto out = tmp.path() / "converted";
    REQUIRE(cli({"convert", "--format", "tsv", "--input", input.string(),
                 "--out", out.string()}) == 0);

    const auto dataset = data_io::load_cg(out / "cg.jsonl", "converted");
    CHECK(dataset.query_count() == 2);
    REQUIRE(dataset.annotations.count("q1") == 1);
    CHECK(dataset.annotations.at("q1").size() == 2);
    const auto q1 = std::find_if(dataset.queries.begin(), dataset.queries.end(),
                                 [](const Query& q) { return q.query_id == "q1"; });
    REQUIRE(q1 != dataset.queries.end());
    CHECK(q1->ambiguity_level == 4);

    SUBCASE("id filter keeps a subset") {
        const auto ids = tmp.path() / "ids.txt";
        testutil::write_file(ids, "q2\n");
        const auto filtered = tmp.path() / "filtered";
        REQUIRE(cli({"convert", "--format", "tsv", "--input", input.string(),
                     "--out", filtered.string(), "--ids", ids.string()}) == 0);
        CHECK(data_io::load_cg(filtered / "cg.jsonl", "f").query_count() == 1);
    }

    SUBCASE("unknown format") {
        CHECK(cli({"convert", "--format", "csv", "--input", input.string(),
                   "--out", out.string()}) == 1);
    }
}

TEST_CASE("convert ingests column oriented facet data") {
    testutil::TempDir tmp;
    const auto input = tmp.path() / "source.json";
    const nlohmann::json source{
        {"topic_id", {{"0", 1}, {"1", 1}, {"2", 2}}},
        {"topic", {{"0", "apple"}, {"1", "apple"}, {"2", "jaguar"}}},
        {"question",
         {{"0", "The fruit or the company?"},
          {"1", "Which apple product?"},
          {"2", "The cat or the car?"}}},
        {"facet_id", {{"0", "1-1"}, {"1", "1-2"}, {"2", "2-1"}}},
        {"facet_desc",
         {{"0", "nutrition facts for the fruit"},
          {"1", "latest apple computer models"},
          {"2", "jaguar top speed in the wild"}}}};
    testutil::write_file(input, source.dump() + "\n");

    const auto out = tmp.path() / "converted";
    REQUIRE(cli({"convert", "--format", "qulac-json", "--input", input.string(),
                 "--out", out.string()}) == 0);

    const auto dataset = data_io::load_cg(out / "cg.jsonl", "converted");
    CHECK(dataset.query_count() == 2);
    CHECK(dataset.annotations.at("1").size() == 2);

    const auto intents =
        data_io::load_intents(out / "intents.jsonl", 2000);
    REQUIRE(intents.size() == 3);
    int for_topic_1 = 0;
    for (const auto& intent : intents) {
        if (intent.query_id == "1") ++for_topic_1;
    }
    CHECK(for_topic_1 == 2);

    SUBCASE("missing required column") {
        const auto broken = tmp.path() / "broken.json";
        nlohmann::json j = source;
        j.erase("question");
        testutil::write_file(broken, j.dump() + "\n");
        CHECK(cli({"convert", "--format", "qulac-json", "--input",
                   broken.string(), "--out", out.string()}) == 1);
    }
}
