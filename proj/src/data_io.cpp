#include "clarify/data_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "clarify/llm_backend.hpp"

namespace clarify::data_io {

namespace {

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IngestionError("cannot open " + path.string());
    }
    std::vector<nlohmann::json> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw IngestionError("malformed record at " + path.string() + ":" +
                                 std::to_string(line_no));
        }
        records.push_back(std::move(j));
    }
    return records;
}

}  // namespace

int CgDataset::cq_count() const {
    int total = 0;
    for (const auto& [id, cqs] : annotations) {
        total += static_cast<int>(cqs.size());
    }
    return total;
}

CgDataset load_cg(const std::filesystem::path& path, const std::string& name) {
    CgDataset dataset;
    dataset.name = name;
    std::set<std::string> seen;
    std::vector<std::string> offenders;
    for (const auto& record : read_jsonl(path)) {
        const std::string query_id = record.value("query_id", "");
        const std::string text = record.value("query", "");
        if (query_id.empty() || trim(text).empty()) {
            throw IngestionError("record missing query_id or query in " +
                                 path.string());
        }
        if (!seen.insert(query_id).second) {
            offenders.push_back(query_id);
            continue;
        }
        std::optional<int> level;
        if (record.contains("ambiguity_level") &&
            !record["ambiguity_level"].is_null()) {
            level = record["ambiguity_level"].get<int>();
        }
        dataset.queries.push_back(Query::make(query_id, text, level));
        if (record.contains("clarifying_questions")) {
            std::vector<std::string> cqs;
            for (const auto& cq : record["clarifying_questions"]) {
                const std::string s = cq.get<std::string>();
                if (trim(s).empty()) {
                    throw IngestionError("empty clarifying question for query " +
                                         query_id);
                }
                cqs.push_back(s);
            }
            if (!cqs.empty()) dataset.annotations[query_id] = std::move(cqs);
        }
    }
    if (!offenders.empty()) {
        throw IngestionError("duplicate query ids in " + path.string(),
                             offenders);
    }
    if (dataset.queries.empty()) {
        throw IngestionError("no queries in " + path.string());
    }
    return dataset;
}

std::vector<UserIntent> load_intents(const std::filesystem::path& path,
                                     int char_budget) {
    if (char_budget < 1) throw ArgumentError("char budget must be >= 1");
    std::vector<UserIntent> intents;
    std::set<std::string> seen;
    for (const auto& record : read_jsonl(path)) {
        const std::string query_id = record.value("query_id", "");
        if (query_id.empty() || !record.contains("intents")) {
            throw IngestionError("intent record missing query_id or intents in " +
                                 path.string());
        }
        for (const auto& entry : record["intents"]) {
            const std::string intent_id = entry.value("intent_id", "");
            std::string description = entry.value("description", "");
            if (description.size() > static_cast<size_t>(char_budget)) {
                description.resize(static_cast<size_t>(char_budget));
            }
            if (!seen.insert(query_id + "#" + intent_id).second) {
                throw IngestionError("duplicate intent " + intent_id +
                                     " for query " + query_id);
            }
            intents.push_back(UserIntent::make(intent_id, query_id, description));
        }
    }
    return intents;
}

IrDataset load_ir(const IrPaths& paths, bool facet_qrels,
                  const std::string& name, int intent_char_budget) {
    IrDataset dataset;
    dataset.name = name;
    dataset.corpus_ref = paths.corpus;

    const CgDataset raw = load_cg(paths.queries, name);
    dataset.queries = raw.queries;
    std::set<std::string> query_ids;
    for (const auto& q : dataset.queries) query_ids.insert(q.query_id);

    dataset.intents = load_intents(paths.intents, intent_char_budget);
    std::vector<std::string> offenders;
    for (const auto& intent : dataset.intents) {
        if (!query_ids.count(intent.query_id)) {
            offenders.push_back(intent.query_id + "#" + intent.intent_id);
        }
    }
    if (!offenders.empty()) {
        throw IngestionError("intents reference unknown query ids", offenders);
    }

    dataset.qrels = ir_eval::Qrels::parse_file(paths.qrels, facet_qrels);
    offenders.clear();
    for (const auto& [query_id, facet_id] : dataset.qrels.keys()) {
        if (!query_ids.count(query_id)) {
            offenders.push_back(query_id);
        }
    }
    if (!offenders.empty()) {
        throw IngestionError("qrels reference unknown query ids", offenders);
    }
    return dataset;
}

std::map<std::string, std::string> load_corpus(const std::filesystem::path& path) {
    std::map<std::string, std::string> docs;
    for (const auto& record : read_jsonl(path)) {
        const std::string doc_id = record.value("doc_id", "");
        if (doc_id.empty() || !record.contains("text")) {
            throw IngestionError("corpus record missing doc_id or text in " +
                                 path.string());
        }
        if (docs.count(doc_id)) {
            throw IngestionError("duplicate doc id", {doc_id});
        }
        docs[doc_id] = record["text"].get<std::string>();
    }
    if (docs.empty()) {
        throw IngestionError("no documents in " + path.string());
    }
    return docs;
}

std::map<std::string, std::string> load_mapping(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IngestionError("cannot open mapping file " + path.string());
    }
    std::map<std::string, std::string> mapping;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream fields(line);
        std::string from, to;
        if (!(fields >> from >> to)) {
            throw IngestionError("malformed mapping line " +
                                     std::to_string(line_no),
                                 {line});
        }
        if (mapping.count(from)) {
            throw IngestionError("mapping repeats source id", {from});
        }
        mapping[from] = to;
    }
    return mapping;
}

AlignedDataset align(CgDataset cg, IrDataset ir,
                     const std::map<std::string, std::string>& mapping) {
    std::set<std::string> targets;
    std::vector<std::string> collisions;
    for (const auto& [from, to] : mapping) {
        if (!targets.insert(to).second) collisions.push_back(to);
    }
    if (!collisions.empty()) {
        throw IngestionError("mapping is not injective", collisions);
    }

    std::set<std::string> ir_ids;
    for (const auto& q : ir.queries) ir_ids.insert(q.query_id);

    AlignedDataset aligned;
    std::set<std::string> joined_ir;
    for (const auto& q : cg.queries) {
        const auto it = mapping.find(q.query_id);
        const std::string target = it == mapping.end() ? q.query_id : it->second;
        if (ir_ids.count(target)) {
            aligned.join[q.query_id] = target;
            joined_ir.insert(target);
        } else {
            aligned.unmatched_cg.push_back(q.query_id);
        }
    }
    for (const auto& id : ir_ids) {
        if (!joined_ir.count(id)) aligned.unmatched_ir.push_back(id);
    }
    if (!aligned.unmatched_cg.empty() || !aligned.unmatched_ir.empty()) {
        llm::log_warn("alignment leaves " +
                      std::to_string(aligned.unmatched_cg.size()) +
                      " unmatched CG and " +
                      std::to_string(aligned.unmatched_ir.size()) +
                      " unmatched IR queries");
    }
    aligned.cg = std::move(cg);
    aligned.ir = std::move(ir);
    return aligned;
}

std::string file_sha256(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IngestionError("cannot open " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return llm::sha256_hex(buffer.str());
}

void write_dataset_manifest(const std::filesystem::path& out,
                            const std::string& dataset,
                            const std::vector<std::filesystem::path>& files) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& file : files) {
        entries.push_back({{"path", file.string()}, {"sha256", file_sha256(file)}});
    }
    if (out.has_parent_path()) {
        std::filesystem::create_directories(out.parent_path());
    }
    std::ofstream stream(out, std::ios::trunc);
    if (!stream) {
        throw IngestionError("cannot write manifest " + out.string());
    }
    stream << nlohmann::json{{"dataset", dataset}, {"files", entries}}.dump(2)
           << "\n";
}

}  // namespace clarify::data_io
