#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clarify/core.hpp"
#include "clarify/ir_eval.hpp"

// Dataset ingestion and alignment. Native formats are line-delimited JSON
// records; converters for third-party layouts live in the CLI.

namespace clarify::data_io {

struct CgDataset {
    std::string name;
    std::vector<Query> queries;
    // query_id -> annotated clarifying questions (duplicates are distinct
    // annotations and kept)
    std::map<std::string, std::vector<std::string>> annotations;

    int query_count() const { return static_cast<int>(queries.size()); }
    int cq_count() const;
};

struct IrDataset {
    std::string name;
    std::vector<Query> queries;
    std::vector<UserIntent> intents;
    ir_eval::Qrels qrels;
    std::filesystem::path corpus_ref;
};

struct AlignedDataset {
    CgDataset cg;
    IrDataset ir;
    std::map<std::string, std::string> join;  // cg query_id -> ir query_id
    std::vector<std::string> unmatched_cg;
    std::vector<std::string> unmatched_ir;
};

/// Records: {"query_id", "query", "clarifying_questions": [...],
/// "ambiguity_level"?}, one JSON object per line. An absent or empty
/// question list leaves the query unannotated.
CgDataset load_cg(const std::filesystem::path& path, const std::string& name);

/// Records: {"query_id", "intents": [{"intent_id", "description"}]}.
/// Descriptions are trimmed to `char_budget` characters (documents serve as
/// intents for some datasets).
std::vector<UserIntent> load_intents(const std::filesystem::path& path,
                                     int char_budget = 2000);

struct IrPaths {
    std::filesystem::path queries;
    std::filesystem::path intents;
    std::filesystem::path qrels;
    std::filesystem::path corpus;
};

IrDataset load_ir(const IrPaths& paths, bool facet_qrels,
                  const std::string& name, int intent_char_budget = 2000);

/// Records: {"doc_id", "text"}.
std::map<std::string, std::string> load_corpus(const std::filesystem::path& path);

/// Whitespace-separated "cg_query_id ir_query_id" pairs.
std::map<std::string, std::string> load_mapping(const std::filesystem::path& path);

/// Intersection join between the two datasets. An empty mapping joins by
/// identical ids; unmatched ids are reported, not fatal. Non-injective
/// mappings are rejected.
AlignedDataset align(CgDataset cg, IrDataset ir,
                     const std::map<std::string, std::string>& mapping = {});

std::string file_sha256(const std::filesystem::path& path);

/// Self-describing manifest for a loaded dataset: name plus the checksum of
/// every ingested file.
void write_dataset_manifest(const std::filesystem::path& out,
                            const std::string& dataset,
                            const std::vector<std::filesystem::path>& files);

}  // namespace clarify::data_io
