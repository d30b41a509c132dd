#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "clarify/core.hpp"

#ifndef FIXTURES_DIR
#define FIXTURES_DIR "fixtures"
#endif

namespace testutil {

inline std::filesystem::path fixtures() { return FIXTURES_DIR; }

/// Unique scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "clarify-test") {
        static std::mt19937_64 rng(std::random_device{}());
        dir_ = std::filesystem::temp_directory_path() /
               (tag + "-" + std::to_string(rng()));
        std::filesystem::create_directories(dir_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(dir_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return dir_; }

private:
    std::filesystem::path dir_;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& p, const std::string& body) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body;
}

inline clarify::Conversation fresh_conversation(
    clarify::Scenario scenario, clarify::PromptScheme scheme,
    const std::string& query_text = "mirror effect in small room") {
    clarify::Conversation conv;
    conv.query = clarify::Query::make("q1", query_text);
    conv.intent = clarify::UserIntent::make(
        "f1", "q1", "Tips on using wall mirrors to make a small room look larger.");
    conv.scenario = scenario;
    conv.scheme = scheme;
    return conv;
}

}  // namespace testutil
