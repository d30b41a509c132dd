#include "clarify/llm_backend.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

namespace clarify::llm {

void log_warn(const std::string& message) {
    std::cerr << "[clarify] warning: " << message << "\n";
}

std::string_view to_string(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view name) {
    if (name == "system") return Role::System;
    if (name == "user") return Role::User;
    if (name == "assistant") return Role::Assistant;
    throw ParseError("unknown chat role: '" + std::string(name) + "'",
                     std::string(name));
}

void to_json(nlohmann::json& j, const ChatMessage& v) {
    j = {{"role", to_string(v.role)}, {"content", v.content}};
}

void from_json(const nlohmann::json& j, ChatMessage& v) {
    v.role = role_from_string(j.at("role").get<std::string>());
    v.content = j.at("content").get<std::string>();
}

void to_json(nlohmann::json& j, const SamplingParams& v) {
    j = {{"temperature", v.temperature},
         {"top_k", v.top_k},
         {"max_tokens", v.max_tokens}};
    if (v.seed) j["seed"] = *v.seed;
}

void from_json(const nlohmann::json& j, SamplingParams& v) {
    v = SamplingParams{};
    if (j.contains("temperature")) v.temperature = j.at("temperature").get<double>();
    if (j.contains("top_k")) v.top_k = j.at("top_k").get<int>();
    if (j.contains("max_tokens")) v.max_tokens = j.at("max_tokens").get<int>();
    if (j.contains("seed") && !j.at("seed").is_null()) {
        v.seed = j.at("seed").get<std::uint64_t>();
    }
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0x0f]);
    }
    return out;
}

std::string cache_key(const MessageList& messages, const SamplingParams& params,
                      const std::string& backend_identity) {
    nlohmann::json payload = {{"messages", messages},
                              {"params", params},
                              {"backend", backend_identity}};
    return sha256_hex(payload.dump());
}

// --- remote HTTP service ---

EndpointConfig EndpointConfig::from_env() {
    EndpointConfig config;
    if (const char* url = std::getenv("CLARIFY_ENDPOINT")) config.base_url = url;
    if (const char* key = std::getenv("CLARIFY_API_KEY")) config.api_key = key;
    if (const char* model = std::getenv("CLARIFY_MODEL")) config.model = model;
    return config;
}

void to_json(nlohmann::json& j, const EndpointConfig& v) {
    j = {{"base_url", v.base_url},
         {"chat_path", v.chat_path},
         {"embed_path", v.embed_path},
         {"api_key", v.api_key},
         {"model", v.model},
         {"timeout_s", v.timeout_s},
         {"transport_retries", v.transport_retries},
         {"backoff_initial_ms", v.backoff_initial_ms}};
}

void from_json(const nlohmann::json& j, EndpointConfig& v) {
    v = EndpointConfig{};
    if (j.contains("base_url")) v.base_url = j.at("base_url").get<std::string>();
    if (j.contains("chat_path")) v.chat_path = j.at("chat_path").get<std::string>();
    if (j.contains("embed_path")) v.embed_path = j.at("embed_path").get<std::string>();
    if (j.contains("api_key")) v.api_key = j.at("api_key").get<std::string>();
    if (j.contains("model")) v.model = j.at("model").get<std::string>();
    if (j.contains("timeout_s")) v.timeout_s = j.at("timeout_s").get<int>();
    if (j.contains("transport_retries")) {
        v.transport_retries = j.at("transport_retries").get<int>();
    }
    if (j.contains("backoff_initial_ms")) {
        v.backoff_initial_ms = j.at("backoff_initial_ms").get<int>();
    }
}

namespace {

httplib::Headers request_headers(const EndpointConfig& config) {
    httplib::Headers headers;
    if (!config.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config.api_key);
    }
    return headers;
}

/// POSTs JSON with retry on transient failures. Returns the response body.
std::string post_with_retries(const EndpointConfig& config,
                              const std::string& path,
                              const nlohmann::json& payload) {
    httplib::Client client(config.base_url);
    client.set_connection_timeout(config.timeout_s, 0);
    client.set_read_timeout(config.timeout_s, 0);
    client.set_write_timeout(config.timeout_s, 0);

    const std::string body = payload.dump();
    std::string last_failure = "no attempt made";
    int backoff_ms = config.backoff_initial_ms;
    const int attempts = config.transport_retries + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms *= 2;
        }
        auto result = client.Post(path, request_headers(config), body,
                                  "application/json");
        if (!result) {
            last_failure = "transport failure: " + httplib::to_string(result.error());
            continue;
        }
        if (result->status >= 200 && result->status < 300) {
            return result->body;
        }
        if (result->status >= 400 && result->status < 500) {
            throw PermanentHttpError("HTTP " + std::to_string(result->status) +
                                         " from " + config.base_url + path + ": " +
                                         result->body,
                                     result->status);
        }
        last_failure = "HTTP " + std::to_string(result->status);
    }
    throw TransportError("POST " + config.base_url + path + " failed after " +
                         std::to_string(attempts) + " attempts: " + last_failure);
}

nlohmann::json chat_request_payload(const EndpointConfig& config,
                                    const MessageList& messages,
                                    const SamplingParams& params) {
    nlohmann::json body = {{"model", config.model},
                           {"messages", messages},
                           {"temperature", params.temperature},
                           {"top_k", params.top_k},
                           {"max_tokens", params.max_tokens}};
    if (params.seed) body["seed"] = *params.seed;
    return body;
}

std::string extract_assistant_content(const std::string& raw) {
    nlohmann::json response;
    try {
        response = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("chat response is not JSON: ") + e.what());
    }
    try {
        return response.at("choices").at(0).at("message").at("content")
            .get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw ProtocolError("chat response lacks choices[0].message.content: " + raw);
    }
}

}  // namespace

std::string http_complete(const EndpointConfig& config,
                          const MessageList& messages,
                          const SamplingParams& params) {
    if (messages.empty()) throw ArgumentError("chat request requires messages");
    const std::string raw =
        post_with_retries(config, config.chat_path,
                          chat_request_payload(config, messages, params));
    return extract_assistant_content(raw);
}

std::string HttpChatBackend::complete(const MessageList& messages,
                                      const SamplingParams& params) {
    if (messages.empty()) throw ArgumentError("chat request requires messages");
    const std::string raw =
        post_with_retries(config_, config_.chat_path,
                          chat_request_payload(config_, messages, params));
    try {
        auto parsed = nlohmann::json::parse(raw);
        last_top_k_acknowledged_ = parsed.contains("top_k");
    } catch (const nlohmann::json::exception&) {
        last_top_k_acknowledged_ = false;
    }
    return extract_assistant_content(raw);
}

std::string HttpChatBackend::identity() const {
    return "http:" + config_.base_url + config_.chat_path + ":" + config_.model;
}

// --- scripted backend ---

std::shared_ptr<ScriptedBackend> ScriptedBackend::queue(
    std::vector<std::string> replies) {
    auto backend = std::shared_ptr<ScriptedBackend>(new ScriptedBackend());
    backend->queue_.assign(replies.begin(), replies.end());
    return backend;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::keyed(
    std::map<std::string, std::string> replies_by_key) {
    auto backend = std::shared_ptr<ScriptedBackend>(new ScriptedBackend());
    backend->by_key_ = std::move(replies_by_key);
    backend->keyed_mode_ = true;
    return backend;
}

std::string ScriptedBackend::complete(const MessageList& messages,
                                      const SamplingParams& params) {
    std::lock_guard lock(mutex_);
    ++calls_;
    captured_.push_back(messages);
    if (keyed_mode_) {
        const std::string key = cache_key(messages, params, identity());
        auto it = by_key_.find(key);
        if (it == by_key_.end()) {
            throw ScriptError("scripted backend has no reply for key " + key);
        }
        return it->second;
    }
    if (queue_.empty()) throw ScriptError("scripted reply queue exhausted");
    std::string reply = std::move(queue_.front());
    queue_.pop_front();
    return reply;
}

int ScriptedBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::vector<MessageList> ScriptedBackend::captured() const {
    std::lock_guard lock(mutex_);
    return captured_;
}

// --- cache ---

CacheStore::CacheStore(std::filesystem::path file)
    : file_(std::move(file)), persistent_(true) {
    std::ifstream in(file_);
    if (!in) return;  // fresh cache
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto record = nlohmann::json::parse(line);
            entries_[record.at("key").get<std::string>()] =
                record.at("reply").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            log_warn("skipping malformed cache record at " + file_.string() + ":" +
                     std::to_string(line_no));
        }
    }
}

std::optional<std::string> CacheStore::get(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void CacheStore::put(const std::string& key, const std::string& reply) {
    std::lock_guard lock(mutex_);
    entries_[key] = reply;
    if (!persistent_ || write_failed_) return;
    std::ofstream out(file_, std::ios::app);
    if (!out) {
        write_failed_ = true;
        log_warn("cache store " + file_.string() +
                 " is not writable; degrading to pass-through");
        return;
    }
    nlohmann::json record = {{"key", key}, {"reply", reply}};
    out << record.dump() << "\n";
    if (!out) {
        write_failed_ = true;
        log_warn("cache store write failed for " + file_.string());
    }
}

size_t CacheStore::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

namespace {

class CachedBackend : public ChatBackend {
public:
    CachedBackend(std::shared_ptr<ChatBackend> inner,
                  std::shared_ptr<CacheStore> store)
        : inner_(std::move(inner)), store_(std::move(store)) {}

    std::string complete(const MessageList& messages,
                         const SamplingParams& params) override {
        const std::string key = cache_key(messages, params, inner_->identity());
        if (auto hit = store_->get(key)) return *hit;
        std::string reply = inner_->complete(messages, params);
        store_->put(key, reply);
        return reply;
    }

    // Keyed by the inner identity so stacked caches share keys.
    std::string identity() const override { return inner_->identity(); }

private:
    std::shared_ptr<ChatBackend> inner_;
    std::shared_ptr<CacheStore> store_;
};

}  // namespace

std::shared_ptr<ChatBackend> cached(std::shared_ptr<ChatBackend> inner,
                                    std::shared_ptr<CacheStore> store) {
    if (!store) store = std::make_shared<CacheStore>();
    return std::make_shared<CachedBackend>(std::move(inner), std::move(store));
}

// --- embeddings ---

std::vector<std::vector<double>> embed(const EndpointConfig& config,
                                       const std::vector<std::string>& texts) {
    if (texts.empty()) throw ArgumentError("embed requires at least one text");
    for (const auto& text : texts) {
        if (text.empty()) throw ArgumentError("embed inputs must be non-empty");
    }
    nlohmann::json payload = {{"model", config.model}, {"input", texts}};
    const std::string raw = post_with_retries(config, config.embed_path, payload);

    nlohmann::json response;
    try {
        response = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("embedding response is not JSON: ") + e.what());
    }

    // Accepted shapes: {"data":[{"embedding":[...]}...]}, {"embeddings":[[...]]}
    // or a bare array of arrays.
    nlohmann::json rows;
    if (response.is_array()) {
        rows = response;
    } else if (response.contains("embeddings")) {
        rows = response.at("embeddings");
    } else if (response.contains("data")) {
        rows = nlohmann::json::array();
        for (const auto& item : response.at("data")) rows.push_back(item.at("embedding"));
    } else {
        throw ProtocolError("unrecognized embedding response shape: " + raw);
    }

    if (!rows.is_array() || rows.size() != texts.size()) {
        throw ProtocolError("embedding count mismatch: expected " +
                            std::to_string(texts.size()) + ", got " +
                            std::to_string(rows.size()));
    }
    std::vector<std::vector<double>> vectors;
    vectors.reserve(rows.size());
    for (const auto& row : rows) {
        std::vector<double> v = row.get<std::vector<double>>();
        if (v.empty()) throw ProtocolError("embedding vector has dimension 0");
        if (!vectors.empty() && v.size() != vectors.front().size()) {
            throw ProtocolError("ragged embedding dimensions: " +
                                std::to_string(vectors.front().size()) + " vs " +
                                std::to_string(v.size()));
        }
        vectors.push_back(std::move(v));
    }
    return vectors;
}

EmbedFn make_embed_fn(EndpointConfig config) {
    return [config = std::move(config)](const std::vector<std::string>& texts) {
        return embed(config, texts);
    };
}

}  // namespace clarify::llm
