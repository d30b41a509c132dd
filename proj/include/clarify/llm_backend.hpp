#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clarify/errors.hpp"

// Uniform chat-completion and embedding access: remote HTTP service client,
// deterministic scripted backend and a persistent call cache.

namespace clarify::llm {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);  // "system", "user", "assistant"
Role role_from_string(std::string_view name);

struct ChatMessage {
    Role role = Role::User;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

using MessageList = std::vector<ChatMessage>;

void to_json(nlohmann::json& j, const ChatMessage& v);
void from_json(const nlohmann::json& j, ChatMessage& v);

struct SamplingParams {
    double temperature = 0.6;
    int top_k = 10;
    int max_tokens = 1024;
    std::optional<std::uint64_t> seed;

    bool operator==(const SamplingParams&) const = default;
};

void to_json(nlohmann::json& j, const SamplingParams& v);
void from_json(const nlohmann::json& j, SamplingParams& v);

/// Chat-completion access. Implementations must be total: return or error,
/// never hang past their configured timeout.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string complete(const MessageList& messages,
                                 const SamplingParams& params) = 0;
    virtual std::string identity() const = 0;
};

/// SHA-256 hex digest of (canonical message serialization, params, backend
/// identity). Equal inputs yield equal keys.
std::string cache_key(const MessageList& messages, const SamplingParams& params,
                      const std::string& backend_identity);

std::string sha256_hex(std::string_view data);

// ---------------------------------------------------------------------------
// Remote HTTP service
// ---------------------------------------------------------------------------

struct EndpointConfig {
    std::string base_url = "http://localhost:8080";
    std::string chat_path = "/v1/chat/completions";
    std::string embed_path = "/v1/embeddings";
    std::string api_key;
    std::string model = "default";
    int timeout_s = 120;
    int transport_retries = 3;    // additional attempts on timeout/5xx
    int backoff_initial_ms = 200; // doubles per retry

    /// Reads CLARIFY_ENDPOINT / CLARIFY_API_KEY / CLARIFY_MODEL when set.
    static EndpointConfig from_env();
};

void to_json(nlohmann::json& j, const EndpointConfig& v);
void from_json(const nlohmann::json& j, EndpointConfig& v);

/// One chat-completion round trip. Transient transport failures (connect
/// errors, timeouts, 5xx) are retried with exponential backoff; 4xx is
/// permanent and never retried.
std::string http_complete(const EndpointConfig& config,
                          const MessageList& messages,
                          const SamplingParams& params);

class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(EndpointConfig config) : config_(std::move(config)) {}

    std::string complete(const MessageList& messages,
                         const SamplingParams& params) override;
    std::string identity() const override;

    /// Whether the last response echoed the top_k parameter. Services that
    /// ignore top-k are recorded, never silently substituted.
    bool last_top_k_acknowledged() const { return last_top_k_acknowledged_; }

private:
    EndpointConfig config_;
    bool last_top_k_acknowledged_ = false;
};

// ---------------------------------------------------------------------------
// Scripted backend (test oracle)
// ---------------------------------------------------------------------------

/// Deterministic backend driven by a reply queue or a key -> reply map.
/// Queue mode is single-consumer; map mode (keyed by cache_key of the
/// request) is concurrent-safe.
class ScriptedBackend : public ChatBackend {
public:
    static std::shared_ptr<ScriptedBackend> queue(std::vector<std::string> replies);
    static std::shared_ptr<ScriptedBackend> keyed(
        std::map<std::string, std::string> replies_by_key);

    std::string complete(const MessageList& messages,
                         const SamplingParams& params) override;
    std::string identity() const override { return "scripted"; }

    int calls() const;
    /// Every request seen, in order. Used by instrumented tests.
    std::vector<MessageList> captured() const;

private:
    ScriptedBackend() = default;
    mutable std::mutex mutex_;
    std::deque<std::string> queue_;
    std::map<std::string, std::string> by_key_;
    bool keyed_mode_ = false;
    int calls_ = 0;
    std::vector<MessageList> captured_;
};

/// Counts and forwards; wraps any backend for call accounting in tests and
/// cache verification.
class CountingBackend : public ChatBackend {
public:
    explicit CountingBackend(std::shared_ptr<ChatBackend> inner)
        : inner_(std::move(inner)) {}
    std::string complete(const MessageList& messages,
                         const SamplingParams& params) override {
        {
            std::lock_guard lock(mutex_);
            ++calls_;
            captured_.push_back(messages);
        }
        return inner_->complete(messages, params);
    }
    std::string identity() const override { return inner_->identity(); }
    int calls() const {
        std::lock_guard lock(mutex_);
        return calls_;
    }
    std::vector<MessageList> captured() const {
        std::lock_guard lock(mutex_);
        return captured_;
    }

private:
    std::shared_ptr<ChatBackend> inner_;
    mutable std::mutex mutex_;
    int calls_ = 0;
    std::vector<MessageList> captured_;
};

// ---------------------------------------------------------------------------
// Persistent call cache
// ---------------------------------------------------------------------------

/// Append-only file of (key, reply) records plus an in-memory map. I/O
/// failures degrade to pass-through with a logged warning.
class CacheStore {
public:
    /// In-memory only.
    CacheStore() = default;
    /// Backed by a JSONL file; existing records are loaded eagerly.
    explicit CacheStore(std::filesystem::path file);

    std::optional<std::string> get(const std::string& key) const;
    void put(const std::string& key, const std::string& reply);
    size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::string> entries_;
    std::filesystem::path file_;
    bool persistent_ = false;
    bool write_failed_ = false;
};

/// Wraps a backend with the persistent cache: a hit returns the stored reply
/// without invoking the inner backend, a miss invokes and stores.
std::shared_ptr<ChatBackend> cached(std::shared_ptr<ChatBackend> inner,
                                    std::shared_ptr<CacheStore> store);

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// One vector per input text, all of equal dimension >= 1.
std::vector<std::vector<double>> embed(const EndpointConfig& config,
                                       const std::vector<std::string>& texts);

using EmbedFn =
    std::function<std::vector<std::vector<double>>(const std::vector<std::string>&)>;

/// Binds `embed` to a fixed endpoint.
EmbedFn make_embed_fn(EndpointConfig config);

void log_warn(const std::string& message);

}  // namespace clarify::llm
