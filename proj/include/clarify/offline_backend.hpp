#pragma once

#include <string>

#include "clarify/llm_backend.hpp"

// Deterministic rule-driven stand-in for a chat service. Recognizes the
// pipeline's own prompts (generation, user response, reformulation) and
// produces plausible, schema-valid replies derived only from the prompt
// text, so every command runs end to end with no model service.

namespace clarify::llm {

class OfflineChatBackend : public ChatBackend {
public:
    std::string complete(const MessageList& messages,
                         const SamplingParams& params) override;
    std::string identity() const override { return "offline"; }
};

/// Hash-bucketed bag-of-words vectors: equal texts give equal vectors,
/// token overlap gives cosine overlap. Offline stand-in for an embedding
/// service.
EmbedFn deterministic_embed_fn(int dims = 32);

}  // namespace clarify::llm
