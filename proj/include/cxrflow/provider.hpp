#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cxrflow/error.hpp"
#include "cxrflow/message.hpp"

namespace cxrflow {

struct ProviderConfig {
    std::string endpoint;
    std::string model_id;
    double temperature = 0.0;     // [0, 2]
    long timeout_ms = 60000;      // per request, (0, 600000]
    int max_retries = 2;          // >= 0, retryable failures only
    std::string api_key_env;      // env var holding the bearer token; empty = no auth
    long backoff_base_ms = 500;   // retry backoff base; tests shrink this

    void validate() const; // throws EngineError{Config}
    bool operator==(const ProviderConfig&) const = default;
};

void to_json(nlohmann::json& j, const ProviderConfig& c);
void from_json(const nlohmann::json& j, ProviderConfig& c);

enum class BackendKind { http, scripted };
const char* backend_kind_name(BackendKind kind);
BackendKind backend_kind_from_name(const std::string& name);

struct ProviderResponse {
    std::string content;
    long prompt_tokens = 0;
    long completion_tokens = 0;
    long latency_ms = 0;
    BackendKind backend = BackendKind::scripted;
};

// Stable digest of a message sequence: FNV-1a 64-bit over a length-prefixed
// serialization of every (role, content, attachment ids). Scripted providers
// key their canned replies on it, and traces record it for replay matching.
std::string fingerprint(std::span<const ChatMessage> messages);

// Throws EngineError{EmptyPrompt} unless there is at least one message and the
// first is system or user. Shared precondition for every backend.
void validate_messages(std::span<const ChatMessage> messages);

class Provider {
public:
    virtual ~Provider() = default;
    virtual ProviderResponse complete(std::span<const ChatMessage> messages,
                                      const ProviderConfig& config) = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend: deterministic canned replies for tests and fixtures.

struct ScriptEntry {
    std::optional<std::string> match; // fingerprint to match; exclusive with next
    bool next = false;                // ordered fallback, consumed in file order
    std::string reply;

    bool operator==(const ScriptEntry&) const = default;
};

void to_json(nlohmann::json& j, const ScriptEntry& e);
void from_json(const nlohmann::json& j, ScriptEntry& e);

std::vector<ScriptEntry> load_script(const std::filesystem::path& path);
void save_script(const std::vector<ScriptEntry>& entries, const std::filesystem::path& path);

class ScriptedProvider : public Provider {
public:
    explicit ScriptedProvider(std::vector<ScriptEntry> entries);

    // Lookup: first fingerprint-keyed entry wins; otherwise the first
    // unconsumed "next" entry (each serves once, in file order). No match ->
    // EngineError{ScriptMiss} naming the fingerprint. Thread-safe.
    ProviderResponse complete(std::span<const ChatMessage> messages,
                              const ProviderConfig& config) override;

    size_t served() const;
    // "next" entries that were never consumed — completeness check for fixtures.
    size_t unserved_next() const;

private:
    std::vector<ScriptEntry> entries_;
    std::vector<bool> next_consumed_;
    size_t served_ = 0;
    mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// HTTP backend: OpenAI-compatible chat-completions client.

class HttpProvider : public Provider {
public:
    // seed drives retry-backoff jitter only; responses are otherwise untouched.
    explicit HttpProvider(uint64_t jitter_seed = 0);

    ProviderResponse complete(std::span<const ChatMessage> messages,
                              const ProviderConfig& config) override;

    // Exposed for tests: the exact request body a message sequence produces.
    static nlohmann::json build_request_body(std::span<const ChatMessage> messages,
                                             const ProviderConfig& config);

private:
    uint64_t jitter_state_;
    std::mutex mu_;
    long next_jitter(long base);
};

// A provider plus the config it should be called with.
struct ProviderHandle {
    std::shared_ptr<Provider> provider;
    ProviderConfig config;
};

// ---------------------------------------------------------------------------
// Exchange logging: one record per provider call, threaded through the
// pipeline so traces can emit deterministic provider-exchange events.

struct ProviderExchange {
    std::string role;          // director | edv | member | tool
    std::string tool;          // tool name when role == "tool", else empty
    std::string fingerprint;
    bool ok = true;
    std::string response;      // content on success
    std::string error_code;    // EngineError code name on failure
    std::string error_message;
    long latency_ms = 0;
    std::string backend;       // http | scripted

    bool operator==(const ProviderExchange&) const = default;
};

void to_json(nlohmann::json& j, const ProviderExchange& e);
void from_json(const nlohmann::json& j, ProviderExchange& e);

using ExchangeLog = std::vector<ProviderExchange>;

// Calls handle.provider->complete and appends one ProviderExchange to `log`
// (when non-null) whether the call succeeds or throws; failures rethrow.
ProviderResponse logged_complete(const ProviderHandle& handle,
                                 std::span<const ChatMessage> messages, const std::string& role,
                                 const std::string& tool, ExchangeLog* log);

} // namespace cxrflow
