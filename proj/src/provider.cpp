#include "cxrflow/provider.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "cxrflow/jsonl.hpp"

namespace cxrflow {

namespace {

using Clock = std::chrono::steady_clock;

long elapsed_ms(Clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
}

} // namespace

// ---------------------------------------------------------------------------
// config

void ProviderConfig::validate() const {
    if (temperature < 0.0 || temperature > 2.0)
        throw EngineError(ErrorCode::Config,
                          "temperature must be in [0, 2], got " + std::to_string(temperature));
    if (timeout_ms <= 0 || timeout_ms > 600000)
        throw EngineError(ErrorCode::Config,
                          "timeout_ms must be in (0, 600000], got " + std::to_string(timeout_ms));
    if (max_retries < 0)
        throw EngineError(ErrorCode::Config, "max_retries must be >= 0");
    if (backoff_base_ms < 0)
        throw EngineError(ErrorCode::Config, "backoff_base_ms must be >= 0");
}

void to_json(nlohmann::json& j, const ProviderConfig& c) {
    j = nlohmann::json{
        {"endpoint", c.endpoint},
        {"model_id", c.model_id},
        {"temperature", c.temperature},
        {"timeout_ms", c.timeout_ms},
        {"max_retries", c.max_retries},
        {"api_key_env", c.api_key_env},
        {"backoff_base_ms", c.backoff_base_ms},
    };
}

void from_json(const nlohmann::json& j, ProviderConfig& c) {
    c.endpoint = j.value("endpoint", std::string());
    c.model_id = j.value("model_id", std::string());
    c.temperature = j.value("temperature", 0.0);
    c.timeout_ms = j.value("timeout_ms", 60000L);
    c.max_retries = j.value("max_retries", 2);
    c.api_key_env = j.value("api_key_env", std::string());
    c.backoff_base_ms = j.value("backoff_base_ms", 500L);
}

const char* backend_kind_name(BackendKind kind) {
    return kind == BackendKind::http ? "http" : "scripted";
}

BackendKind backend_kind_from_name(const std::string& name) {
    return name == "http" ? BackendKind::http : BackendKind::scripted;
}

// ---------------------------------------------------------------------------
// fingerprint

namespace {

struct Fnv1a64 {
    uint64_t h = 1469598103934665603ull;

    void bytes(const void* data, size_t n) {
        auto p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    }
    void u64(uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 8);
    }
    void str(const std::string& s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
};

} // namespace

std::string fingerprint(std::span<const ChatMessage> messages) {
    Fnv1a64 f;
    f.u64(messages.size());
    for (const auto& m : messages) {
        f.u64(static_cast<uint64_t>(m.role));
        f.str(m.content);
        f.u64(m.attachments.size());
        for (const auto& a : m.attachments) f.str(a.id);
    }
    char buf[19];
    std::snprintf(buf, sizeof buf, "fp%016llx", static_cast<unsigned long long>(f.h));
    return buf;
}

void validate_messages(std::span<const ChatMessage> messages) {
    if (messages.empty())
        throw EngineError(ErrorCode::EmptyPrompt, "message sequence is empty");
    if (messages.front().role == Role::assistant)
        throw EngineError(ErrorCode::EmptyPrompt, "first message must be system or user");
}

// ---------------------------------------------------------------------------
// scripted backend

void to_json(nlohmann::json& j, const ScriptEntry& e) {
    j = nlohmann::json::object();
    if (e.match)
        j["match"] = *e.match;
    else
        j["next"] = true;
    j["reply"] = e.reply;
}

void from_json(const nlohmann::json& j, ScriptEntry& e) {
    if (j.contains("match")) e.match = j.at("match").get<std::string>();
    e.next = j.value("next", false);
    e.reply = j.at("reply").get<std::string>();
}

std::vector<ScriptEntry> load_script(const std::filesystem::path& path) {
    std::vector<ScriptEntry> out;
    for_each_jsonl(path, ErrorCode::ScriptParse, [&](const nlohmann::json& j, long line) {
        if (!j.is_object())
            throw EngineError(ErrorCode::ScriptParse, "script entry must be an object", line);
        for (const auto& [key, _] : j.items())
            if (key != "match" && key != "next" && key != "reply")
                throw EngineError(ErrorCode::ScriptParse, "unknown script key '" + key + "'", line);
        if (!j.contains("reply") || !j.at("reply").is_string())
            throw EngineError(ErrorCode::ScriptParse, "script entry needs a string 'reply'", line);
        bool has_match = j.contains("match");
        bool has_next = j.value("next", false);
        if (has_match == has_next)
            throw EngineError(ErrorCode::ScriptParse,
                              "script entry needs exactly one of 'match' or 'next': true", line);
        if (has_match && (!j.at("match").is_string() || j.at("match").get<std::string>().empty()))
            throw EngineError(ErrorCode::ScriptParse, "'match' must be a non-empty string", line);
        ScriptEntry e;
        if (has_match) e.match = j.at("match").get<std::string>();
        e.next = has_next;
        e.reply = j.at("reply").get<std::string>();
        out.push_back(std::move(e));
    });
    return out;
}

void save_script(const std::vector<ScriptEntry>& entries, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EngineError(ErrorCode::IoError, "cannot write " + path.string());
    for (const auto& e : entries) {
        nlohmann::json j = e;
        out << j.dump() << '\n';
    }
}

ScriptedProvider::ScriptedProvider(std::vector<ScriptEntry> entries)
    : entries_(std::move(entries)), next_consumed_(entries_.size(), false) {}

ProviderResponse ScriptedProvider::complete(std::span<const ChatMessage> messages,
                                            const ProviderConfig& config) {
    validate_messages(messages);
    config.validate();
    const std::string fp = fingerprint(messages);
    std::lock_guard lock(mu_);
    for (const auto& e : entries_) {
        if (e.match && *e.match == fp) {
            ++served_;
            return ProviderResponse{e.reply, 0, 0, 0, BackendKind::scripted};
        }
    }
    for (size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].next && !next_consumed_[i]) {
            next_consumed_[i] = true;
            ++served_;
            return ProviderResponse{entries_[i].reply, 0, 0, 0, BackendKind::scripted};
        }
    }
    throw EngineError(ErrorCode::ScriptMiss, "no scripted reply for fingerprint " + fp);
}

size_t ScriptedProvider::served() const {
    std::lock_guard lock(mu_);
    return served_;
}

size_t ScriptedProvider::unserved_next() const {
    std::lock_guard lock(mu_);
    size_t n = 0;
    for (size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].next && !next_consumed_[i]) ++n;
    return n;
}

// ---------------------------------------------------------------------------
// http backend

namespace {

const char* kBase64Chars = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::string& in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 2 < in.size()) {
        uint32_t v = (static_cast<unsigned char>(in[i]) << 16) |
                     (static_cast<unsigned char>(in[i + 1]) << 8) |
                     static_cast<unsigned char>(in[i + 2]);
        out += kBase64Chars[(v >> 18) & 63];
        out += kBase64Chars[(v >> 12) & 63];
        out += kBase64Chars[(v >> 6) & 63];
        out += kBase64Chars[v & 63];
        i += 3;
    }
    if (i + 1 == in.size()) {
        uint32_t v = static_cast<unsigned char>(in[i]) << 16;
        out += kBase64Chars[(v >> 18) & 63];
        out += kBase64Chars[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == in.size()) {
        uint32_t v = (static_cast<unsigned char>(in[i]) << 16) |
                     (static_cast<unsigned char>(in[i + 1]) << 8);
        out += kBase64Chars[(v >> 18) & 63];
        out += kBase64Chars[(v >> 12) & 63];
        out += kBase64Chars[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

bool has_prefix(const std::string& s, const char* prefix) {
    return s.rfind(prefix, 0) == 0;
}

std::string resolve_image_url(const ImageRef& ref) {
    if (has_prefix(ref.location, "http://") || has_prefix(ref.location, "https://") ||
        has_prefix(ref.location, "data:"))
        return ref.location;
    std::ifstream in(ref.location, std::ios::binary);
    if (!in)
        throw EngineError(ErrorCode::IoError, "cannot read image file " + ref.location);
    std::ostringstream buf;
    buf << in.rdbuf();
    return "data:" + ref.media_type + ";base64," + base64_encode(buf.str());
}

struct ParsedUrl {
    std::string scheme_host_port; // e.g. "http://127.0.0.1:8080"
    std::string path;             // e.g. "/v1/chat/completions"
};

ParsedUrl parse_endpoint(const std::string& endpoint) {
    auto sep = endpoint.find("://");
    if (sep == std::string::npos)
        throw EngineError(ErrorCode::Config, "endpoint must be an http(s) URL: " + endpoint);
    std::string scheme = endpoint.substr(0, sep);
    if (scheme != "http" && scheme != "https")
        throw EngineError(ErrorCode::Config, "unsupported endpoint scheme: " + scheme);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (scheme == "https")
        throw EngineError(ErrorCode::Config, "built without TLS support; use an http endpoint");
#endif
    auto path_start = endpoint.find('/', sep + 3);
    ParsedUrl out;
    if (path_start == std::string::npos) {
        out.scheme_host_port = endpoint;
        out.path = "/";
    } else {
        out.scheme_host_port = endpoint.substr(0, path_start);
        out.path = endpoint.substr(path_start);
    }
    if (out.scheme_host_port.size() == sep + 3)
        throw EngineError(ErrorCode::Config, "endpoint has no host: " + endpoint);
    return out;
}

bool looks_like_timeout(httplib::Error err, long elapsed, long timeout_ms) {
    if (err == httplib::Error::ConnectionTimeout) return true;
    if (err == httplib::Error::Read || err == httplib::Error::Write)
        return elapsed + 50 >= timeout_ms;
    return false;
}

} // namespace

HttpProvider::HttpProvider(uint64_t jitter_seed)
    : jitter_state_(jitter_seed ? jitter_seed : 0x9e3779b97f4a7c15ull) {}

long HttpProvider::next_jitter(long base) {
    std::lock_guard lock(mu_);
    // xorshift64*; only backoff timing depends on this, never any output
    jitter_state_ ^= jitter_state_ >> 12;
    jitter_state_ ^= jitter_state_ << 25;
    jitter_state_ ^= jitter_state_ >> 27;
    uint64_t r = jitter_state_ * 2685821657736338717ull;
    double factor = 0.8 + 0.4 * (static_cast<double>(r >> 11) /
                                 static_cast<double>(1ull << 53));
    return static_cast<long>(static_cast<double>(base) * factor);
}

nlohmann::json HttpProvider::build_request_body(std::span<const ChatMessage> messages,
                                                const ProviderConfig& config) {
    nlohmann::json body;
    body["model"] = config.model_id;
    body["temperature"] = config.temperature;
    auto msgs = nlohmann::json::array();
    for (const auto& m : messages) {
        nlohmann::json jm;
        jm["role"] = role_name(m.role);
        if (m.attachments.empty()) {
            jm["content"] = m.content;
        } else {
            auto parts = nlohmann::json::array();
            parts.push_back({{"type", "text"}, {"text", m.content}});
            for (const auto& img : m.attachments)
                parts.push_back(
                    {{"type", "image_url"}, {"image_url", {{"url", resolve_image_url(img)}}}});
            jm["content"] = std::move(parts);
        }
        msgs.push_back(std::move(jm));
    }
    body["messages"] = std::move(msgs);
    return body;
}

ProviderResponse HttpProvider::complete(std::span<const ChatMessage> messages,
                                        const ProviderConfig& config) {
    validate_messages(messages);
    config.validate();
    if (config.endpoint.empty())
        throw EngineError(ErrorCode::Config, "http provider needs an endpoint");
    if (config.model_id.empty())
        throw EngineError(ErrorCode::Config, "http provider needs a model_id");

    const ParsedUrl url = parse_endpoint(config.endpoint);
    const std::string body = build_request_body(messages, config).dump();

    httplib::Headers headers;
    if (!config.api_key_env.empty()) {
        const char* key = std::getenv(config.api_key_env.c_str());
        if (!key || !*key)
            throw EngineError(ErrorCode::Config,
                              "environment variable " + config.api_key_env + " is not set");
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    const auto overall_start = Clock::now();
    for (int attempt = 0;; ++attempt) {
        httplib::Client client(url.scheme_host_port);
        client.set_connection_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
        client.set_read_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
        client.set_write_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);

        const auto t0 = Clock::now();
        auto res = client.Post(url.path, headers, body, "application/json");
        const long attempt_ms = elapsed_ms(t0);

        bool retryable = false;
        ErrorCode fail_code = ErrorCode::Transport;
        std::string fail_msg;

        if (res) {
            if (res->status == 200) {
                nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
                if (j.is_discarded())
                    throw EngineError(ErrorCode::Malformed, "response body is not JSON");
                std::string content;
                try {
                    content = j.at("choices").at(0).at("message").at("content").get<std::string>();
                } catch (const nlohmann::json::exception&) {
                    throw EngineError(ErrorCode::Malformed,
                                      "response lacks choices[0].message.content");
                }
                ProviderResponse out;
                out.content = std::move(content);
                out.backend = BackendKind::http;
                out.latency_ms = elapsed_ms(overall_start);
                if (j.contains("usage") && j["usage"].is_object()) {
                    out.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
                    out.completion_tokens = j["usage"].value("completion_tokens", 0L);
                }
                return out;
            }
            if (res->status == 429) {
                retryable = true;
                fail_code = ErrorCode::RateLimited;
                fail_msg = "rate limited (HTTP 429)";
            } else if (res->status >= 500) {
                retryable = true;
                fail_code = ErrorCode::Transport;
                fail_msg = "server error (HTTP " + std::to_string(res->status) + ")";
            } else {
                // other 4xx: never retried
                throw EngineError(ErrorCode::Transport,
                                  "request rejected (HTTP " + std::to_string(res->status) + "): " +
                                      res->body.substr(0, 200));
            }
        } else {
            retryable = true;
            if (looks_like_timeout(res.error(), attempt_ms, config.timeout_ms)) {
                fail_code = ErrorCode::Timeout;
                fail_msg = "request timed out after " + std::to_string(attempt_ms) + " ms";
            } else {
                fail_code = ErrorCode::Transport;
                fail_msg = std::string("transport failure: ") + httplib::to_string(res.error());
            }
        }

        if (!retryable || attempt >= config.max_retries)
            throw EngineError(fail_code,
                              fail_msg + " (attempt " + std::to_string(attempt + 1) + " of " +
                                  std::to_string(config.max_retries + 1) + ")");
        const long backoff = next_jitter(config.backoff_base_ms << attempt);
        if (backoff > 0) std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    }
}

// ---------------------------------------------------------------------------
// exchange logging

void to_json(nlohmann::json& j, const ProviderExchange& e) {
    j = nlohmann::json{{"role", e.role},           {"fingerprint", e.fingerprint},
                       {"ok", e.ok},               {"latency_ms", e.latency_ms},
                       {"backend", e.backend}};
    if (!e.tool.empty()) j["tool"] = e.tool;
    if (e.ok) {
        j["response"] = e.response;
    } else {
        j["error_code"] = e.error_code;
        j["error_message"] = e.error_message;
    }
}

void from_json(const nlohmann::json& j, ProviderExchange& e) {
    j.at("role").get_to(e.role);
    e.tool = j.value("tool", std::string());
    j.at("fingerprint").get_to(e.fingerprint);
    e.ok = j.value("ok", true);
    e.response = j.value("response", std::string());
    e.error_code = j.value("error_code", std::string());
    e.error_message = j.value("error_message", std::string());
    e.latency_ms = j.value("latency_ms", 0L);
    e.backend = j.value("backend", std::string());
}

ProviderResponse logged_complete(const ProviderHandle& handle,
                                 std::span<const ChatMessage> messages, const std::string& role,
                                 const std::string& tool, ExchangeLog* log) {
    const std::string fp = fingerprint(messages);
    const auto t0 = Clock::now();
    try {
        ProviderResponse resp = handle.provider->complete(messages, handle.config);
        if (log) {
            ProviderExchange e;
            e.role = role;
            e.tool = tool;
            e.fingerprint = fp;
            e.ok = true;
            e.response = resp.content;
            e.latency_ms = resp.latency_ms;
            e.backend = backend_kind_name(resp.backend);
            log->push_back(std::move(e));
        }
        return resp;
    } catch (const EngineError& err) {
        if (log) {
            ProviderExchange e;
            e.role = role;
            e.tool = tool;
            e.fingerprint = fp;
            e.ok = false;
            e.error_code = error_code_name(err.code());
            e.error_message = err.what();
            e.latency_ms = elapsed_ms(t0);
            log->push_back(std::move(e));
        }
        throw;
    }
}

} // namespace cxrflow
