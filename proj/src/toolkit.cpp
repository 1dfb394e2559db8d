#include "cxrflow/toolkit.hpp"

#include <cctype>
#include <chrono>
#include <sstream>

#include "cxrflow/jsonl.hpp"

namespace cxrflow {

namespace {

using Clock = std::chrono::steady_clock;

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Strips one leading enumeration marker: runs of -/*/• or "12." / "12)" style
// numbering, each followed by whitespace.
std::string strip_bullet(const std::string& line) {
    const std::string bullet_utf8 = "\xE2\x80\xA2";
    size_t i = 0;
    size_t marker_end = 0;
    while (i < line.size()) {
        if (line[i] == '-' || line[i] == '*') {
            ++i;
            marker_end = i;
        } else if (line.compare(i, bullet_utf8.size(), bullet_utf8) == 0) {
            i += bullet_utf8.size();
            marker_end = i;
        } else {
            break;
        }
    }
    if (marker_end == 0) {
        size_t d = 0;
        while (d < line.size() && d < 3 && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
        if (d > 0 && d < line.size() && (line[d] == '.' || line[d] == ')')) marker_end = d + 1;
    }
    if (marker_end == 0) return line;
    if (marker_end >= line.size()) return "";
    if (!std::isspace(static_cast<unsigned char>(line[marker_end]))) return line;
    return line.substr(marker_end + 1);
}

void split_line(const std::string& line_in, std::vector<std::string>& out) {
    const std::string line = strip_bullet(trim(line_in));
    std::string cur;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        cur += c;
        if (c == '.' || c == '?' || c == '!' || c == ';') {
            const bool at_end = i + 1 == line.size();
            const bool ws_next =
                !at_end && std::isspace(static_cast<unsigned char>(line[i + 1]));
            if (at_end || ws_next) {
                std::string piece = trim(cur);
                if (!piece.empty()) out.push_back(std::move(piece));
                cur.clear();
            }
        }
    }
    std::string piece = trim(cur);
    if (!piece.empty()) out.push_back(std::move(piece));
}

} // namespace

std::vector<std::string> split_statements(const std::string& raw) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= raw.size()) {
        const size_t nl = raw.find('\n', pos);
        const std::string line =
            nl == std::string::npos ? raw.substr(pos) : raw.substr(pos, nl - pos);
        split_line(line, out);
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// spec serialization

const char* tool_status_name(ToolStatus s) {
    switch (s) {
        case ToolStatus::ok: return "ok";
        case ToolStatus::timeout: return "timeout";
        case ToolStatus::error: return "error";
    }
    return "error";
}

ToolStatus tool_status_from_name(const std::string& name) {
    if (name == "ok") return ToolStatus::ok;
    if (name == "timeout") return ToolStatus::timeout;
    if (name == "error") return ToolStatus::error;
    throw EngineError(ErrorCode::Corrupt, "unknown tool status: " + name);
}

void to_json(nlohmann::json& j, const ToolSpec& s) {
    j = nlohmann::json{{"name", s.name},
                       {"description", s.description},
                       {"capabilities", s.capabilities}};
    nlohmann::json b;
    if (s.backend.kind == BackendKind::http) {
        b["kind"] = "http";
        b["endpoint"] = s.backend.config.endpoint;
        b["model_id"] = s.backend.config.model_id;
        b["temperature"] = s.backend.config.temperature;
        b["timeout_ms"] = s.backend.config.timeout_ms;
        b["max_retries"] = s.backend.config.max_retries;
        if (!s.backend.config.api_key_env.empty()) b["api_key_env"] = s.backend.config.api_key_env;
    } else {
        b["kind"] = "scripted";
        b["script"] = s.backend.script_path;
        b["timeout_ms"] = s.backend.config.timeout_ms;
        b["max_retries"] = s.backend.config.max_retries;
    }
    j["backend"] = std::move(b);
}

void from_json(const nlohmann::json& j, ToolSpec& s) {
    j.at("name").get_to(s.name);
    j.at("description").get_to(s.description);
    s.capabilities.clear();
    if (j.contains("capabilities")) j.at("capabilities").get_to(s.capabilities);
    const auto& b = j.at("backend");
    const std::string kind = b.at("kind").get<std::string>();
    s.backend = ToolBackend{};
    s.backend.config.timeout_ms = b.value("timeout_ms", 60000L);
    s.backend.config.max_retries = b.value("max_retries", 1);
    s.backend.config.temperature = b.value("temperature", 0.0);
    if (kind == "http") {
        s.backend.kind = BackendKind::http;
        s.backend.config.endpoint = b.at("endpoint").get<std::string>();
        s.backend.config.model_id = b.at("model_id").get<std::string>();
        s.backend.config.api_key_env = b.value("api_key_env", std::string());
        s.backend.config.backoff_base_ms = b.value("backoff_base_ms", 500L);
    } else if (kind == "scripted") {
        s.backend.kind = BackendKind::scripted;
        s.backend.script_path = b.at("script").get<std::string>();
    } else {
        throw EngineError(ErrorCode::Config, "unknown tool backend kind: " + kind);
    }
}

void to_json(nlohmann::json& j, const ToolInvocation& inv) {
    j = nlohmann::json{{"tool", inv.tool_name},
                       {"question", inv.question},
                       {"images", inv.images},
                       {"iteration", inv.iteration},
                       {"index", inv.index_in_iteration}};
}

void from_json(const nlohmann::json& j, ToolInvocation& inv) {
    j.at("tool").get_to(inv.tool_name);
    j.at("question").get_to(inv.question);
    inv.images.clear();
    if (j.contains("images")) j.at("images").get_to(inv.images);
    inv.iteration = j.value("iteration", 1);
    inv.index_in_iteration = j.value("index", 1);
}

void to_json(nlohmann::json& j, const ToolOutput& out) {
    j = nlohmann::json{{"invocation", out.invocation},
                       {"status", tool_status_name(out.status)},
                       {"latency_ms", out.latency_ms}};
    if (out.status == ToolStatus::ok) {
        j["raw_text"] = out.raw_text;
        j["statements"] = out.statements;
        j["backend"] = out.backend;
    } else {
        j["error_message"] = out.error_message;
        j["error_code"] = out.error_code;
    }
}

void from_json(const nlohmann::json& j, ToolOutput& out) {
    j.at("invocation").get_to(out.invocation);
    out.status = tool_status_from_name(j.at("status").get<std::string>());
    out.raw_text = j.value("raw_text", std::string());
    out.statements.clear();
    if (j.contains("statements")) j.at("statements").get_to(out.statements);
    out.error_message = j.value("error_message", std::string());
    out.error_code = j.value("error_code", std::string());
    out.backend = j.value("backend", std::string());
    out.latency_ms = j.value("latency_ms", 0L);
}

// ---------------------------------------------------------------------------
// registry

void ToolRegistry::register_spec(const ToolSpec& spec) {
    std::shared_ptr<Provider> provider;
    if (spec.backend.kind == BackendKind::scripted)
        provider = std::make_shared<ScriptedProvider>(load_script(spec.backend.script_path));
    else
        provider = std::make_shared<HttpProvider>();
    register_backend(spec, std::move(provider));
}

void ToolRegistry::register_backend(const ToolSpec& spec, std::shared_ptr<Provider> provider) {
    if (spec.name.empty())
        throw EngineError(ErrorCode::Config, "tool name must be non-empty");
    if (has(spec.name))
        throw EngineError(ErrorCode::DuplicateTool, "tool '" + spec.name + "' already registered");
    if (!provider)
        throw EngineError(ErrorCode::Config, "tool '" + spec.name + "' has no provider");
    specs_.push_back(spec);
    providers_.push_back(std::move(provider));
}

bool ToolRegistry::has(const std::string& name) const {
    for (const auto& s : specs_)
        if (s.name == name) return true;
    return false;
}

size_t ToolRegistry::index_of(const std::string& name) const {
    for (size_t i = 0; i < specs_.size(); ++i)
        if (specs_[i].name == name) return i;
    throw EngineError(ErrorCode::UnknownTool, "unknown tool '" + name + "'");
}

const ToolSpec& ToolRegistry::spec(const std::string& name) const {
    return specs_[index_of(name)];
}

std::shared_ptr<Provider> ToolRegistry::provider(const std::string& name) const {
    return providers_[index_of(name)];
}

const ProviderConfig& ToolRegistry::provider_config(const std::string& name) const {
    return specs_[index_of(name)].backend.config;
}

std::string ToolRegistry::catalog_prompt() const {
    std::ostringstream out;
    out << "Available tools:\n";
    for (size_t i = 0; i < specs_.size(); ++i) {
        const auto& s = specs_[i];
        out << (i + 1) << ". " << s.name << " — " << s.description << "\n";
        if (!s.capabilities.empty()) {
            out << "   capabilities: ";
            for (size_t k = 0; k < s.capabilities.size(); ++k) {
                if (k) out << "; ";
                out << s.capabilities[k];
            }
            out << "\n";
        }
    }
    return out.str();
}

std::vector<ChatMessage> ToolRegistry::render_request(const ToolInvocation& inv) const {
    const ToolSpec& s = spec(inv.tool_name);
    std::vector<ChatMessage> msgs;
    msgs.push_back({Role::system,
                    "You are " + s.name + ". " + s.description +
                        " Examine the attached chest X-ray and answer the question. State "
                        "positive findings and relevant negative findings concisely.",
                    {}});
    msgs.push_back({Role::user, inv.question, inv.images});
    return msgs;
}

ToolOutput ToolRegistry::invoke(const ToolInvocation& inv) const {
    const size_t idx = index_of(inv.tool_name);
    const auto msgs = render_request(inv);
    ToolOutput out;
    out.invocation = inv;
    const auto t0 = Clock::now();
    try {
        ProviderResponse resp = providers_[idx]->complete(msgs, specs_[idx].backend.config);
        out.raw_text = resp.content;
        out.statements = split_statements(resp.content);
        out.status = ToolStatus::ok;
        out.backend = backend_kind_name(resp.backend);
        out.latency_ms = resp.latency_ms;
    } catch (const EngineError& e) {
        out.status = e.code() == ErrorCode::Timeout ? ToolStatus::timeout : ToolStatus::error;
        out.error_message = e.what();
        out.error_code = error_code_name(e.code());
        out.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0)
                             .count();
    } catch (const std::exception& e) {
        out.status = ToolStatus::error;
        out.error_message = e.what();
        out.error_code = error_code_name(ErrorCode::Transport);
        out.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0)
                             .count();
    }
    return out;
}

// ---------------------------------------------------------------------------
// manifest

std::vector<ToolSpec> load_manifest(const std::filesystem::path& path) {
    std::vector<ToolSpec> specs;
    const auto base = path.parent_path();
    for_each_jsonl(path, ErrorCode::Config, [&](const nlohmann::json& j, long line) {
        ToolSpec s;
        try {
            s = j.get<ToolSpec>();
        } catch (const nlohmann::json::exception& e) {
            throw EngineError(ErrorCode::Config, std::string("bad tool entry: ") + e.what(), line);
        }
        if (s.name.empty() || s.description.empty())
            throw EngineError(ErrorCode::Config, "tool needs a name and a description", line);
        for (const auto& prev : specs)
            if (prev.name == s.name)
                throw EngineError(ErrorCode::DuplicateTool, "duplicate tool '" + s.name + "'",
                                  line);
        if (s.backend.kind == BackendKind::scripted) {
            if (s.backend.script_path.empty())
                throw EngineError(ErrorCode::Config, "scripted tool needs a script path", line);
            std::filesystem::path sp(s.backend.script_path);
            if (sp.is_relative()) s.backend.script_path = (base / sp).string();
        } else {
            if (s.backend.config.endpoint.empty() || s.backend.config.model_id.empty())
                throw EngineError(ErrorCode::Config, "http tool needs endpoint and model_id",
                                  line);
        }
        s.backend.config.validate();
        specs.push_back(std::move(s));
    });
    return specs;
}

ToolRegistry build_registry(const std::vector<ToolSpec>& specs, uint64_t jitter_seed) {
    ToolRegistry reg;
    for (const auto& s : specs) {
        if (s.backend.kind == BackendKind::http)
            reg.register_backend(s, std::make_shared<HttpProvider>(jitter_seed));
        else
            reg.register_spec(s);
    }
    return reg;
}

} // namespace cxrflow
