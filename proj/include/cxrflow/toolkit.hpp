#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cxrflow/case.hpp"
#include "cxrflow/provider.hpp"

namespace cxrflow {

struct ToolBackend {
    BackendKind kind = BackendKind::scripted;
    ProviderConfig config;    // http: endpoint/model/timeout/retries
    std::string script_path;  // scripted: path to the reply script
};

struct ToolSpec {
    std::string name;
    std::string description;
    std::vector<std::string> capabilities;
    ToolBackend backend;
};

void to_json(nlohmann::json& j, const ToolSpec& s);
void from_json(const nlohmann::json& j, ToolSpec& s);

struct ToolInvocation {
    std::string tool_name;
    std::string question;
    std::vector<ImageRef> images;
    int iteration = 1;          // 1-based react iteration
    int index_in_iteration = 1; // 1-based position within the iteration

    bool operator==(const ToolInvocation&) const = default;
};

void to_json(nlohmann::json& j, const ToolInvocation& inv);
void from_json(const nlohmann::json& j, ToolInvocation& inv);

enum class ToolStatus { ok, timeout, error };
const char* tool_status_name(ToolStatus s);
ToolStatus tool_status_from_name(const std::string& name);

struct ToolOutput {
    ToolInvocation invocation;
    std::string raw_text;                // empty unless status == ok
    std::vector<std::string> statements; // split from raw_text
    ToolStatus status = ToolStatus::ok;
    std::string error_message;
    std::string error_code; // EngineError code name behind a failed status
    std::string backend;    // which backend kind actually served the call
    long latency_ms = 0;
};

void to_json(nlohmann::json& j, const ToolOutput& out);
void from_json(const nlohmann::json& j, ToolOutput& out);

// Splits tool prose into individually checkable statements: sentence
// terminators [.?!;] followed by whitespace or end-of-line (a '.' between two
// digits does not split), bullet markers at line starts stripped, blanks
// dropped. Joining the statements back with single spaces equals the input
// modulo whitespace and bullet markers.
std::vector<std::string> split_statements(const std::string& raw);

class ToolRegistry {
public:
    // Builds the provider from spec.backend (loads scripts eagerly so path
    // errors surface at registration, not mid-run).
    void register_spec(const ToolSpec& spec);
    // Registers with an explicit provider; used by fixtures and tests.
    void register_backend(const ToolSpec& spec, std::shared_ptr<Provider> provider);

    bool has(const std::string& name) const;
    const ToolSpec& spec(const std::string& name) const; // throws UnknownTool
    const std::vector<ToolSpec>& specs() const { return specs_; }

    // Deterministic text block enumerating every tool (registration order)
    // with description and capabilities; rendered into director prompts.
    std::string catalog_prompt() const;

    // The exact messages a tool invocation sends to its backend; exposed so
    // traces and scripts can fingerprint tool calls.
    std::vector<ChatMessage> render_request(const ToolInvocation& inv) const;

    // Never throws for backend failures: timeouts map to status=timeout,
    // other provider errors to status=error. Unknown tool names still throw
    // EngineError{UnknownTool} (engine bug, not model failure).
    ToolOutput invoke(const ToolInvocation& inv) const;

    std::shared_ptr<Provider> provider(const std::string& name) const;
    const ProviderConfig& provider_config(const std::string& name) const;

private:
    std::vector<ToolSpec> specs_;
    std::vector<std::shared_ptr<Provider>> providers_;
    size_t index_of(const std::string& name) const;
};

// One JSON object per line; script paths resolve relative to the manifest's
// directory. Duplicate names -> EngineError{DuplicateTool}.
std::vector<ToolSpec> load_manifest(const std::filesystem::path& path);
ToolRegistry build_registry(const std::vector<ToolSpec>& specs, uint64_t jitter_seed = 0);

} // namespace cxrflow
