#pragma once

#include <fstream>
#include <mutex>

#include "cxrflow/events.hpp"
#include "cxrflow/synthesis.hpp"

namespace cxrflow {

enum class Ablation { none, tools, tools_edv, full };
const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

inline constexpr Ablation kAblationLevels[] = {Ablation::none, Ablation::tools,
                                               Ablation::tools_edv, Ablation::full};

// Which event classes a run at this ablation level may produce.
const std::vector<Stage>& permitted_stages(Ablation a);

struct RunConfig {
    Ablation ablation = Ablation::full;
    int budget = 5; // react iteration cap
    int k_max = 5;  // team size cap
    ProviderConfig director;
    ProviderConfig member_provider;
    std::string tool_manifest; // path, or "<inline>" for fixture-provided tools
    uint64_t seed = 0;         // retry-jitter RNG seed; recorded for provenance
    std::vector<std::string> flags;

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

struct TraceEvent {
    uint64_t seq = 0;
    Stage stage = Stage::thought;
    long t_ms = 0; // since run start
    nlohmann::json payload;
};

void to_json(nlohmann::json& j, const TraceEvent& e);
void from_json(const nlohmann::json& j, TraceEvent& e);

struct RunError {
    std::string code;
    std::string message;
};

struct RunResult {
    std::optional<DiagnosisResult> diagnosis; // set on success
    std::optional<RunError> error;            // set on documented failure
    bool ok() const { return diagnosis.has_value(); }
};

inline constexpr const char* kTraceSchema = "cxrflow-trace/1";

struct RunTrace {
    RunConfig config;
    CaseInput case_input;
    std::vector<ToolSpec> tools; // resolved tool specs, for self-contained replay
    std::vector<TraceEvent> events;
    std::optional<RunResult> result;
    std::vector<std::string> flags; // degraded-mode markers accumulated at runtime
};

// Recursively drops timing fields (t_ms, latency_ms) — the only parts of an
// event allowed to differ between a run and its replay.
nlohmann::json strip_time_fields(nlohmann::json j);

// Write-ahead trace recorder. When constructed with a file path the header
// line is written immediately and every event line is flushed on append, so
// a crashed run leaves a loadable prefix.
class TraceRecorder : public EventSink {
public:
    TraceRecorder(RunConfig config, CaseInput case_input, std::vector<ToolSpec> tools,
                  const std::optional<std::filesystem::path>& file = std::nullopt);

    void emit(Stage stage, nlohmann::json payload) override;
    void add_flag(const std::string& flag) override;

    // Appends a fully-formed event; seq must equal the current event count or
    // EngineError{SequenceGap} is thrown. In verify mode the event is compared
    // (modulo timing) against the reference trace first.
    void append(const TraceEvent& event);

    void set_result(RunResult result);
    // Writes the result/flags line; recorder is complete afterwards.
    void finalize();

    // Enables replay verification: every appended event and the final result
    // must match `reference` or EngineError{ReplayDivergence} names the first
    // mismatching stage and sequence number. `reference` must outlive this.
    void verify_against(const RunTrace& reference);

    const RunTrace& trace() const { return trace_; }

private:
    RunTrace trace_;
    const RunTrace* reference_ = nullptr;
    std::optional<std::ofstream> file_;
    std::chrono::steady_clock::time_point start_;
    std::mutex mu_;
    bool finalized_ = false;
    void write_line(const nlohmann::json& j);
};

void save_trace(const RunTrace& trace, const std::filesystem::path& path);
// Loads header + events (+ result when present). A schema the loader does not
// speak -> SchemaVersionMismatch; structural damage -> Corrupt with the
// 1-based line number. A trace whose run crashed before the result line loads
// fine with result unset.
RunTrace load_trace(const std::filesystem::path& path);

// Equality modulo timing fields; on mismatch *why (when given) describes the
// first difference found.
bool traces_equal_modulo_time(const RunTrace& a, const RunTrace& b, std::string* why = nullptr);

// Verifies the trace contains only event classes its ablation level permits
// (and exactly one synthesis event when the run succeeded). Throws
// EngineError{Precondition} naming the offending stage otherwise.
void check_gating(const RunTrace& trace);

} // namespace cxrflow
