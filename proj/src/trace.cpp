#include "cxrflow/trace.hpp"

#include <algorithm>
#include <fstream>

#include "cxrflow/jsonl.hpp"

namespace cxrflow {

// ---------------------------------------------------------------------------
// enums

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::tools: return "tools";
        case Ablation::tools_edv: return "tools-edv";
        case Ablation::full: return "full";
    }
    return "full";
}

Ablation ablation_from_name(const std::string& name) {
    if (name == "none") return Ablation::none;
    if (name == "tools") return Ablation::tools;
    if (name == "tools-edv") return Ablation::tools_edv;
    if (name == "full") return Ablation::full;
    throw EngineError(ErrorCode::Corrupt, "unknown ablation level: " + name);
}

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::thought: return "thought";
        case Stage::action: return "action";
        case Stage::observation: return "observation";
        case Stage::validation: return "validation";
        case Stage::strategy: return "strategy";
        case Stage::recruitment: return "recruitment";
        case Stage::member: return "member";
        case Stage::synthesis: return "synthesis";
        case Stage::provider_exchange: return "provider-exchange";
    }
    return "thought";
}

Stage stage_from_name(const std::string& name) {
    static const Stage all[] = {Stage::thought,    Stage::action,      Stage::observation,
                                Stage::validation, Stage::strategy,    Stage::recruitment,
                                Stage::member,     Stage::synthesis,   Stage::provider_exchange};
    for (Stage s : all)
        if (name == stage_name(s)) return s;
    throw EngineError(ErrorCode::Corrupt, "unknown stage: " + name);
}

const std::vector<Stage>& permitted_stages(Ablation a) {
    static const std::vector<Stage> none = {Stage::synthesis, Stage::provider_exchange};
    static const std::vector<Stage> tools = {Stage::thought, Stage::action, Stage::observation,
                                             Stage::synthesis, Stage::provider_exchange};
    static const std::vector<Stage> tools_edv = {Stage::thought,    Stage::action,
                                                 Stage::observation, Stage::validation,
                                                 Stage::synthesis,   Stage::provider_exchange};
    static const std::vector<Stage> full = {
        Stage::thought, Stage::action,      Stage::observation,
        Stage::validation, Stage::strategy, Stage::recruitment,
        Stage::member,  Stage::synthesis,   Stage::provider_exchange};
    switch (a) {
        case Ablation::none: return none;
        case Ablation::tools: return tools;
        case Ablation::tools_edv: return tools_edv;
        case Ablation::full: return full;
    }
    return full;
}

// ---------------------------------------------------------------------------
// config

void RunConfig::validate() const {
    if (budget < 0)
        throw EngineError(ErrorCode::Config, "budget must be >= 0");
    if (k_max < 1)
        throw EngineError(ErrorCode::Config, "k_max must be >= 1");
    director.validate();
    member_provider.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"ablation", ablation_name(c.ablation)},
                       {"budget", c.budget},
                       {"k_max", c.k_max},
                       {"director", c.director},
                       {"member_provider", c.member_provider},
                       {"tool_manifest", c.tool_manifest},
                       {"seed", c.seed},
                       {"flags", c.flags}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    c.ablation = ablation_from_name(j.at("ablation").get<std::string>());
    c.budget = j.value("budget", 5);
    c.k_max = j.value("k_max", 5);
    if (j.contains("director")) j.at("director").get_to(c.director);
    if (j.contains("member_provider")) j.at("member_provider").get_to(c.member_provider);
    c.tool_manifest = j.value("tool_manifest", std::string());
    c.seed = j.value("seed", static_cast<uint64_t>(0));
    c.flags.clear();
    if (j.contains("flags")) j.at("flags").get_to(c.flags);
}

void to_json(nlohmann::json& j, const TraceEvent& e) {
    j = nlohmann::json{
        {"seq", e.seq}, {"stage", stage_name(e.stage)}, {"t_ms", e.t_ms}, {"payload", e.payload}};
}

void from_json(const nlohmann::json& j, TraceEvent& e) {
    j.at("seq").get_to(e.seq);
    e.stage = stage_from_name(j.at("stage").get<std::string>());
    e.t_ms = j.value("t_ms", 0L);
    e.payload = j.at("payload");
}

// ---------------------------------------------------------------------------
// recorder

nlohmann::json strip_time_fields(nlohmann::json j) {
    if (j.is_object()) {
        j.erase("t_ms");
        j.erase("latency_ms");
        for (auto& [key, value] : j.items()) {
            (void)key;
            value = strip_time_fields(std::move(value));
        }
    } else if (j.is_array()) {
        for (auto& value : j) value = strip_time_fields(std::move(value));
    }
    return j;
}

namespace {

nlohmann::json result_to_json(const RunResult& r, const std::vector<std::string>& flags) {
    nlohmann::json j;
    if (r.ok()) {
        j["result"] = {{"ok", true}, {"diagnosis", *r.diagnosis}};
    } else {
        j["result"] = {{"ok", false},
                       {"error_code", r.error ? r.error->code : "unknown"},
                       {"error_message", r.error ? r.error->message : ""}};
    }
    j["flags"] = flags;
    return j;
}

RunResult result_from_json(const nlohmann::json& j) {
    RunResult r;
    if (j.value("ok", false)) {
        r.diagnosis = j.at("diagnosis").get<DiagnosisResult>();
    } else {
        r.error = RunError{j.value("error_code", std::string("unknown")),
                           j.value("error_message", std::string())};
    }
    return r;
}

} // namespace

TraceRecorder::TraceRecorder(RunConfig config, CaseInput case_input, std::vector<ToolSpec> tools,
                             const std::optional<std::filesystem::path>& file)
    : start_(std::chrono::steady_clock::now()) {
    trace_.config = std::move(config);
    trace_.case_input = std::move(case_input);
    trace_.tools = std::move(tools);
    if (file) {
        if (file->has_parent_path()) std::filesystem::create_directories(file->parent_path());
        file_.emplace(*file, std::ios::trunc);
        if (!*file_)
            throw EngineError(ErrorCode::IoError, "cannot write trace file " + file->string());
        nlohmann::json header{{"schema", kTraceSchema},
                              {"config", trace_.config},
                              {"case", trace_.case_input},
                              {"tools", trace_.tools}};
        write_line(header);
    }
}

void TraceRecorder::write_line(const nlohmann::json& j) {
    if (!file_) return;
    *file_ << j.dump() << '\n';
    file_->flush(); // write-ahead: each record durable before the next stage runs
}

void TraceRecorder::emit(Stage stage, nlohmann::json payload) {
    TraceEvent event;
    {
        std::lock_guard lock(mu_);
        event.seq = trace_.events.size();
    }
    event.stage = stage;
    event.t_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - start_)
                     .count();
    event.payload = std::move(payload);
    append(event);
}

void TraceRecorder::append(const TraceEvent& event) {
    std::lock_guard lock(mu_);
    if (finalized_)
        throw EngineError(ErrorCode::Precondition, "trace already finalized");
    if (event.seq != trace_.events.size())
        throw EngineError(ErrorCode::SequenceGap,
                          "event seq " + std::to_string(event.seq) + " does not extend trace of " +
                              std::to_string(trace_.events.size()) + " events");
    if (reference_) {
        if (event.seq >= reference_->events.size())
            throw EngineError(ErrorCode::ReplayDivergence,
                              "replay produced extra event at seq " + std::to_string(event.seq) +
                                  " (stage " + stage_name(event.stage) + ")");
        const TraceEvent& expected = reference_->events[event.seq];
        if (expected.stage != event.stage ||
            strip_time_fields(expected.payload) != strip_time_fields(event.payload))
            throw EngineError(ErrorCode::ReplayDivergence,
                              "replay diverged at seq " + std::to_string(event.seq) + " (stage " +
                                  stage_name(event.stage) + ")");
    }
    trace_.events.push_back(event);
    write_line(nlohmann::json(event));
}

void TraceRecorder::add_flag(const std::string& flag) {
    std::lock_guard lock(mu_);
    if (std::find(trace_.flags.begin(), trace_.flags.end(), flag) == trace_.flags.end())
        trace_.flags.push_back(flag);
}

void TraceRecorder::set_result(RunResult result) {
    std::lock_guard lock(mu_);
    trace_.result = std::move(result);
}

void TraceRecorder::verify_against(const RunTrace& reference) { reference_ = &reference; }

void TraceRecorder::finalize() {
    std::lock_guard lock(mu_);
    if (finalized_) return;
    finalized_ = true;
    if (!trace_.result) return;
    if (reference_) {
        // result line must match too (a mutated synthesis response shows up here
        // at the latest, via the diagnosis payload)
        if (!reference_->result)
            throw EngineError(ErrorCode::ReplayDivergence,
                              "replay produced a result but the reference has none");
        const nlohmann::json a = strip_time_fields(result_to_json(*trace_.result, trace_.flags));
        const nlohmann::json b =
            strip_time_fields(result_to_json(*reference_->result, reference_->flags));
        if (a != b)
            throw EngineError(ErrorCode::ReplayDivergence,
                              "replay result differs from the recorded result");
        if (trace_.events.size() != reference_->events.size())
            throw EngineError(ErrorCode::ReplayDivergence,
                              "replay produced " + std::to_string(trace_.events.size()) +
                                  " events, reference has " +
                                  std::to_string(reference_->events.size()));
    }
    write_line(result_to_json(*trace_.result, trace_.flags));
}

// ---------------------------------------------------------------------------
// persistence

void save_trace(const RunTrace& trace, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EngineError(ErrorCode::IoError, "cannot write " + path.string());
    nlohmann::json header{{"schema", kTraceSchema},
                          {"config", trace.config},
                          {"case", trace.case_input},
                          {"tools", trace.tools}};
    out << header.dump() << '\n';
    for (const auto& e : trace.events) out << nlohmann::json(e).dump() << '\n';
    if (trace.result) out << result_to_json(*trace.result, trace.flags).dump() << '\n';
}

RunTrace load_trace(const std::filesystem::path& path) {
    RunTrace trace;
    bool saw_header = false;
    bool saw_result = false;
    for_each_jsonl(path, ErrorCode::Corrupt, [&](const nlohmann::json& j, long line) {
        try {
            if (!saw_header) {
                if (!j.is_object() || !j.contains("schema"))
                    throw EngineError(ErrorCode::Corrupt, "first line must be the trace header",
                                      line);
                const std::string schema = j.at("schema").get<std::string>();
                if (schema != kTraceSchema)
                    throw EngineError(ErrorCode::SchemaVersionMismatch,
                                      "trace schema '" + schema + "' is not '" + kTraceSchema +
                                          "'");
                j.at("config").get_to(trace.config);
                j.at("case").get_to(trace.case_input);
                if (j.contains("tools")) j.at("tools").get_to(trace.tools);
                saw_header = true;
                return;
            }
            if (saw_result)
                throw EngineError(ErrorCode::Corrupt, "records after the result line", line);
            if (j.contains("result")) {
                trace.result = result_from_json(j.at("result"));
                trace.flags.clear();
                if (j.contains("flags")) j.at("flags").get_to(trace.flags);
                saw_result = true;
                return;
            }
            TraceEvent e = j.get<TraceEvent>();
            if (e.seq != trace.events.size())
                throw EngineError(ErrorCode::Corrupt,
                                  "event seq " + std::to_string(e.seq) + " out of order", line);
            trace.events.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw EngineError(ErrorCode::Corrupt, std::string("bad trace record: ") + ex.what(),
                              line);
        } catch (const EngineError& ex) {
            if (ex.code() == ErrorCode::SchemaVersionMismatch || ex.line() >= 0) throw;
            throw EngineError(ex.code(), ex.what(), line);
        }
    });
    if (!saw_header)
        throw EngineError(ErrorCode::Corrupt, "trace file has no header line", 1);
    return trace;
}

// ---------------------------------------------------------------------------
// equality, gating

bool traces_equal_modulo_time(const RunTrace& a, const RunTrace& b, std::string* why) {
    auto fail = [&](const std::string& reason) {
        if (why) *why = reason;
        return false;
    };
    if (nlohmann::json(a.config) != nlohmann::json(b.config)) return fail("config differs");
    if (nlohmann::json(a.case_input) != nlohmann::json(b.case_input)) return fail("case differs");
    if (nlohmann::json(a.tools) != nlohmann::json(b.tools)) return fail("tool specs differ");
    if (a.flags != b.flags) return fail("flags differ");
    if (a.events.size() != b.events.size())
        return fail("event count " + std::to_string(a.events.size()) + " vs " +
                    std::to_string(b.events.size()));
    for (size_t i = 0; i < a.events.size(); ++i) {
        const auto& ea = a.events[i];
        const auto& eb = b.events[i];
        if (ea.stage != eb.stage)
            return fail("stage differs at seq " + std::to_string(i) + ": " +
                        stage_name(ea.stage) + " vs " + stage_name(eb.stage));
        if (strip_time_fields(ea.payload) != strip_time_fields(eb.payload))
            return fail("payload differs at seq " + std::to_string(i) + " (stage " +
                        stage_name(ea.stage) + ")");
    }
    if (a.result.has_value() != b.result.has_value()) return fail("result presence differs");
    if (a.result) {
        const nlohmann::json ra = strip_time_fields(result_to_json(*a.result, a.flags));
        const nlohmann::json rb = strip_time_fields(result_to_json(*b.result, b.flags));
        if (ra != rb) return fail("result differs");
    }
    return true;
}

void check_gating(const RunTrace& trace) {
    const auto& allowed = permitted_stages(trace.config.ablation);
    size_t synthesis_count = 0;
    for (const auto& e : trace.events) {
        if (std::find(allowed.begin(), allowed.end(), e.stage) == allowed.end())
            throw EngineError(ErrorCode::Precondition,
                              std::string("stage ") + stage_name(e.stage) +
                                  " is not permitted under ablation " +
                                  ablation_name(trace.config.ablation) + " (seq " +
                                  std::to_string(e.seq) + ")");
        if (e.stage == Stage::synthesis) ++synthesis_count;
    }
    if (trace.result && trace.result->ok() && synthesis_count != 1)
        throw EngineError(ErrorCode::Precondition,
                          "successful run must have exactly one synthesis event, found " +
                              std::to_string(synthesis_count));
}

} // namespace cxrflow
