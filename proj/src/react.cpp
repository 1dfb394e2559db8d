#include "cxrflow/react.hpp"

#include <cctype>
#include <future>
#include <optional>
#include <set>

namespace cxrflow {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Content of the first complete ``` fence, language tag stripped.
std::optional<std::string> extract_fenced_block(const std::string& text) {
    const size_t open = text.find("```");
    if (open == std::string::npos) return std::nullopt;
    size_t body = text.find('\n', open + 3);
    if (body == std::string::npos) return std::nullopt;
    ++body;
    const size_t close = text.find("```", body);
    if (close == std::string::npos) return std::nullopt;
    return text.substr(body, close - body);
}

struct ThoughtParse {
    bool ok = false;
    std::string error;
    bool sufficient = false;
    std::vector<std::pair<std::string, std::string>> tools; // (name, question)
    std::string rationale;
};

ThoughtParse parse_thought_reply(const std::string& reply) {
    ThoughtParse out;
    const std::string candidate = extract_fenced_block(reply).value_or(trim(reply));
    nlohmann::json j = nlohmann::json::parse(candidate, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        out.error = "reply is not a JSON object";
        return out;
    }
    if (!j.contains("decision") || !j["decision"].is_string()) {
        out.error = "missing string field 'decision'";
        return out;
    }
    std::string decision = j["decision"].get<std::string>();
    for (auto& ch : decision) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (j.contains("rationale") && j["rationale"].is_string())
        out.rationale = j["rationale"].get<std::string>();
    if (decision == "SUFFICIENT") {
        out.ok = true;
        out.sufficient = true;
        return out;
    }
    if (decision != "TOOLS") {
        out.error = "decision must be TOOLS or SUFFICIENT, got '" + decision + "'";
        return out;
    }
    if (!j.contains("tools") || !j["tools"].is_array() || j["tools"].empty()) {
        out.error = "TOOLS decision needs a non-empty 'tools' array";
        return out;
    }
    std::set<std::string> seen;
    for (const auto& t : j["tools"]) {
        if (!t.is_object() || !t.contains("name") || !t["name"].is_string() ||
            t["name"].get<std::string>().empty()) {
            out.error = "each tools[] entry needs a non-empty string 'name'";
            return out;
        }
        const std::string name = t["name"].get<std::string>();
        std::string question;
        if (t.contains("question") && t["question"].is_string())
            question = trim(t["question"].get<std::string>());
        if (seen.insert(name + '\x1f' + question).second) out.tools.emplace_back(name, question);
    }
    out.ok = true;
    return out;
}

} // namespace

void emit_exchanges(EventSink* sink, const ExchangeLog& exchanges) {
    if (!sink) return;
    for (const auto& e : exchanges) sink->emit(Stage::provider_exchange, nlohmann::json(e));
}

std::vector<ChatMessage> render_thought_prompt(const MemoryLog& log, const CaseInput& c,
                                               const ToolRegistry& registry,
                                               size_t transcript_cap) {
    std::vector<ChatMessage> msgs;
    msgs.push_back(
        {Role::system,
         "You are the director of a chest X-ray diagnostic team, reasoning step by step. In "
         "each step you either consult specialist imaging tools or declare the gathered "
         "evidence sufficient.\n\n" +
             registry.catalog_prompt() +
             "\nReply with a single fenced JSON block:\n"
             "```json\n"
             "{\"decision\": \"TOOLS\", \"tools\": [{\"name\": \"<registered tool name>\", "
             "\"question\": \"<specific question for it>\"}], \"rationale\": \"<why>\"}\n"
             "```\n"
             "or\n"
             "```json\n"
             "{\"decision\": \"SUFFICIENT\", \"rationale\": \"<why the evidence suffices>\"}\n"
             "```\n"
             "Request only tools from the list above, each with one focused question.",
         {}});
    msgs.push_back({Role::user,
                    case_presentation(c) + "\nReasoning log so far:\n" +
                        render_transcript(log, transcript_cap) + "\nDecide your next step.",
                    c.images});
    return msgs;
}

ThoughtEntry think(const MemoryLog& log, const CaseInput& c, const ProviderHandle& director,
                   const ToolRegistry& registry, ExchangeLog* exchanges, size_t transcript_cap) {
    const auto msgs = render_thought_prompt(log, c, registry, transcript_cap);
    ProviderResponse resp = logged_complete(director, msgs, "director", "", exchanges);
    ThoughtParse parsed = parse_thought_reply(resp.content);
    std::string raw = resp.content;
    if (!parsed.ok) {
        auto repair = msgs;
        repair.push_back({Role::assistant, raw, {}});
        repair.push_back({Role::user,
                          "Your reply could not be used (" + parsed.error +
                              "). Respond again with exactly one fenced JSON block of the "
                              "required form and nothing else.",
                          {}});
        ProviderResponse retry = logged_complete(director, repair, "director", "", exchanges);
        raw = retry.content;
        parsed = parse_thought_reply(raw);
        if (!parsed.ok)
            throw EngineError(ErrorCode::UnparseableThought,
                              "thought unparseable after repair retry: " + parsed.error);
    }
    for (const auto& [name, _] : parsed.tools)
        if (!registry.has(name))
            throw EngineError(ErrorCode::UnknownToolRequested,
                              "director requested unregistered tool '" + name + "'");

    ThoughtEntry entry;
    entry.iteration = static_cast<int>(log.thought_count()) + 1;
    entry.text = parsed.rationale.empty() ? trim(raw) : parsed.rationale;
    entry.sufficient = parsed.sufficient;
    int index = 1;
    for (const auto& [name, question] : parsed.tools) {
        ToolInvocation inv;
        inv.tool_name = name;
        inv.question = question.empty() ? c.query : question;
        inv.images = c.images;
        inv.iteration = entry.iteration;
        inv.index_in_iteration = index++;
        entry.invocations.push_back(std::move(inv));
    }
    return entry;
}

ObservationEntry execute_action(const ActionEntry& action, const ToolRegistry& registry) {
    ObservationEntry obs;
    obs.iteration = action.iteration;
    obs.outputs.resize(action.invocations.size());
    if (action.invocations.size() == 1) {
        obs.outputs[0] = registry.invoke(action.invocations[0]);
        return obs;
    }
    std::vector<std::future<ToolOutput>> futures;
    futures.reserve(action.invocations.size());
    for (const auto& inv : action.invocations)
        futures.push_back(
            std::async(std::launch::async, [&registry, inv] { return registry.invoke(inv); }));
    for (size_t i = 0; i < futures.size(); ++i) obs.outputs[i] = futures[i].get();
    return obs;
}

ProviderExchange exchange_from_output(const ToolRegistry& registry, const ToolOutput& out) {
    ProviderExchange e;
    e.role = "tool";
    e.tool = out.invocation.tool_name;
    e.fingerprint = fingerprint(registry.render_request(out.invocation));
    e.ok = out.status == ToolStatus::ok;
    e.response = out.raw_text;
    e.error_code = out.error_code;
    e.error_message = out.error_message;
    e.latency_ms = out.latency_ms;
    e.backend = out.backend;
    return e;
}

namespace {

struct ValidationTask {
    std::string tool;
    std::string statement;
    ExchangeLog exchanges;
    std::optional<ValidationRecord> record;
    std::exception_ptr error;
};

void run_validations(const ObservationEntry& obs, const ValidatorFn& validator, MemoryLog& log,
                     EventSink* sink, size_t concurrency) {
    std::vector<ValidationTask> tasks;
    for (const auto& out : obs.outputs)
        for (const auto& stmt : out.statements)
            tasks.push_back({out.invocation.tool_name, stmt, {}, std::nullopt, nullptr});
    if (tasks.empty()) return;

    auto run_one = [&validator](ValidationTask& task) {
        try {
            task.record = validator(task.tool, task.statement, task.exchanges);
        } catch (...) {
            task.error = std::current_exception();
        }
    };

    if (concurrency == 1) {
        // sequential mode still defers emission to the shared path below
        for (auto& task : tasks) run_one(task);
    } else {
        std::vector<std::future<void>> futures;
        futures.reserve(tasks.size());
        for (auto& task : tasks)
            futures.push_back(std::async(std::launch::async, [&run_one, &task] { run_one(task); }));
        for (auto& f : futures) f.get();
    }

    // statement order, exchanges before the validation event they produced
    for (auto& task : tasks) {
        emit_exchanges(sink, task.exchanges);
        if (task.error) std::rethrow_exception(task.error);
        log.append_validation(*task.record);
        if (sink) sink->emit(Stage::validation, nlohmann::json(*task.record));
    }
}

} // namespace

MemoryLog run_loop(const CaseInput& c, const ToolRegistry& registry,
                   const ProviderHandle& director, int budget, const ValidatorFn* validator,
                   EventSink* sink, const LoopOptions& options) {
    if (budget < 0)
        throw EngineError(ErrorCode::Precondition, "budget must be >= 0");
    MemoryLog log;
    for (int iteration = 1; iteration <= budget; ++iteration) {
        ExchangeLog xlog;
        ThoughtEntry thought;
        try {
            thought = think(log, c, director, registry, &xlog, options.transcript_cap);
        } catch (...) {
            emit_exchanges(sink, xlog);
            throw;
        }
        emit_exchanges(sink, xlog);
        log.append_thought(thought);
        if (sink) sink->emit(Stage::thought, nlohmann::json(thought));
        if (thought.sufficient) break;

        ActionEntry action{thought.iteration, thought.invocations};
        log.append_action(action);
        if (sink) sink->emit(Stage::action, nlohmann::json(action));

        ObservationEntry obs = execute_action(action, registry);
        if (sink)
            for (const auto& out : obs.outputs)
                sink->emit(Stage::provider_exchange,
                           nlohmann::json(exchange_from_output(registry, out)));
        log.append_observation(obs);
        if (sink) sink->emit(Stage::observation, nlohmann::json(obs));

        if (validator && *validator)
            run_validations(obs, *validator, log, sink, options.validation_concurrency);
    }
    return log;
}

} // namespace cxrflow
