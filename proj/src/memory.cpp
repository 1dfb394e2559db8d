#include "cxrflow/memory.hpp"

#include <sstream>

namespace cxrflow {

// ---------------------------------------------------------------------------
// serialization

void to_json(nlohmann::json& j, const ThoughtEntry& t) {
    j = nlohmann::json{{"iteration", t.iteration},
                       {"text", t.text},
                       {"decision", t.sufficient ? "sufficient" : "tools"}};
    if (!t.sufficient) j["invocations"] = t.invocations;
}

void from_json(const nlohmann::json& j, ThoughtEntry& t) {
    j.at("iteration").get_to(t.iteration);
    j.at("text").get_to(t.text);
    const std::string d = j.at("decision").get<std::string>();
    if (d == "sufficient")
        t.sufficient = true;
    else if (d == "tools")
        t.sufficient = false;
    else
        throw EngineError(ErrorCode::Corrupt, "unknown thought decision: " + d);
    t.invocations.clear();
    if (j.contains("invocations")) j.at("invocations").get_to(t.invocations);
}

void to_json(nlohmann::json& j, const ActionEntry& a) {
    j = nlohmann::json{{"iteration", a.iteration}, {"invocations", a.invocations}};
}

void from_json(const nlohmann::json& j, ActionEntry& a) {
    j.at("iteration").get_to(a.iteration);
    j.at("invocations").get_to(a.invocations);
}

void to_json(nlohmann::json& j, const ObservationEntry& o) {
    j = nlohmann::json{{"iteration", o.iteration}, {"outputs", o.outputs}};
}

void from_json(const nlohmann::json& j, ObservationEntry& o) {
    j.at("iteration").get_to(o.iteration);
    j.at("outputs").get_to(o.outputs);
}

// ---------------------------------------------------------------------------
// append grammar

void MemoryLog::append_thought(const ThoughtEntry& t) {
    if (tail_ != Tail::none && tail_ != Tail::observation && tail_ != Tail::validation)
        throw EngineError(ErrorCode::Precondition,
                          "thought must start the log or follow an observation");
    if (t.iteration != last_thought_iteration_ + 1)
        throw EngineError(ErrorCode::Precondition,
                          "thought iteration must be " + std::to_string(last_thought_iteration_ + 1) +
                              ", got " + std::to_string(t.iteration));
    if (!t.sufficient && t.invocations.empty())
        throw EngineError(ErrorCode::Precondition, "tools decision needs at least one invocation");
    if (t.sufficient && !t.invocations.empty())
        throw EngineError(ErrorCode::Precondition, "sufficient decision carries no invocations");
    entries_.emplace_back(t);
    last_thought_iteration_ = t.iteration;
    tail_ = t.sufficient ? Tail::thought_done : Tail::thought_tools;
}

void MemoryLog::append_action(const ActionEntry& a) {
    if (tail_ != Tail::thought_tools)
        throw EngineError(ErrorCode::Precondition, "action must follow a tools-decision thought");
    if (a.iteration != last_thought_iteration_)
        throw EngineError(ErrorCode::Precondition, "action iteration mismatch");
    const auto& t = std::get<ThoughtEntry>(entries_.back());
    if (a.invocations != t.invocations)
        throw EngineError(ErrorCode::Precondition,
                          "action invocations must equal the thought's invocations");
    entries_.emplace_back(a);
    tail_ = Tail::action;
}

void MemoryLog::append_observation(const ObservationEntry& o) {
    if (tail_ != Tail::action)
        throw EngineError(ErrorCode::Precondition, "observation must follow an action");
    const auto& a = std::get<ActionEntry>(entries_.back());
    if (o.iteration != a.iteration)
        throw EngineError(ErrorCode::Precondition, "observation iteration mismatch");
    if (o.outputs.size() != a.invocations.size())
        throw EngineError(ErrorCode::Precondition,
                          "observation needs one output per invocation");
    for (size_t i = 0; i < o.outputs.size(); ++i)
        if (!(o.outputs[i].invocation == a.invocations[i]))
            throw EngineError(ErrorCode::Precondition,
                              "observation outputs must answer the action's invocations in order");
    pending_validations_ = 0;
    for (const auto& out : o.outputs) pending_validations_ += out.statements.size();
    entries_.emplace_back(o);
    tail_ = Tail::observation;
}

void MemoryLog::append_validation(const ValidationRecord& r) {
    if (tail_ != Tail::observation && tail_ != Tail::validation)
        throw EngineError(ErrorCode::Precondition, "validation must follow an observation");
    if (pending_validations_ == 0)
        throw EngineError(ErrorCode::Precondition,
                          "more validations than statements in the last observation");
    --pending_validations_;
    entries_.emplace_back(r);
    tail_ = Tail::validation;
}

size_t MemoryLog::thought_count() const {
    size_t n = 0;
    for (const auto& e : entries_)
        if (std::holds_alternative<ThoughtEntry>(e)) ++n;
    return n;
}

size_t MemoryLog::validation_count() const {
    size_t n = 0;
    for (const auto& e : entries_)
        if (std::holds_alternative<ValidationRecord>(e)) ++n;
    return n;
}

std::vector<const ValidationRecord*> MemoryLog::validations() const {
    std::vector<const ValidationRecord*> out;
    for (const auto& e : entries_)
        if (const auto* v = std::get_if<ValidationRecord>(&e)) out.push_back(v);
    return out;
}

std::vector<std::pair<size_t, const ValidationRecord*>> MemoryLog::indexed_validations() const {
    std::vector<std::pair<size_t, const ValidationRecord*>> out;
    for (size_t i = 0; i < entries_.size(); ++i)
        if (const auto* v = std::get_if<ValidationRecord>(&entries_[i])) out.emplace_back(i, v);
    return out;
}

// ---------------------------------------------------------------------------
// transcript

namespace {

std::string render_entry(const LogEntry& entry) {
    std::ostringstream out;
    if (const auto* t = std::get_if<ThoughtEntry>(&entry)) {
        out << "[Iteration " << t->iteration << "] Thought: " << t->text << "\n";
        if (t->sufficient) {
            out << "Decision: evidence is sufficient.\n";
        } else {
            out << "Decision: consult ";
            for (size_t i = 0; i < t->invocations.size(); ++i) {
                if (i) out << ", ";
                out << t->invocations[i].tool_name;
            }
            out << ".\n";
        }
    } else if (const auto* a = std::get_if<ActionEntry>(&entry)) {
        out << "Action:\n";
        for (const auto& inv : a->invocations)
            out << "  " << inv.index_in_iteration << ". " << inv.tool_name << " <- \""
                << inv.question << "\"\n";
    } else if (const auto* o = std::get_if<ObservationEntry>(&entry)) {
        for (const auto& t2 : o->outputs) {
            out << "Observation (" << t2.invocation.tool_name << "): ";
            switch (t2.status) {
                case ToolStatus::ok: out << t2.raw_text; break;
                case ToolStatus::timeout: out << "[tool timed out]"; break;
                case ToolStatus::error: out << "[tool failed: " << t2.error_message << "]"; break;
            }
            out << "\n";
        }
    } else if (const auto* v = std::get_if<ValidationRecord>(&entry)) {
        out << "Validation of \"" << v->source_statement << "\" (" << v->source_tool
            << "): " << confidence_name(v->confidence);
        if (!v->conclusion.empty()) out << ". " << v->conclusion;
        if (!v->supportive.empty()) {
            out << " Supporting: ";
            for (size_t i = 0; i < v->supportive.size(); ++i) {
                if (i) out << "; ";
                out << v->supportive[i];
            }
            out << ".";
        }
        if (!v->refuting.empty()) {
            out << " Refuting: ";
            for (size_t i = 0; i < v->refuting.size(); ++i) {
                if (i) out << "; ";
                out << v->refuting[i];
            }
            out << ".";
        }
        out << "\n";
    }
    return out.str();
}

} // namespace

std::string render_transcript(const MemoryLog& log, size_t char_cap) {
    if (log.empty()) return "(no prior reasoning steps)\n";
    std::vector<std::string> rendered;
    rendered.reserve(log.size());
    for (const auto& e : log.entries()) rendered.push_back(render_entry(e));

    size_t total = 0;
    size_t first = rendered.size();
    while (first > 0 && total + rendered[first - 1].size() <= char_cap) {
        total += rendered[first - 1].size();
        --first;
    }
    if (first == rendered.size()) first = rendered.size() - 1; // always keep the newest entry

    std::string out;
    if (first > 0)
        out += "[... " + std::to_string(first) + " earlier log entries elided ...]\n";
    for (size_t i = first; i < rendered.size(); ++i) out += rendered[i];
    return out;
}

} // namespace cxrflow
