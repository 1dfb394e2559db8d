#include "cxrflow/team.hpp"

#include <chrono>
#include <future>

#include "cxrflow/react.hpp"

namespace cxrflow {

const char* member_status_name(MemberStatus s) {
    return s == MemberStatus::ok ? "ok" : "error";
}

MemberStatus member_status_from_name(const std::string& name) {
    if (name == "ok") return MemberStatus::ok;
    if (name == "error") return MemberStatus::error;
    throw EngineError(ErrorCode::Corrupt, "unknown member status: " + name);
}

const char* team_output_kind_name(TeamOutputKind k) {
    switch (k) {
        case TeamOutputKind::none: return "none";
        case TeamOutputKind::relay_final: return "relay-final";
        case TeamOutputKind::aggregate: return "aggregate";
    }
    return "none";
}

void to_json(nlohmann::json& j, const MemberResult& r) {
    j = nlohmann::json{{"member", r.member},
                       {"status", member_status_name(r.status)},
                       {"prompt_fingerprint", r.prompt_fingerprint},
                       {"latency_ms", r.latency_ms}};
    if (r.status == MemberStatus::ok) {
        j["text"] = r.text;
        j["backend"] = r.backend;
    } else {
        j["error_message"] = r.error_message;
        j["error_code"] = r.error_code;
    }
}

void from_json(const nlohmann::json& j, MemberResult& r) {
    j.at("member").get_to(r.member);
    r.status = member_status_from_name(j.at("status").get<std::string>());
    r.text = j.value("text", std::string());
    r.error_message = j.value("error_message", std::string());
    r.error_code = j.value("error_code", std::string());
    r.prompt_fingerprint = j.value("prompt_fingerprint", std::string());
    r.backend = j.value("backend", std::string());
    r.latency_ms = j.value("latency_ms", 0L);
}

// ---------------------------------------------------------------------------

std::vector<ChatMessage> render_member_prompt(const TeamMember& member, const CaseInput& c,
                                              const std::optional<std::string>& prior) {
    std::vector<ChatMessage> msgs;
    msgs.push_back({Role::system,
                    "You are a " + member.role +
                        " consulting on a chest X-ray case. Your mission: " + member.mission +
                        "\nGive a focused analysis: concrete image findings and their "
                        "diagnostic significance. Be direct about negative findings.",
                    {}});
    std::string user = case_presentation(c);
    if (prior) {
        user += "\nYour colleague's analysis so far:\n" + *prior +
                "\nBuild on it: confirm, correct, or extend it.";
    }
    msgs.push_back({Role::user, user, c.images});
    return msgs;
}

MemberResult member_call(const TeamMember& member, const CaseInput& c,
                         const std::optional<std::string>& prior, const ProviderHandle& members,
                         ExchangeLog* exchanges) {
    const auto msgs = render_member_prompt(member, c, prior);
    MemberResult result;
    result.member = member;
    result.prompt_fingerprint = fingerprint(msgs);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        ProviderResponse resp = logged_complete(members, msgs, "member", "", exchanges);
        result.text = resp.content;
        result.status = MemberStatus::ok;
        result.backend = backend_kind_name(resp.backend);
        result.latency_ms = resp.latency_ms;
    } catch (const EngineError& e) {
        result.status = MemberStatus::error;
        result.error_message = e.what();
        result.error_code = error_code_name(e.code());
        result.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
    }
    return result;
}

TeamOutput execute(const TeamPlan& plan, const CaseInput& c, const ProviderHandle& members,
                   size_t concurrency, EventSink* sink) {
    TeamOutput out;
    if (plan.strategy == Strategy::skip) {
        out.kind = TeamOutputKind::none;
        return out;
    }
    if (plan.members.empty())
        throw EngineError(ErrorCode::Precondition,
                          "non-skip plan must recruit at least one member");

    ProviderHandle handle{members.provider, plan.member_provider};
    if (!handle.provider)
        throw EngineError(ErrorCode::Precondition, "team execution needs a member provider");

    if (plan.strategy == Strategy::relay) {
        out.kind = TeamOutputKind::relay_final;
        std::optional<std::string> prior; // r0: the first member starts from nothing
        for (const auto& member : plan.members) {
            ExchangeLog xlog;
            MemberResult r = member_call(member, c, prior, handle, &xlog);
            emit_exchanges(sink, xlog);
            if (sink) sink->emit(Stage::member, nlohmann::json(r));
            if (r.status == MemberStatus::ok) prior = r.text; // failed links drop out of the chain
            out.transcript.push_back(std::move(r));
        }
        return out;
    }

    // dispatch / probe: concurrent fan-out, deterministic aggregation order
    out.kind = TeamOutputKind::aggregate;
    struct Task {
        ExchangeLog exchanges;
        MemberResult result;
    };
    std::vector<Task> tasks(plan.members.size());
    auto run_one = [&](size_t i) {
        tasks[i].result =
            member_call(plan.members[i], c, std::nullopt, handle, &tasks[i].exchanges);
    };
    if (concurrency == 1) {
        for (size_t i = 0; i < tasks.size(); ++i) run_one(i);
    } else {
        const size_t cap = concurrency == 0 ? tasks.size() : concurrency;
        for (size_t batch = 0; batch < tasks.size(); batch += cap) {
            std::vector<std::future<void>> futures;
            const size_t end = std::min(batch + cap, tasks.size());
            for (size_t i = batch; i < end; ++i)
                futures.push_back(std::async(std::launch::async, [&run_one, i] { run_one(i); }));
            for (auto& f : futures) f.get();
        }
    }
    for (auto& task : tasks) {
        emit_exchanges(sink, task.exchanges);
        if (sink) sink->emit(Stage::member, nlohmann::json(task.result));
        out.transcript.push_back(std::move(task.result));
    }
    return out;
}

std::string concat_team_output(const TeamOutput& output) {
    auto render_one = [](const MemberResult& r) {
        std::string block = "— " + r.member.role + " (mission: " + r.member.mission + ") —\n";
        if (r.status == MemberStatus::ok)
            block += r.text;
        else
            block += "[consultant unavailable: " + r.error_message + "]";
        return block;
    };
    if (output.kind == TeamOutputKind::none || output.transcript.empty()) return "";
    if (output.kind == TeamOutputKind::relay_final) return render_one(output.transcript.back());
    std::string out;
    for (size_t i = 0; i < output.transcript.size(); ++i) {
        if (i) out += "\n\n";
        out += render_one(output.transcript[i]);
    }
    return out;
}

} // namespace cxrflow
