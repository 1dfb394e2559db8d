#pragma once

#include <optional>

#include "cxrflow/events.hpp"
#include "cxrflow/planner.hpp"

namespace cxrflow {

enum class MemberStatus { ok, error };
const char* member_status_name(MemberStatus s);
MemberStatus member_status_from_name(const std::string& name);

struct MemberResult {
    TeamMember member;
    std::string text; // the consultant's analysis (empty on error)
    MemberStatus status = MemberStatus::ok;
    std::string error_message;
    std::string error_code;
    std::string prompt_fingerprint; // fingerprint of the prompt this member saw
    std::string backend;
    long latency_ms = 0;
};

void to_json(nlohmann::json& j, const MemberResult& r);
void from_json(const nlohmann::json& j, MemberResult& r);

enum class TeamOutputKind { none, relay_final, aggregate };
const char* team_output_kind_name(TeamOutputKind k);

struct TeamOutput {
    TeamOutputKind kind = TeamOutputKind::none;
    std::vector<MemberResult> transcript; // recruitment order

    // relay_final: the last member's result
    const MemberResult* final_result() const {
        return kind == TeamOutputKind::relay_final && !transcript.empty() ? &transcript.back()
                                                                          : nullptr;
    }
};

// Deterministic text block for synthesis: every transcript entry under a
// "— <role> (mission: <mission>) —" header, in recruitment order.
std::string concat_team_output(const TeamOutput& output);

std::vector<ChatMessage> render_member_prompt(const TeamMember& member, const CaseInput& c,
                                              const std::optional<std::string>& prior);

// One provider call for one member. Backend failures land in status/error
// fields; the pipeline treats a failed consultant as absent, not fatal.
MemberResult member_call(const TeamMember& member, const CaseInput& c,
                         const std::optional<std::string>& prior, const ProviderHandle& members,
                         ExchangeLog* exchanges);

// Executes the plan: skip -> none without any call; relay -> sequential
// chain, each member seeing the previous member's reply (first sees none);
// dispatch/probe -> concurrent fan-out (capped at `concurrency` threads when
// nonzero), aggregated in recruitment order regardless of completion order.
// Emits member events plus exchange records to `sink` in recruitment order.
TeamOutput execute(const TeamPlan& plan, const CaseInput& c, const ProviderHandle& members,
                   size_t concurrency, EventSink* sink);

} // namespace cxrflow
