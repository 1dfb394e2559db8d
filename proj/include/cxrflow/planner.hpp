#pragma once

#include "cxrflow/memory.hpp"

namespace cxrflow {

// Collaboration modes, in fixed rubric order.
enum class Strategy { skip, relay, dispatch, probe };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct StrategyChoice {
    Strategy value = Strategy::relay;
    bool fallback = false; // true when unparseable replies forced the relay default
    std::string raw;       // the director's final reply, for audit
};

struct TeamMember {
    std::string agent_id;
    std::string role;    // e.g. "Thoracic Specialist"
    std::string mission; // what this member must examine
    int index = 1;       // 1-based recruitment order
};

void to_json(nlohmann::json& j, const TeamMember& m);
void from_json(const nlohmann::json& j, TeamMember& m);

struct TeamPlan {
    Strategy strategy = Strategy::skip;
    std::vector<TeamMember> members;  // empty iff strategy == skip
    ProviderConfig member_provider;   // config every member call uses
};

void to_json(nlohmann::json& j, const TeamPlan& p);
void from_json(const nlohmann::json& j, TeamPlan& p);

std::vector<ChatMessage> render_strategy_prompt(const CaseInput& c, const MemoryLog& log);
std::vector<ChatMessage> render_recruit_prompt(const CaseInput& c, const MemoryLog& log,
                                               Strategy strategy, int k_max);

// Single-token strategy selection with one repair retry; persistently
// unparseable replies fall back to relay with the fallback flag set (never an
// exception — a degraded run beats a dead one here).
StrategyChoice select_strategy(const CaseInput& c, const MemoryLog& log,
                               const ProviderHandle& director, ExchangeLog* exchanges);

// Team recruitment for the chosen mode. skip short-circuits with zero
// provider calls. Parses {"members": [{"role", "mission"}...]} from a fenced
// JSON reply, clamps to k_max (first k_max kept), one repair retry, then
// EngineError{UnparseablePlan}.
TeamPlan recruit(const CaseInput& c, const MemoryLog& log, Strategy strategy,
                 const ProviderHandle& director, int k_max, const ProviderConfig& member_config,
                 ExchangeLog* exchanges);

} // namespace cxrflow
