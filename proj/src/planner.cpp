#include "cxrflow/planner.hpp"

#include <cctype>
#include <optional>

namespace cxrflow {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

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

const char* kModeRubric =
    "Collaboration modes:\n"
    "- Skip: the imaging findings and reasoning log already answer the question directly; no "
    "consultation is needed.\n"
    "- Relay: the question is well-defined and benefits from one deepening line of analysis; "
    "consultants work one after another, each refining the previous colleague's assessment.\n"
    "- Dispatch: the question has several distinct facets (regions, organ systems, candidate "
    "conditions); consultants with different specialties work in parallel, each on their own "
    "facet.\n"
    "- Probe: the case is complex or ambiguous and the current reading must be stress-tested; "
    "consultants independently challenge it, hunting for overlooked or contradictory "
    "evidence.\n";

} // namespace

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::skip: return "skip";
        case Strategy::relay: return "relay";
        case Strategy::dispatch: return "dispatch";
        case Strategy::probe: return "probe";
    }
    return "skip";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "skip") return Strategy::skip;
    if (name == "relay") return Strategy::relay;
    if (name == "dispatch") return Strategy::dispatch;
    if (name == "probe") return Strategy::probe;
    throw EngineError(ErrorCode::Corrupt, "unknown strategy: " + name);
}

void to_json(nlohmann::json& j, const TeamMember& m) {
    j = nlohmann::json{
        {"agent_id", m.agent_id}, {"role", m.role}, {"mission", m.mission}, {"index", m.index}};
}

void from_json(const nlohmann::json& j, TeamMember& m) {
    j.at("agent_id").get_to(m.agent_id);
    j.at("role").get_to(m.role);
    j.at("mission").get_to(m.mission);
    m.index = j.value("index", 1);
}

void to_json(nlohmann::json& j, const TeamPlan& p) {
    j = nlohmann::json{{"strategy", strategy_name(p.strategy)},
                       {"members", p.members},
                       {"member_provider", p.member_provider}};
}

void from_json(const nlohmann::json& j, TeamPlan& p) {
    p.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    p.members.clear();
    if (j.contains("members")) j.at("members").get_to(p.members);
    if (j.contains("member_provider")) j.at("member_provider").get_to(p.member_provider);
}

// ---------------------------------------------------------------------------
// strategy selection

std::vector<ChatMessage> render_strategy_prompt(const CaseInput& c, const MemoryLog& log) {
    std::vector<ChatMessage> msgs;
    msgs.push_back({Role::system,
                    std::string("You are the director of a chest X-ray diagnostic team. Your "
                                "initial reasoning is complete; decide how a team of consultant "
                                "specialists should now collaborate on this case.\n\n") +
                        kModeRubric +
                        "\nReply with exactly one word: Skip, Relay, Dispatch, or Probe.",
                    {}});
    msgs.push_back({Role::user,
                    case_presentation(c) + "\nReasoning log so far:\n" + render_transcript(log) +
                        "\nWhich collaboration mode fits this case?",
                    c.images});
    return msgs;
}

namespace {

// Exactly one distinct mode token (word-boundary, case-insensitive) -> that
// mode; zero or several -> no parse.
std::optional<Strategy> parse_strategy_reply(const std::string& reply) {
    std::string lower;
    lower.reserve(reply.size());
    for (char ch : reply) {
        unsigned char c = static_cast<unsigned char>(ch);
        lower += std::isalpha(c) ? static_cast<char>(std::tolower(c)) : ' ';
    }
    struct Entry {
        const char* token;
        Strategy value;
    };
    static const Entry kEntries[] = {{"skip", Strategy::skip},
                                     {"relay", Strategy::relay},
                                     {"dispatch", Strategy::dispatch},
                                     {"probe", Strategy::probe}};
    std::optional<Strategy> found;
    for (const auto& e : kEntries) {
        const std::string token = std::string(" ") + e.token + " ";
        const std::string padded = " " + lower + " ";
        if (padded.find(token) == std::string::npos) continue;
        if (found) return std::nullopt; // ambiguous
        found = e.value;
    }
    return found;
}

} // namespace

StrategyChoice select_strategy(const CaseInput& c, const MemoryLog& log,
                               const ProviderHandle& director, ExchangeLog* exchanges) {
    const auto msgs = render_strategy_prompt(c, log);
    ProviderResponse resp = logged_complete(director, msgs, "director", "", exchanges);
    if (auto s = parse_strategy_reply(resp.content))
        return StrategyChoice{*s, false, resp.content};

    auto repair = msgs;
    repair.push_back({Role::assistant, resp.content, {}});
    repair.push_back({Role::user,
                      "Your reply did not name exactly one mode. Answer with a single word: "
                      "Skip, Relay, Dispatch, or Probe.",
                      {}});
    ProviderResponse retry = logged_complete(director, repair, "director", "", exchanges);
    if (auto s = parse_strategy_reply(retry.content))
        return StrategyChoice{*s, false, retry.content};
    return StrategyChoice{Strategy::relay, true, retry.content};
}

// ---------------------------------------------------------------------------
// recruitment

std::vector<ChatMessage> render_recruit_prompt(const CaseInput& c, const MemoryLog& log,
                                               Strategy strategy, int k_max) {
    const char* mission_hint = "";
    switch (strategy) {
        case Strategy::relay:
            mission_hint = "Missions form an ordered chain: each consultant deepens and refines "
                           "the previous one's assessment.";
            break;
        case Strategy::dispatch:
            mission_hint = "Missions cover distinct facets of the case; consultants work in "
                           "parallel and must not overlap.";
            break;
        case Strategy::probe:
            mission_hint = "Missions independently stress-test the current reading; each "
                           "consultant hunts for evidence that could overturn it.";
            break;
        case Strategy::skip:
            break;
    }
    std::vector<ChatMessage> msgs;
    msgs.push_back({Role::system,
                    "You are the director of a chest X-ray diagnostic team, recruiting "
                    "consultant specialists for the chosen collaboration mode: " +
                        std::string(strategy_name(strategy)) + ". " + mission_hint +
                        "\nRecruit at most " + std::to_string(k_max) +
                        " consultants. Reply with a single fenced JSON block:\n"
                        "```json\n"
                        "{\"members\": [{\"role\": \"<specialty>\", \"mission\": \"<what this "
                        "consultant must examine>\"}]}\n"
                        "```",
                    {}});
    msgs.push_back({Role::user,
                    case_presentation(c) + "\nReasoning log so far:\n" + render_transcript(log) +
                        "\nRecruit the team.",
                    c.images});
    return msgs;
}

namespace {

std::optional<std::vector<TeamMember>> parse_recruit_reply(const std::string& reply,
                                                           std::string& error) {
    const std::string candidate = extract_fenced_block(reply).value_or(trim(reply));
    nlohmann::json j = nlohmann::json::parse(candidate, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        error = "reply is not a JSON object";
        return std::nullopt;
    }
    if (!j.contains("members") || !j["members"].is_array() || j["members"].empty()) {
        error = "missing non-empty 'members' array";
        return std::nullopt;
    }
    std::vector<TeamMember> members;
    for (const auto& m : j["members"]) {
        if (!m.is_object() || !m.contains("role") || !m["role"].is_string() ||
            trim(m["role"].get<std::string>()).empty() || !m.contains("mission") ||
            !m["mission"].is_string() || trim(m["mission"].get<std::string>()).empty()) {
            error = "each member needs non-empty string 'role' and 'mission'";
            return std::nullopt;
        }
        TeamMember member;
        member.role = trim(m["role"].get<std::string>());
        member.mission = trim(m["mission"].get<std::string>());
        if (m.contains("agent_id") && m["agent_id"].is_string())
            member.agent_id = trim(m["agent_id"].get<std::string>());
        member.index = static_cast<int>(members.size()) + 1;
        if (member.agent_id.empty()) member.agent_id = "member-" + std::to_string(member.index);
        members.push_back(std::move(member));
    }
    return members;
}

} // namespace

TeamPlan recruit(const CaseInput& c, const MemoryLog& log, Strategy strategy,
                 const ProviderHandle& director, int k_max, const ProviderConfig& member_config,
                 ExchangeLog* exchanges) {
    if (k_max < 1)
        throw EngineError(ErrorCode::Precondition, "k_max must be >= 1");
    TeamPlan plan;
    plan.strategy = strategy;
    plan.member_provider = member_config;
    if (strategy == Strategy::skip) return plan; // no call, no team

    const auto msgs = render_recruit_prompt(c, log, strategy, k_max);
    ProviderResponse resp = logged_complete(director, msgs, "director", "", exchanges);
    std::string error;
    auto members = parse_recruit_reply(resp.content, error);
    if (!members) {
        auto repair = msgs;
        repair.push_back({Role::assistant, resp.content, {}});
        repair.push_back({Role::user,
                          "Your reply could not be used (" + error +
                              "). Respond again with exactly one fenced JSON block: {\"members\": "
                              "[{\"role\": ..., \"mission\": ...}]}.",
                          {}});
        ProviderResponse retry = logged_complete(director, repair, "director", "", exchanges);
        members = parse_recruit_reply(retry.content, error);
        if (!members)
            throw EngineError(ErrorCode::UnparseablePlan,
                              "recruitment unparseable after repair retry: " + error);
    }
    if (static_cast<int>(members->size()) > k_max) members->resize(static_cast<size_t>(k_max));
    plan.members = std::move(*members);
    return plan;
}

} // namespace cxrflow
