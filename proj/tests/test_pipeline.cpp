#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/test_support.hpp"

#include "cxrflow/fixtures.hpp"
#include "cxrflow/pipeline.hpp"

using namespace cxrflow;

namespace {

RunConfig config_at(Ablation a, int budget = 3) {
    RunConfig c;
    c.ablation = a;
    c.budget = budget;
    c.k_max = 4;
    c.tool_manifest = "<inline>";
    return c;
}

const char* kVerdict =
    "Conclusion: consistent with the image.\n"
    "Supporting evidence:\n- hazy basal opacity\n"
    "Contradicting evidence: none\n"
    "Confidence: plausible\n";

// A director that recognizes each prompt kind by its fixed phrasing and plays
// a scripted role: one tool round, then strategy/recruitment/answer.
std::shared_ptr<cxrtest::FnProvider> scripted_director(const std::string& strategy_reply,
                                                       const std::string& recruit_reply,
                                                       std::shared_ptr<int> think_calls) {
    return cxrtest::fn_provider([=](std::span<const ChatMessage> msgs) -> std::string {
        std::string all;
        for (const auto& m : msgs) all += m.content + '\n';
        if (all.find("Give the final answer now.") != std::string::npos)
            return "The basal opacity settles it.\nAnswer: B";
        if (all.find("exactly one word") != std::string::npos) return strategy_reply;
        if (all.find("at most") != std::string::npos) return recruit_reply;
        return ++*think_calls == 1
                   ? cxrtest::tools_thought("medgemma-4b", "Describe the lung bases.")
                   : cxrtest::sufficient_thought();
    });
}

struct Bench {
    std::shared_ptr<int> think_calls = std::make_shared<int>(0);
    std::shared_ptr<cxrtest::FnProvider> director;
    std::shared_ptr<cxrtest::FnProvider> edv;
    std::shared_ptr<cxrtest::FnProvider> members;
    std::shared_ptr<cxrtest::FnProvider> tool;
    Wiring wiring;

    explicit Bench(const std::string& strategy_reply = "skip",
                   const std::string& recruit_reply = "") {
        director = scripted_director(strategy_reply, recruit_reply, think_calls);
        edv = cxrtest::const_provider(kVerdict);
        members = cxrtest::const_provider("Focused read: organized basal opacity.");
        tool = cxrtest::const_provider("Hazy opacity at the left base.");
        wiring.director = cxrtest::handle(director);
        wiring.edv = cxrtest::handle(edv);
        wiring.members = cxrtest::handle(members);
        wiring.tools = cxrtest::registry_with({{"medgemma-4b", tool}});
    }
};

std::vector<std::string> stages_of(const RunTrace& t) {
    std::vector<std::string> out;
    for (const auto& e : t.events) out.push_back(stage_name(e.stage));
    return out;
}

size_t count_stage(const RunTrace& t, Stage s) {
    size_t n = 0;
    for (const auto& e : t.events) n += e.stage == s;
    return n;
}

} // namespace

TEST_CASE("ablation none goes straight to synthesis") {
    Bench b;
    auto trace = run_case(cxrtest::mc_case(), config_at(Ablation::none, 5), b.wiring);
    REQUIRE(trace.result.has_value());
    REQUIRE(trace.result->ok());
    CHECK(trace.result->diagnosis->chosen_option == "B");
    CHECK(stages_of(trace) == std::vector<std::string>{"provider-exchange", "synthesis"});
    CHECK(b.tool->calls() == 0);
    CHECK(b.edv->calls() == 0);
    CHECK(b.members->calls() == 0);
    CHECK_NOTHROW(check_gating(trace));
}

TEST_CASE("ablation tools reasons but never validates") {
    Bench b;
    auto trace = run_case(cxrtest::mc_case(), config_at(Ablation::tools), b.wiring);
    REQUIRE(trace.result->ok());
    CHECK(stages_of(trace) ==
          std::vector<std::string>{"provider-exchange", "thought", "action", "provider-exchange",
                                   "observation", "provider-exchange", "thought",
                                   "provider-exchange", "synthesis"});
    CHECK(b.tool->calls() == 1);
    CHECK(b.edv->calls() == 0);
    CHECK(b.members->calls() == 0);
    CHECK_NOTHROW(check_gating(trace));
}

TEST_CASE("ablation tools-edv adds validation and still no team") {
    Bench b;
    auto trace = run_case(cxrtest::mc_case(), config_at(Ablation::tools_edv), b.wiring);
    REQUIRE(trace.result->ok());
    CHECK(count_stage(trace, Stage::validation) == 1); // one statement observed
    CHECK(count_stage(trace, Stage::strategy) == 0);
    CHECK(count_stage(trace, Stage::member) == 0);
    CHECK(b.edv->calls() == 1);
    CHECK(b.members->calls() == 0);
    CHECK_NOTHROW(check_gating(trace));
}

TEST_CASE("a skip strategy consults nobody") {
    Bench b("skip");
    auto trace = run_case(cxrtest::mc_case(), config_at(Ablation::full), b.wiring);
    REQUIRE(trace.result->ok());
    CHECK(b.members->calls() == 0);
    CHECK(count_stage(trace, Stage::strategy) == 1);
    CHECK(count_stage(trace, Stage::recruitment) == 0);
    CHECK(count_stage(trace, Stage::member) == 0);
    for (const auto& e : trace.events)
        if (e.stage == Stage::strategy) {
            CHECK(e.payload.at("value") == "skip");
            CHECK(e.payload.at("fallback") == false);
        }
    CHECK(trace.flags.empty());
    CHECK_NOTHROW(check_gating(trace));
}

TEST_CASE("a dispatch strategy recruits and runs the team") {
    nlohmann::json plan{{"members",
                         {{{"role", "Pulmonologist"}, {"mission", "Grade the opacity."}},
                          {{"role", "Radiologist"}, {"mission", "Check the angles."}}}}};
    Bench b("dispatch", cxrtest::fenced_json(plan));
    auto trace = run_case(cxrtest::mc_case(), config_at(Ablation::full), b.wiring);
    REQUIRE(trace.result->ok());
    CHECK(b.members->calls() == 2);
    CHECK(count_stage(trace, Stage::recruitment) == 1);
    CHECK(count_stage(trace, Stage::member) == 2);
    for (const auto& e : trace.events) {
        if (e.stage == Stage::recruitment) CHECK(e.payload.at("members").size() == 2);
        if (e.stage == Stage::member) CHECK(e.payload.at("status") == "ok");
    }
    // member events keep recruitment order
    std::vector<std::string> roles;
    for (const auto& e : trace.events)
        if (e.stage == Stage::member) roles.push_back(e.payload.at("member").at("role"));
    CHECK(roles == std::vector<std::string>{"Pulmonologist", "Radiologist"});
    CHECK_NOTHROW(check_gating(trace));
}

TEST_CASE("an indecisive strategist falls back to relay and flags the run") {
    nlohmann::json plan{
        {"members", {{{"role", "Resident"}, {"mission", "Walk the findings."}}}}};
    Bench b("whatever seems best", cxrtest::fenced_json(plan));
    auto trace = run_case(cxrtest::mc_case(), config_at(Ablation::full), b.wiring);
    REQUIRE(trace.result->ok());
    CHECK(trace.flags == std::vector<std::string>{"strategy-fallback"});
    bool saw_strategy = false;
    for (const auto& e : trace.events)
        if (e.stage == Stage::strategy) {
            saw_strategy = true;
            CHECK(e.payload.at("value") == "relay");
            CHECK(e.payload.at("fallback") == true);
            CHECK(e.payload.at("raw") == "whatever seems best");
        }
    CHECK(saw_strategy);
    CHECK(count_stage(trace, Stage::member) == 1);
}

TEST_CASE("parse failures become documented results, not exceptions") {
    SUBCASE("an uncommitted synthesis") {
        Wiring w;
        w.director = cxrtest::handle(cxrtest::const_provider("no commitment here"));
        w.edv = w.director;
        w.members = w.director;
        auto trace = run_case(cxrtest::mc_case(), config_at(Ablation::none), w);
        REQUIRE(trace.result.has_value());
        REQUIRE_FALSE(trace.result->ok());
        CHECK(trace.result->error->code == "UnparseableAnswer");
        CHECK(trace.result->error->message.find("NoOption") != std::string::npos);
        CHECK(count_stage(trace, Stage::provider_exchange) == 2); // first try + repair
        CHECK(count_stage(trace, Stage::synthesis) == 0);
        CHECK_NOTHROW(check_gating(trace));
    }
    SUBCASE("a director that dies") {
        Wiring w;
        w.director = cxrtest::handle(cxrtest::fn_provider(
            [](std::span<const ChatMessage>) -> std::string {
                throw EngineError(ErrorCode::Timeout, "director timed out");
            }));
        w.edv = w.director;
        w.members = w.director;
        auto trace = run_case(cxrtest::binary_case(), config_at(Ablation::none), w);
        REQUIRE_FALSE(trace.result->ok());
        CHECK(trace.result->error->code == "Timeout");
        REQUIRE(count_stage(trace, Stage::provider_exchange) == 1);
        CHECK(trace.events[0].payload.at("ok") == false);
        CHECK(trace.events[0].payload.at("error_code") == "Timeout");
    }
    SUBCASE("a non-engine exception is documented as internal") {
        Wiring w;
        w.director = cxrtest::handle(cxrtest::fn_provider(
            [](std::span<const ChatMessage>) -> std::string {
                throw std::runtime_error("wire fell out");
            }));
        w.edv = w.director;
        w.members = w.director;
        auto trace = run_case(cxrtest::binary_case(), config_at(Ablation::none), w);
        REQUIRE_FALSE(trace.result->ok());
        CHECK(trace.result->error->code == "Internal");
        CHECK(trace.result->error->message == "wire fell out");
    }
}

TEST_CASE("the write-ahead file mirrors the returned trace") {
    cxrtest::TempDir dir;
    Bench b;
    RunOptions options;
    options.trace_path = dir.path() / "run.jsonl";
    auto trace = run_case(cxrtest::mc_case(), config_at(Ablation::tools), b.wiring, options);
    auto loaded = load_trace(*options.trace_path);
    std::string why;
    CHECK(traces_equal_modulo_time(trace, loaded, &why));
    CHECK(why.empty());
}

TEST_CASE("a replayed run reproduces its recording exactly") {
    nlohmann::json plan{{"members",
                         {{{"role", "Pulmonologist"}, {"mission", "Grade the opacity."}},
                          {{"role", "Radiologist"}, {"mission", "Check the angles."}}}}};
    Bench b("dispatch", cxrtest::fenced_json(plan));
    auto recorded = run_case(cxrtest::mc_case(), config_at(Ablation::full), b.wiring);
    REQUIRE(recorded.result->ok());

    SUBCASE("replay of the in-memory trace") {
        auto rerun = replay(recorded);
        std::string why;
        CHECK(traces_equal_modulo_time(rerun, recorded, &why));
        CHECK(why.empty());
    }
    SUBCASE("replay survives a save/load round trip") {
        cxrtest::TempDir dir;
        auto path = dir.path() / "rec.jsonl";
        save_trace(recorded, path);
        auto loaded = load_trace(path);
        auto rerun = replay(loaded, dir.path() / "replayed.jsonl");
        CHECK(traces_equal_modulo_time(rerun, loaded));
        // the replay's own trace file is loadable and equal too
        CHECK(traces_equal_modulo_time(load_trace(dir.path() / "replayed.jsonl"), recorded));
    }
    SUBCASE("any single-byte response mutation is caught") {
        size_t mutated_count = 0;
        for (size_t i = 0; i < recorded.events.size(); ++i) {
            if (recorded.events[i].stage != Stage::provider_exchange) continue;
            auto copy = recorded;
            std::string response = copy.events[i].payload.at("response");
            if (response.empty()) continue;
            response[0] = response[0] == 'X' ? 'Y' : 'X';
            copy.events[i].payload["response"] = response;
            ++mutated_count;
            try {
                replay(copy);
                FAIL("mutation of exchange at seq ", i, " went unnoticed");
            } catch (const EngineError& e) {
                CHECK(e.code() == ErrorCode::ReplayDivergence);
            }
        }
        CHECK(mutated_count >= 8); // director x5, tool, edv, members x2
    }
}

TEST_CASE("a recorded failure replays as the same failure") {
    Wiring w;
    w.director = cxrtest::handle(cxrtest::fn_provider(
        [](std::span<const ChatMessage>) -> std::string {
            throw EngineError(ErrorCode::Timeout, "director timed out");
        }));
    w.edv = w.director;
    w.members = w.director;
    auto recorded = run_case(cxrtest::binary_case(), config_at(Ablation::none), w);
    REQUIRE_FALSE(recorded.result->ok());

    auto rerun = replay(recorded);
    REQUIRE_FALSE(rerun.result->ok());
    CHECK(rerun.result->error->code == "Timeout");
    CHECK(rerun.result->error->message == recorded.result->error->message);
    CHECK(traces_equal_modulo_time(rerun, recorded));
}

TEST_CASE("every scenario stays inside its ablation gate at every level") {
    for (const auto& name : scenario_names()) {
        for (Ablation level : kAblationLevels) {
            CAPTURE(name);
            CAPTURE(ablation_name(level));
            auto scenario = load_scenario(name);
            scenario.config.ablation = level;
            auto trace = run_scenario(scenario);
            CHECK_NOTHROW(check_gating(trace));
            const auto& allowed = permitted_stages(level);
            for (const auto& e : trace.events)
                CHECK(std::find(allowed.begin(), allowed.end(), e.stage) != allowed.end());
            if (level != Ablation::full) {
                CHECK(count_stage(trace, Stage::strategy) == 0);
                CHECK(count_stage(trace, Stage::member) == 0);
            }
            if (level == Ablation::none) {
                CHECK(count_stage(trace, Stage::thought) == 0);
                CHECK(count_stage(trace, Stage::observation) == 0);
            }
            if (level == Ablation::tools) CHECK(count_stage(trace, Stage::validation) == 0);
            REQUIRE(trace.result.has_value());
        }
    }
}

TEST_CASE("wiring construction honours the config") {
    auto cfg = config_at(Ablation::full);
    SUBCASE("a forced script serves every role from one provider") {
        auto w = build_wiring(cfg, std::vector<ScriptEntry>{});
        CHECK(w.director.provider == w.edv.provider);
        CHECK(w.director.provider != nullptr);
        CHECK(w.tools.specs().empty()); // "<inline>" resolves no manifest
    }
    SUBCASE("bad configs are rejected before any wiring") {
        cfg.k_max = 0;
        CHECK_THROWS_AS(build_wiring(cfg, std::vector<ScriptEntry>{}), EngineError);
    }
}
