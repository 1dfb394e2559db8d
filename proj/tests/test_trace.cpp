#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/test_support.hpp"

using namespace cxrflow;

namespace {

TraceEvent event_at(uint64_t seq, Stage stage, nlohmann::json payload) {
    TraceEvent e;
    e.seq = seq;
    e.stage = stage;
    e.t_ms = static_cast<long>(seq * 10);
    e.payload = std::move(payload);
    return e;
}

RunTrace sample_trace() {
    RunTrace t;
    t.config.ablation = Ablation::full;
    t.config.budget = 3;
    t.config.tool_manifest = "<inline>";
    t.case_input = cxrtest::mc_case();
    t.tools = {cxrtest::tool_spec("medgemma-4b")};
    t.events = {
        event_at(0, Stage::provider_exchange, {{"role", "director"}, {"latency_ms", 12}}),
        event_at(1, Stage::thought, {{"text", "look closer"}}),
        event_at(2, Stage::action, {{"invocations", nlohmann::json::array()}}),
        event_at(3, Stage::observation, {{"outputs", nlohmann::json::array()}}),
        event_at(4, Stage::synthesis, {{"answer", "pneumonia"}}),
    };
    DiagnosisResult d;
    d.answer = "pneumonia";
    d.chosen_option = "B";
    d.task_kind = TaskKind::multiple_choice;
    d.rationale = "opacity pattern";
    d.cited_validations = {3};
    t.result = RunResult{d, std::nullopt};
    t.flags = {"edv-repair"};
    return t;
}

std::optional<ErrorCode> code_of(const std::function<void()>& f, long* line = nullptr) {
    try {
        f();
    } catch (const EngineError& e) {
        if (line) *line = e.line();
        return e.code();
    }
    return std::nullopt;
}

} // namespace

TEST_CASE("ablation levels name themselves") {
    for (Ablation a : kAblationLevels) CHECK(ablation_from_name(ablation_name(a)) == a);
    CHECK(std::string(ablation_name(Ablation::tools_edv)) == "tools-edv");
    CHECK_THROWS_AS(ablation_from_name("half"), EngineError);
}

TEST_CASE("each ablation level admits a widening set of stages") {
    auto allows = [](Ablation a, Stage s) {
        const auto& p = permitted_stages(a);
        return std::find(p.begin(), p.end(), s) != p.end();
    };
    CHECK(allows(Ablation::none, Stage::synthesis));
    CHECK(allows(Ablation::none, Stage::provider_exchange));
    CHECK_FALSE(allows(Ablation::none, Stage::thought));
    CHECK(allows(Ablation::tools, Stage::observation));
    CHECK_FALSE(allows(Ablation::tools, Stage::validation));
    CHECK(allows(Ablation::tools_edv, Stage::validation));
    CHECK_FALSE(allows(Ablation::tools_edv, Stage::member));
    for (Stage s : {Stage::thought, Stage::action, Stage::observation, Stage::validation,
                    Stage::strategy, Stage::recruitment, Stage::member, Stage::synthesis,
                    Stage::provider_exchange})
        CHECK(allows(Ablation::full, s));
    // each step up only adds stages
    const Ablation order[] = {Ablation::none, Ablation::tools, Ablation::tools_edv,
                              Ablation::full};
    for (size_t i = 1; i < 4; ++i)
        for (Stage s : permitted_stages(order[i - 1])) CHECK(allows(order[i], s));
}

TEST_CASE("run config validation and serde") {
    RunConfig c;
    CHECK_NOTHROW(c.validate());
    c.budget = -1;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::Config);
    c.budget = 0;
    c.k_max = 0;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::Config);

    RunConfig full;
    full.ablation = Ablation::tools_edv;
    full.budget = 7;
    full.k_max = 2;
    full.tool_manifest = "tools/manifest.json";
    full.seed = 99;
    full.flags = {"dry-run"};
    nlohmann::json j = full;
    CHECK(j.at("ablation") == "tools-edv");
    CHECK(j.get<RunConfig>() == full);
}

TEST_CASE("trace events serialize by stage name") {
    auto e = event_at(4, Stage::provider_exchange, {{"fp", "fp00"}});
    nlohmann::json j = e;
    CHECK(j.at("stage") == "provider-exchange");
    auto back = j.get<TraceEvent>();
    CHECK(back.seq == 4);
    CHECK(back.stage == Stage::provider_exchange);
    CHECK(back.payload == e.payload);
    j["stage"] = "daydream";
    CHECK(code_of([&] { j.get<TraceEvent>(); }) == ErrorCode::Corrupt);
}

TEST_CASE("strip_time_fields removes timing everywhere and nothing else") {
    nlohmann::json j{{"t_ms", 10},
                     {"latency_ms", 5},
                     {"kept", 1},
                     {"nested", {{"latency_ms", 7}, {"x", "y"}}},
                     {"list", nlohmann::json::array({{{"t_ms", 3}, {"z", 0}}})}};
    auto s = strip_time_fields(j);
    CHECK_FALSE(s.contains("t_ms"));
    CHECK_FALSE(s.contains("latency_ms"));
    CHECK(s.at("kept") == 1);
    CHECK_FALSE(s.at("nested").contains("latency_ms"));
    CHECK(s.at("nested").at("x") == "y");
    CHECK_FALSE(s.at("list")[0].contains("t_ms"));
    CHECK(s.at("list")[0].at("z") == 0);
}

TEST_CASE("recorder assigns sequence numbers and rejects gaps") {
    TraceRecorder rec(RunConfig{}, cxrtest::mc_case(), {});
    rec.emit(Stage::thought, {{"text", "a"}});
    rec.emit(Stage::action, {{"n", 1}});
    CHECK(rec.trace().events.size() == 2);
    CHECK(rec.trace().events[0].seq == 0);
    CHECK(rec.trace().events[1].seq == 1);

    CHECK(code_of([&] { rec.append(event_at(5, Stage::thought, {})); }) ==
          ErrorCode::SequenceGap);
    CHECK(code_of([&] { rec.append(event_at(1, Stage::thought, {})); }) ==
          ErrorCode::SequenceGap);

    rec.add_flag("edv-repair");
    rec.add_flag("edv-repair");
    CHECK(rec.trace().flags == std::vector<std::string>{"edv-repair"});

    rec.set_result(RunResult{std::nullopt, RunError{"Timeout", "slow"}});
    rec.finalize();
    CHECK(code_of([&] { rec.emit(Stage::thought, {}); }) == ErrorCode::Precondition);
}

TEST_CASE("a saved trace loads back equal modulo timing") {
    cxrtest::TempDir dir;
    auto trace = sample_trace();
    auto path = dir.path() / "run.jsonl";
    save_trace(trace, path);
    auto loaded = load_trace(path);
    std::string why;
    CHECK(traces_equal_modulo_time(trace, loaded, &why));
    CHECK(why.empty());
    CHECK(loaded.result->ok());
    CHECK(loaded.result->diagnosis->chosen_option == "B");
    CHECK(loaded.flags == trace.flags);

    SUBCASE("documented failures round-trip too") {
        trace.result = RunResult{std::nullopt, RunError{"UnparseableAnswer", "gave up"}};
        save_trace(trace, path);
        auto failed = load_trace(path);
        CHECK_FALSE(failed.result->ok());
        CHECK(failed.result->error->code == "UnparseableAnswer");
        CHECK(failed.result->error->message == "gave up");
    }
    SUBCASE("saving the loaded trace is byte-stable") {
        auto p2 = dir.path() / "again.jsonl";
        save_trace(loaded, p2);
        CHECK(cxrtest::read_file(path) == cxrtest::read_file(p2));
    }
}

TEST_CASE("the write-ahead file keeps a loadable prefix when a run dies") {
    cxrtest::TempDir dir;
    auto path = dir.path() / "crash.jsonl";
    {
        TraceRecorder rec(RunConfig{}, cxrtest::binary_case(), {}, path);
        rec.emit(Stage::thought, {{"text", "t"}});
        rec.emit(Stage::action, {{"n", 1}});
        // no set_result, no finalize: the run "crashed" here
    }
    auto loaded = load_trace(path);
    CHECK(loaded.events.size() == 2);
    CHECK_FALSE(loaded.result.has_value());
    CHECK(loaded.case_input.id == "bin-1");
}

TEST_CASE("truncation after any event leaves the prefix loadable") {
    cxrtest::TempDir dir;
    auto trace = sample_trace();
    auto full = dir.path() / "full.jsonl";
    save_trace(trace, full);
    std::istringstream lines(cxrtest::read_file(full));
    std::vector<std::string> all;
    for (std::string line; std::getline(lines, line);) all.push_back(line);
    REQUIRE(all.size() == trace.events.size() + 2); // header + events + result

    for (size_t n = 0; n <= trace.events.size(); ++n) {
        std::string prefix;
        for (size_t i = 0; i < 1 + n; ++i) prefix += all[i] + "\n";
        auto p = dir.file("cut.jsonl");
        cxrtest::write_file(p, prefix);
        auto loaded = load_trace(p);
        CHECK(loaded.events.size() == n);
        CHECK_FALSE(loaded.result.has_value());
        for (size_t i = 0; i < n; ++i) CHECK(loaded.events[i].stage == trace.events[i].stage);
    }
}

TEST_CASE("structural damage names the offending line") {
    cxrtest::TempDir dir;
    auto trace = sample_trace();
    auto full = dir.path() / "full.jsonl";
    save_trace(trace, full);
    std::istringstream lines(cxrtest::read_file(full));
    std::vector<std::string> all;
    for (std::string line; std::getline(lines, line);) all.push_back(line);

    long line = -1;
    SUBCASE("a torn final line") {
        std::string torn = all[0] + "\n" + all[1] + "\n" +
                           all[2].substr(0, all[2].size() / 2);
        auto p = dir.file("torn.jsonl");
        cxrtest::write_file(p, torn);
        CHECK(code_of([&] { load_trace(p); }, &line) == ErrorCode::Corrupt);
        CHECK(line == 3);
    }
    SUBCASE("an out-of-order event") {
        std::string shuffled = all[0] + "\n" + all[2] + "\n" + all[1] + "\n";
        auto p = dir.file("order.jsonl");
        cxrtest::write_file(p, shuffled);
        CHECK(code_of([&] { load_trace(p); }, &line) == ErrorCode::Corrupt);
        CHECK(line == 2);
    }
    SUBCASE("records after the result line") {
        std::string extra = all[0] + "\n" + all.back() + "\n" + all[1] + "\n";
        auto p = dir.file("extra.jsonl");
        cxrtest::write_file(p, extra);
        CHECK(code_of([&] { load_trace(p); }, &line) == ErrorCode::Corrupt);
        CHECK(line == 3);
    }
    SUBCASE("a non-header first line") {
        auto p = dir.file("headless.jsonl");
        cxrtest::write_file(p, all[1] + "\n");
        CHECK(code_of([&] { load_trace(p); }, &line) == ErrorCode::Corrupt);
        CHECK(line == 1);
    }
    SUBCASE("an empty file") {
        auto p = dir.file("empty.jsonl");
        cxrtest::write_file(p, "");
        CHECK(code_of([&] { load_trace(p); }, &line) == ErrorCode::Corrupt);
        CHECK(line == 1);
    }
    SUBCASE("a future schema") {
        nlohmann::json header = nlohmann::json::parse(all[0]);
        header["schema"] = "cxrflow-trace/9";
        auto p = dir.file("future.jsonl");
        cxrtest::write_file(p, header.dump() + "\n");
        CHECK(code_of([&] { load_trace(p); }) == ErrorCode::SchemaVersionMismatch);
    }
}

TEST_CASE("trace equality ignores timing and nothing else") {
    auto a = sample_trace();
    auto b = sample_trace();
    std::string why;
    SUBCASE("timing differences are invisible") {
        for (auto& e : b.events) e.t_ms += 1000;
        b.events[0].payload["latency_ms"] = 9999;
        CHECK(traces_equal_modulo_time(a, b, &why));
    }
    SUBCASE("payload differences are named") {
        b.events[1].payload["text"] = "look away";
        CHECK_FALSE(traces_equal_modulo_time(a, b, &why));
        CHECK(why.find("seq 1") != std::string::npos);
        CHECK(why.find("thought") != std::string::npos);
    }
    SUBCASE("stage differences are named") {
        b.events[1].stage = Stage::observation;
        CHECK_FALSE(traces_equal_modulo_time(a, b, &why));
        CHECK(why.find("stage differs at seq 1") != std::string::npos);
    }
    SUBCASE("missing events are counted") {
        b.events.pop_back();
        CHECK_FALSE(traces_equal_modulo_time(a, b, &why));
        CHECK(why.find("event count") != std::string::npos);
    }
    SUBCASE("flags participate") {
        b.flags.push_back("strategy-fallback");
        CHECK_FALSE(traces_equal_modulo_time(a, b, &why));
    }
    SUBCASE("results participate") {
        b.result->diagnosis->answer = "pneumothorax";
        CHECK_FALSE(traces_equal_modulo_time(a, b, &why));
        CHECK(why == "result differs");
    }
}

TEST_CASE("gating admits only the stages an ablation level owns") {
    auto trace = sample_trace();
    SUBCASE("a full-pipeline trace passes") { CHECK_NOTHROW(check_gating(trace)); }
    SUBCASE("team stages are rejected below full") {
        trace.config.ablation = Ablation::tools_edv;
        trace.events.push_back(event_at(5, Stage::member, {{"role", "x"}}));
        try {
            check_gating(trace);
            FAIL("expected Precondition");
        } catch (const EngineError& e) {
            CHECK(e.code() == ErrorCode::Precondition);
            CHECK(std::string(e.what()).find("member") != std::string::npos);
            CHECK(std::string(e.what()).find("tools-edv") != std::string::npos);
        }
    }
    SUBCASE("reasoning stages are rejected at level none") {
        trace.config.ablation = Ablation::none;
        CHECK(code_of([&] { check_gating(trace); }) == ErrorCode::Precondition);
    }
    SUBCASE("a successful run needs exactly one synthesis event") {
        trace.events.pop_back(); // drop the synthesis event
        CHECK(code_of([&] { check_gating(trace); }) == ErrorCode::Precondition);
        trace.events.push_back(event_at(4, Stage::synthesis, {}));
        trace.events.push_back(event_at(5, Stage::synthesis, {}));
        CHECK(code_of([&] { check_gating(trace); }) == ErrorCode::Precondition);
    }
    SUBCASE("a failed run may have none") {
        trace.events.pop_back();
        trace.result = RunResult{std::nullopt, RunError{"Timeout", "slow"}};
        CHECK_NOTHROW(check_gating(trace));
    }
}

TEST_CASE("replay verification flags the first divergence") {
    auto reference = sample_trace();
    TraceRecorder rec(reference.config, reference.case_input, reference.tools);
    rec.verify_against(reference);

    SUBCASE("a faithful re-run passes, result included") {
        for (const auto& e : reference.events) rec.emit(e.stage, e.payload);
        rec.set_result(*reference.result);
        for (const auto& f : reference.flags) rec.add_flag(f);
        CHECK_NOTHROW(rec.finalize());
    }
    SUBCASE("a changed payload diverges at its sequence number") {
        rec.emit(reference.events[0].stage, reference.events[0].payload);
        try {
            rec.emit(Stage::thought, {{"text", "look elsewhere"}});
            FAIL("expected ReplayDivergence");
        } catch (const EngineError& e) {
            CHECK(e.code() == ErrorCode::ReplayDivergence);
            CHECK(std::string(e.what()).find("seq 1") != std::string::npos);
        }
    }
    SUBCASE("timing may differ freely") {
        auto e0 = reference.events[0];
        e0.payload["latency_ms"] = 987654;
        CHECK_NOTHROW(rec.emit(e0.stage, e0.payload));
    }
    SUBCASE("extra events diverge") {
        for (const auto& e : reference.events) rec.emit(e.stage, e.payload);
        CHECK(code_of([&] { rec.emit(Stage::thought, {{"text", "one more"}}); }) ==
              ErrorCode::ReplayDivergence);
    }
    SUBCASE("missing events surface at finalize") {
        rec.emit(reference.events[0].stage, reference.events[0].payload);
        rec.set_result(*reference.result);
        for (const auto& f : reference.flags) rec.add_flag(f);
        CHECK(code_of([&] { rec.finalize(); }) == ErrorCode::ReplayDivergence);
    }
    SUBCASE("a different result diverges") {
        for (const auto& e : reference.events) rec.emit(e.stage, e.payload);
        auto result = *reference.result;
        result.diagnosis->answer = "pneumothorax";
        rec.set_result(result);
        for (const auto& f : reference.flags) rec.add_flag(f);
        CHECK(code_of([&] { rec.finalize(); }) == ErrorCode::ReplayDivergence);
    }
}
